//! Radial network data model: dataset ingestion, per-unit conversion and
//! topology validation.
//!
//! The dataset format is a two-section comma-separated text file:
//! a `#BUS` header followed by `id,p_load_kW,q_load_kVAr` rows, then a
//! `#BRANCH` header followed by `from,to,r_ohm,x_ohm[,i_rated_A]` rows.
//! Any other line starting with `#` is a comment.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// 1-based bus number as it appears in the dataset.
///
/// Ids are validated contiguous `1..=N`, so `index()` maps straight into
/// per-bus vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(usize);

impl BusId {
    pub fn new(id: usize) -> Self {
        assert!(id >= 1, "bus ids are 1-based");
        BusId(id)
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// Zero-based position in per-bus vectors.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(index: usize) -> Self {
        BusId(index + 1)
    }
}

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A bus row from the dataset, physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusRecord {
    pub id: BusId,
    pub p_load_kw: f64,
    pub q_load_kvar: f64,
}

/// A branch row from the dataset, physical units. `i_rated_a` is the
/// optional feeder ampacity; when absent the branch-current constraint
/// is skipped for this branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchRecord {
    pub from: BusId,
    pub to: BusId,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub i_rated_a: Option<f64>,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("network is not radial: {0}")]
    NotRadial(String),
    #[error("bus {0} is not reachable from the root")]
    Disconnected(BusId),
    #[error("duplicate bus id {0}")]
    DuplicateBusId(BusId),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Parent/child structure of a validated radial network, rooted at bus 1.
#[derive(Debug, Clone)]
pub struct Topology {
    /// Parent bus index per bus index; `None` for the root.
    pub parent_of: Vec<Option<usize>>,
    /// Child bus indices per bus index, ascending.
    pub children_of: Vec<Vec<usize>>,
    /// Non-root bus indices ordered root-outward: parents always precede
    /// their children.
    pub depth_order: Vec<usize>,
}

/// Immutable radial network in per-unit quantities.
///
/// Safe to share across concurrent readers; construction validates
/// radiality, connectivity and id contiguity.
#[derive(Debug, Clone)]
pub struct Network {
    buses: Vec<BusRecord>,
    branches: Vec<BranchRecord>,
    v_base_kv: f64,
    s_base_mva: f64,
    s_load_pu: Vec<Complex64>,
    // Upstream branch quantities, indexed by the branch's to-bus index.
    z_up_pu: Vec<Complex64>,
    i_rated_up_pu: Vec<Option<f64>>,
    topology: Topology,
}

impl Network {
    /// Validates records and converts them to per-unit on the given bases.
    pub fn from_records(
        buses: Vec<BusRecord>,
        branches: Vec<BranchRecord>,
        v_base_kv: f64,
        s_base_mva: f64,
    ) -> Result<Self, NetworkError> {
        if buses.is_empty() {
            return Err(NetworkError::MalformedRecord("dataset has no buses".into()));
        }
        let n = buses.len();

        let mut seen = vec![false; n];
        for bus in &buses {
            let id = bus.id.get();
            if id < 1 || id > n {
                return Err(NetworkError::MalformedRecord(format!(
                    "bus ids must be contiguous 1..={n}, found {id}"
                )));
            }
            if seen[id - 1] {
                return Err(NetworkError::DuplicateBusId(bus.id));
            }
            seen[id - 1] = true;
            if bus.p_load_kw < 0.0 {
                return Err(NetworkError::MalformedRecord(format!(
                    "bus {id}: negative real load"
                )));
            }
            if !bus.p_load_kw.is_finite() || !bus.q_load_kvar.is_finite() {
                return Err(NetworkError::MalformedRecord(format!(
                    "bus {id}: non-finite load"
                )));
            }
        }

        // Store bus rows by id so vectors index by id-1.
        let mut ordered = buses.clone();
        ordered.sort_by_key(|b| b.id);

        for br in &branches {
            for end in [br.from, br.to] {
                if end.get() < 1 || end.get() > n {
                    return Err(NetworkError::MalformedRecord(format!(
                        "branch {}-{}: unknown bus {}",
                        br.from, br.to, end
                    )));
                }
            }
            if br.r_ohm < 0.0 || br.x_ohm < 0.0 {
                return Err(NetworkError::MalformedRecord(format!(
                    "branch {}-{}: negative impedance",
                    br.from, br.to
                )));
            }
            if br.r_ohm == 0.0 && br.x_ohm == 0.0 {
                return Err(NetworkError::MalformedRecord(format!(
                    "branch {}-{}: r and x are both zero",
                    br.from, br.to
                )));
            }
        }

        let topology = build_topology(&ordered, &branches)?;

        let bases_ok = v_base_kv > 0.0 && s_base_mva > 0.0;
        if !bases_ok {
            return Err(NetworkError::MalformedRecord(
                "voltage and power bases must be positive".into(),
            ));
        }
        let z_base = z_base_ohm(v_base_kv, s_base_mva);
        let i_base = i_base_a(v_base_kv, s_base_mva);

        let s_load_pu = ordered
            .iter()
            .map(|b| Complex64::new(b.p_load_kw, b.q_load_kvar) / (s_base_mva * 1e3))
            .collect();

        let mut z_up_pu = vec![Complex64::new(0.0, 0.0); n];
        let mut i_rated_up_pu = vec![None; n];
        for br in &branches {
            z_up_pu[br.to.index()] = Complex64::new(br.r_ohm, br.x_ohm) / z_base;
            i_rated_up_pu[br.to.index()] = br.i_rated_a.map(|a| a / i_base);
        }

        Ok(Network {
            buses: ordered,
            branches,
            v_base_kv,
            s_base_mva,
            s_load_pu,
            z_up_pu,
            i_rated_up_pu,
            topology,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Root (slack) bus index. Bus 1 by construction.
    pub fn root(&self) -> usize {
        0
    }

    pub fn buses(&self) -> &[BusRecord] {
        &self.buses
    }

    pub fn branches(&self) -> &[BranchRecord] {
        &self.branches
    }

    pub fn v_base_kv(&self) -> f64 {
        self.v_base_kv
    }

    pub fn s_base_mva(&self) -> f64 {
        self.s_base_mva
    }

    pub fn z_base_ohm(&self) -> f64 {
        z_base_ohm(self.v_base_kv, self.s_base_mva)
    }

    /// Per-unit complex load at a bus index.
    pub fn s_load_pu(&self, index: usize) -> Complex64 {
        self.s_load_pu[index]
    }

    /// Per-unit impedance of the branch feeding `index` (zero for the root).
    pub fn z_up_pu(&self, index: usize) -> Complex64 {
        self.z_up_pu[index]
    }

    /// Per-unit ampacity of the branch feeding `index`, when the dataset
    /// carries one.
    pub fn i_rated_up_pu(&self, index: usize) -> Option<f64> {
        self.i_rated_up_pu[index]
    }

    pub fn parent_of(&self, index: usize) -> Option<usize> {
        self.topology.parent_of[index]
    }

    pub fn children_of(&self, index: usize) -> &[usize] {
        &self.topology.children_of[index]
    }

    pub fn depth_order(&self) -> &[usize] {
        &self.topology.depth_order
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Sum of bus loads in kW / kVAr, before per-unit scaling.
    pub fn total_load_kw(&self) -> (f64, f64) {
        let p = self.buses.iter().map(|b| b.p_load_kw).sum();
        let q = self.buses.iter().map(|b| b.q_load_kvar).sum();
        (p, q)
    }
}

fn z_base_ohm(v_base_kv: f64, s_base_mva: f64) -> f64 {
    (v_base_kv * 1e3).powi(2) / (s_base_mva * 1e6)
}

fn i_base_a(v_base_kv: f64, s_base_mva: f64) -> f64 {
    s_base_mva * 1e6 / (3f64.sqrt() * v_base_kv * 1e3)
}

/// Per-unit load totals `(P, Q, S)` with `S = sqrt(P² + Q²)`.
pub fn total_load(network: &Network) -> (f64, f64, f64) {
    let p: f64 = (0..network.n_buses()).map(|i| network.s_load_pu(i).re).sum();
    let q: f64 = (0..network.n_buses()).map(|i| network.s_load_pu(i).im).sum();
    (p, q, p.hypot(q))
}

/// Builds parent pointers, child lists and a root-outward bus order for a
/// radial branch list rooted at bus 1. Bus numbering order is not assumed;
/// the structure is derived from the edges alone.
pub fn build_topology(
    buses: &[BusRecord],
    branches: &[BranchRecord],
) -> Result<Topology, NetworkError> {
    let n = buses.len();
    let root = 0usize;

    let mut parent_of: Vec<Option<usize>> = vec![None; n];
    for br in branches {
        let from = br.from.index();
        let to = br.to.index();
        if from == to {
            return Err(NetworkError::NotRadial(format!(
                "self-loop at bus {}",
                br.from
            )));
        }
        if to == root {
            return Err(NetworkError::NotRadial(
                "root bus 1 has an incoming branch".into(),
            ));
        }
        if parent_of[to].is_some() {
            return Err(NetworkError::NotRadial(format!(
                "bus {} is fed by more than one branch",
                br.to
            )));
        }
        parent_of[to] = Some(from);
    }

    let mut children_of: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (to, parent) in parent_of.iter().enumerate() {
        if let Some(p) = parent {
            children_of[*p].push(to);
        }
    }
    for children in &mut children_of {
        children.sort_unstable();
    }

    // Breadth-first from the root; parents always land before children.
    let mut depth_order = Vec::with_capacity(n.saturating_sub(1));
    let mut visited = vec![false; n];
    visited[root] = true;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(bus) = queue.pop_front() {
        for &child in &children_of[bus] {
            visited[child] = true;
            depth_order.push(child);
            queue.push_back(child);
        }
    }

    for (idx, seen) in visited.iter().enumerate() {
        if !seen {
            return match parent_of[idx] {
                // Every ancestor exists but the chain never reaches the
                // root, so the unvisited buses sit on a cycle.
                Some(_) => Err(NetworkError::NotRadial(format!(
                    "cycle detected involving bus {}",
                    BusId::from_index(idx)
                ))),
                None => Err(NetworkError::Disconnected(BusId::from_index(idx))),
            };
        }
    }

    Ok(Topology {
        parent_of,
        children_of,
        depth_order,
    })
}

/// Parses the two-section dataset format from a string.
pub fn parse_network(text: &str, v_base_kv: f64, s_base_mva: f64) -> Result<Network, NetworkError> {
    #[derive(PartialEq)]
    enum Section {
        Preamble,
        Bus,
        Branch,
    }

    let mut section = Section::Preamble;
    let mut buses = Vec::new();
    let mut branches = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        if let Some(tag) = line.strip_prefix('#') {
            match tag.trim() {
                "BUS" => section = Section::Bus,
                "BRANCH" => section = Section::Branch,
                _ => {} // comment
            }
            continue;
        }

        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match section {
            Section::Preamble => {
                return Err(NetworkError::MalformedRecord(format!(
                    "line {lineno}: data before a #BUS or #BRANCH header"
                )));
            }
            Section::Bus => {
                if fields.len() != 3 {
                    return Err(NetworkError::MalformedRecord(format!(
                        "line {lineno}: expected id,p_load_kW,q_load_kVAr"
                    )));
                }
                let id: usize = parse_field(fields[0], lineno, "bus id")?;
                if id < 1 {
                    return Err(NetworkError::MalformedRecord(format!(
                        "line {lineno}: bus id must be >= 1"
                    )));
                }
                buses.push(BusRecord {
                    id: BusId::new(id),
                    p_load_kw: parse_field(fields[1], lineno, "p_load_kW")?,
                    q_load_kvar: parse_field(fields[2], lineno, "q_load_kVAr")?,
                });
            }
            Section::Branch => {
                if fields.len() != 4 && fields.len() != 5 {
                    return Err(NetworkError::MalformedRecord(format!(
                        "line {lineno}: expected from,to,r_ohm,x_ohm[,i_rated_A]"
                    )));
                }
                let from: usize = parse_field(fields[0], lineno, "from bus")?;
                let to: usize = parse_field(fields[1], lineno, "to bus")?;
                if from < 1 || to < 1 {
                    return Err(NetworkError::MalformedRecord(format!(
                        "line {lineno}: bus ids must be >= 1"
                    )));
                }
                let i_rated_a = match fields.get(4) {
                    Some(f) => Some(parse_field(f, lineno, "i_rated_A")?),
                    None => None,
                };
                branches.push(BranchRecord {
                    from: BusId::new(from),
                    to: BusId::new(to),
                    r_ohm: parse_field(fields[2], lineno, "r_ohm")?,
                    x_ohm: parse_field(fields[3], lineno, "x_ohm")?,
                    i_rated_a,
                });
            }
        }
    }

    Network::from_records(buses, branches, v_base_kv, s_base_mva)
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    lineno: usize,
    what: &str,
) -> Result<T, NetworkError> {
    field.parse().map_err(|_| {
        NetworkError::MalformedRecord(format!("line {lineno}: cannot parse {what} from '{field}'"))
    })
}

/// Loads and validates a dataset file, returning the per-unit network.
pub fn load_network<P: AsRef<Path>>(
    path: P,
    v_base_kv: f64,
    s_base_mva: f64,
) -> Result<Network, NetworkError> {
    let text = std::fs::read_to_string(path)?;
    parse_network(&text, v_base_kv, s_base_mva)
}
