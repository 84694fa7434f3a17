//! Backward/forward sweep power flow for radial networks with
//! constant-power loads and constant-power-factor DG injections.
//!
//! The backward pass accumulates branch currents from the leaves to the
//! root, the forward pass propagates voltage drops from the root outward,
//! and the two repeat until the largest per-bus voltage change falls
//! under tolerance.

use crate::netmodel::{BusId, Network};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Any bus voltage magnitude under this floor is treated as an infeasible
/// operating point rather than a solvable state.
pub const COLLAPSE_FLOOR: f64 = 0.3;

/// Micro-source category. PV runs at unity power factor; the others hold
/// a constant lagging/leading factor set per unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgKind {
    Pv,
    Wind,
    #[serde(rename = "mt")]
    MicroTurbine,
}

impl fmt::Display for DgKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DgKind::Pv => "pv",
            DgKind::Wind => "wind",
            DgKind::MicroTurbine => "mt",
        };
        f.write_str(s)
    }
}

impl FromStr for DgKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pv" => Ok(DgKind::Pv),
            "wind" => Ok(DgKind::Wind),
            "mt" | "microturbine" | "micro_turbine" => Ok(DgKind::MicroTurbine),
            other => Err(format!("unknown DG kind '{other}'")),
        }
    }
}

/// A micro-source modeled as real power at constant power factor.
/// `sign` selects reactive injection (+1) or absorption (-1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgUnit {
    pub kind: DgKind,
    pub bus: BusId,
    /// Real power in per-unit, >= 0.
    pub p_size: f64,
    pub pf: f64,
    pub sign: i8,
}

impl DgUnit {
    /// PV units are pinned to unity power factor regardless of `pf`.
    pub fn new(kind: DgKind, bus: BusId, p_size: f64, pf: f64, sign: i8) -> Self {
        let pf = if kind == DgKind::Pv { 1.0 } else { pf };
        DgUnit {
            kind,
            bus,
            p_size,
            pf,
            sign,
        }
    }

    pub fn effective_pf(&self) -> f64 {
        if self.kind == DgKind::Pv {
            1.0
        } else {
            self.pf
        }
    }

    /// Complex injection `p + j·sign·p·tan(acos(pf))` in per-unit.
    pub fn injection_pu(&self) -> Complex64 {
        let a = f64::from(self.sign) * tan_acos(self.effective_pf());
        Complex64::new(self.p_size, self.p_size * a)
    }
}

/// `tan(cos⁻¹(pf))`, the reactive-to-real ratio at a given power factor.
pub fn tan_acos(pf: f64) -> f64 {
    pf.acos().tan()
}

#[derive(Debug, Error)]
pub enum LoadFlowError {
    #[error("load flow did not converge within {max_iter} iterations")]
    NonConvergence { max_iter: usize },
    #[error("voltage collapse at bus {bus} (|V| = {vm:.4} p.u.) in sweep {iteration}")]
    VoltageCollapse {
        bus: BusId,
        vm: f64,
        iteration: usize,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Root bus voltage magnitude, angle zero.
    pub slack_v: f64,
    /// Convergence threshold on the largest per-bus |ΔV|.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            slack_v: 1.0,
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

/// Converged (or flagged) state of one load-flow run. Branch-indexed
/// vectors align with `Network::branches()`.
#[derive(Debug, Clone)]
pub struct LoadFlowSolution {
    pub v: Vec<Complex64>,
    pub i_branch: Vec<Complex64>,
    pub p_loss_branch: Vec<f64>,
    pub q_loss_branch: Vec<f64>,
    pub p_loss_total: f64,
    pub q_loss_total: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LoadFlowSolution {
    pub fn vm(&self, index: usize) -> f64 {
        self.v[index].norm()
    }
}

/// Runs the sweep. A run that exhausts `max_iter` comes back `Ok` with
/// `converged = false` so that optimizers can price the point instead of
/// aborting; only a voltage below [`COLLAPSE_FLOOR`] is a hard error.
pub fn solve(
    network: &Network,
    dg_units: &[DgUnit],
    opts: &SolveOptions,
) -> Result<LoadFlowSolution, LoadFlowError> {
    assert!(opts.tol > 0.0, "tolerance must be positive");
    assert!(opts.max_iter >= 1, "max_iter must be at least 1");
    let n = network.n_buses();
    for dg in dg_units {
        assert!(
            dg.bus.get() >= 1 && dg.bus.get() <= n,
            "DG bus {} outside 1..={n}",
            dg.bus
        );
    }

    // Net consumption per bus: load minus DG injection.
    let mut s_net: Vec<Complex64> = (0..n).map(|i| network.s_load_pu(i)).collect();
    for dg in dg_units {
        s_net[dg.bus.index()] -= dg.injection_pu();
    }

    let slack = Complex64::new(opts.slack_v, 0.0);
    let mut v = vec![slack; n];
    // Current in the branch feeding each bus, parent-to-bus direction.
    let mut i_up = vec![Complex64::new(0.0, 0.0); n];

    let mut iterations = 0;
    let mut converged = false;
    for sweep in 1..=opts.max_iter {
        iterations = sweep;

        // Backward: leaves toward root. Children precede parents in the
        // reversed depth order, so their branch currents are current.
        for &bus in network.depth_order().iter().rev() {
            let mut current = (s_net[bus] / v[bus]).conj();
            for &child in network.children_of(bus) {
                current += i_up[child];
            }
            i_up[bus] = current;
        }

        // Forward: root outward.
        let mut max_dv = 0.0f64;
        for &bus in network.depth_order() {
            let parent = network.parent_of(bus).expect("non-root bus has a parent");
            let v_new = v[parent] - network.z_up_pu(bus) * i_up[bus];
            max_dv = max_dv.max((v_new - v[bus]).norm());
            v[bus] = v_new;
            let vm = v_new.norm();
            if vm < COLLAPSE_FLOOR {
                return Err(LoadFlowError::VoltageCollapse {
                    bus: BusId::from_index(bus),
                    vm,
                    iteration: sweep,
                });
            }
        }

        if max_dv < opts.tol {
            converged = true;
            break;
        }
    }

    let branches = network.branches();
    let mut i_branch = Vec::with_capacity(branches.len());
    let mut p_loss_branch = Vec::with_capacity(branches.len());
    let mut q_loss_branch = Vec::with_capacity(branches.len());
    let mut p_loss_total = 0.0;
    let mut q_loss_total = 0.0;
    for br in branches {
        let to = br.to.index();
        let current = i_up[to];
        let z = network.z_up_pu(to);
        let sq = current.norm_sqr();
        let p = sq * z.re;
        let q = sq * z.im;
        i_branch.push(current);
        p_loss_branch.push(p);
        q_loss_branch.push(q);
        p_loss_total += p;
        q_loss_total += q;
    }

    Ok(LoadFlowSolution {
        v,
        i_branch,
        p_loss_branch,
        q_loss_branch,
        p_loss_total,
        q_loss_total,
        iterations,
        converged,
    })
}

/// Total real loss for a DG placement: the fitness kernel. A run that
/// fails to converge propagates as [`LoadFlowError::NonConvergence`].
pub fn objective(network: &Network, dg_units: &[DgUnit]) -> Result<f64, LoadFlowError> {
    let opts = SolveOptions::default();
    let sol = solve(network, dg_units, &opts)?;
    if !sol.converged {
        return Err(LoadFlowError::NonConvergence {
            max_iter: opts.max_iter,
        });
    }
    Ok(sol.p_loss_total)
}

/// Bus with the smallest voltage magnitude. The root is skipped unless it
/// is the only bus; ties go to the lowest bus id.
pub fn min_voltage(solution: &LoadFlowSolution) -> (BusId, f64) {
    if solution.v.len() == 1 {
        return (BusId::from_index(0), solution.vm(0));
    }
    let mut best = 1;
    for i in 2..solution.v.len() {
        if solution.vm(i) < solution.vm(best) {
            best = i;
        }
    }
    (BusId::from_index(best), solution.vm(best))
}

/// Complex power fed from the root into the branches, per-unit. Load or
/// DG attached at the root itself is served at the source terminal and
/// does not appear here.
pub fn slack_injection(network: &Network, solution: &LoadFlowSolution) -> Complex64 {
    let root = network.root();
    let mut current = Complex64::new(0.0, 0.0);
    for (br, i) in network.branches().iter().zip(&solution.i_branch) {
        if br.from.index() == root {
            current += i;
        }
    }
    solution.v[root] * current.conj()
}
