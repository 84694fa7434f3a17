//! Shared test oracles, all independent of the sweep implementation they
//! check: a closed-form two-bus solution, a Gauss-Seidel nodal solver on
//! the admittance matrix, random radial network generators, and a
//! load-scaling collapse probe.

#![allow(dead_code)]

use num_complex::Complex64;
use rdsmg::loadflow::{slack_injection, solve, DgUnit, LoadFlowSolution, SolveOptions};
use rdsmg::netmodel::{total_load, BranchRecord, BusId, BusRecord, Network};
use rand::Rng;

/// Closed-form complex voltage at the load bus of a single-branch feeder
/// with one constant-power load: the high-voltage root of
/// `u² - (|V1|² - 2(rP+xQ))·u + (r²+x²)(P²+Q²) = 0` with `u = |V2|²`,
/// then `V2 = conj((u + z·S*) / V1)`.
pub fn two_bus_exact(r: f64, x: f64, p: f64, q: f64, slack: f64) -> Option<Complex64> {
    let a = slack * slack - 2.0 * (r * p + x * q);
    let disc = a * a - 4.0 * (r * r + x * x) * (p * p + q * q);
    if disc < 0.0 {
        return None;
    }
    let u = (a + disc.sqrt()) / 2.0;
    let z = Complex64::new(r, x);
    let s = Complex64::new(p, q);
    Some(((Complex64::new(u, 0.0) + z * s.conj()) / Complex64::new(slack, 0.0)).conj())
}

pub struct NodalSolution {
    pub v: Vec<Complex64>,
    pub p_loss: f64,
    pub q_loss: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Gauss-Seidel fixed point of the exact nodal equations
/// `V_i = (1/Y_ii)·[(S_i/V_i)* - Σ_{j≠i} Y_ij·V_j]` with the root held at
/// the slack voltage. Sparse row storage keeps the 33-bus case cheap.
pub fn nodal_fixed_point(
    network: &Network,
    dg_units: &[DgUnit],
    slack_v: f64,
    tol: f64,
    max_sweeps: usize,
) -> NodalSolution {
    let n = network.n_buses();

    let mut diag = vec![Complex64::new(0.0, 0.0); n];
    let mut neighbors: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
    for br in network.branches() {
        let f = br.from.index();
        let t = br.to.index();
        let y = Complex64::new(1.0, 0.0) / network.z_up_pu(t);
        diag[f] += y;
        diag[t] += y;
        neighbors[f].push((t, -y));
        neighbors[t].push((f, -y));
    }

    let mut s_inj: Vec<Complex64> = (0..n).map(|i| -network.s_load_pu(i)).collect();
    for dg in dg_units {
        s_inj[dg.bus.index()] += dg.injection_pu();
    }

    let mut v = vec![Complex64::new(slack_v, 0.0); n];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_dv = 0.0f64;
        for i in 1..n {
            let mut rhs = (s_inj[i] / v[i]).conj();
            for &(j, y) in &neighbors[i] {
                rhs -= y * v[j];
            }
            let v_new = rhs / diag[i];
            max_dv = max_dv.max((v_new - v[i]).norm());
            v[i] = v_new;
        }
        if max_dv < tol {
            converged = true;
            break;
        }
    }

    let mut p_loss = 0.0;
    let mut q_loss = 0.0;
    for br in network.branches() {
        let f = br.from.index();
        let t = br.to.index();
        let z = network.z_up_pu(t);
        let current = (v[f] - v[t]) / z;
        p_loss += current.norm_sqr() * z.re;
        q_loss += current.norm_sqr() * z.im;
    }

    NodalSolution {
        v,
        p_loss,
        q_loss,
        sweeps,
        converged,
    }
}

/// Random radial network on 1 kV / 1 MVA bases (ohms and kW read directly
/// as per-unit). Bus `i` attaches to a uniformly random earlier bus, so
/// ids are contiguous and parents precede children.
pub fn random_radial_network(rng: &mut impl Rng, n_buses: usize) -> Network {
    let buses = (1..=n_buses)
        .map(|id| BusRecord {
            id: BusId::new(id),
            p_load_kw: if id == 1 { 0.0 } else { rng.gen_range(0.0..120.0) },
            q_load_kvar: if id == 1 { 0.0 } else { rng.gen_range(0.0..60.0) },
        })
        .collect();
    let branches = (2..=n_buses)
        .map(|id| BranchRecord {
            from: BusId::new(rng.gen_range(1..id)),
            to: BusId::new(id),
            r_ohm: rng.gen_range(0.005..0.08),
            x_ohm: rng.gen_range(0.005..0.08),
            i_rated_a: None,
        })
        .collect();
    Network::from_records(buses, branches, 1.0, 1.0).unwrap()
}

/// Uniform feeder chain on 1 kV / 1 MVA bases.
pub fn chain_network(n_buses: usize, p_kw: f64, q_kvar: f64, r_ohm: f64, x_ohm: f64) -> Network {
    let buses = (1..=n_buses)
        .map(|id| BusRecord {
            id: BusId::new(id),
            p_load_kw: if id == 1 { 0.0 } else { p_kw },
            q_load_kvar: if id == 1 { 0.0 } else { q_kvar },
        })
        .collect();
    let branches = (1..n_buses)
        .map(|i| BranchRecord {
            from: BusId::new(i),
            to: BusId::new(i + 1),
            r_ohm,
            x_ohm,
            i_rated_a: None,
        })
        .collect();
    Network::from_records(buses, branches, 1.0, 1.0).unwrap()
}

pub fn ieee33() -> Network {
    let text = include_str!("../../data/ieee33.csv");
    rdsmg::netmodel::parse_network(text, 12.66, 100.0).unwrap()
}

/// Checks `P_root + ΣP_dg - ΣP_load - P_loss ≈ 0` (and the reactive twin)
/// to within ten solver tolerances. Load or DG attached at the root bus
/// itself sits on the source terminal and never crosses a branch, so it
/// stays out of the feeder balance.
pub fn assert_power_balance(
    network: &Network,
    dg_units: &[DgUnit],
    solution: &LoadFlowSolution,
    tol: f64,
) {
    let injected = slack_injection(network, solution);
    let root = network.root();
    let (p_load, q_load, _) = total_load(network);
    let p_load = p_load - network.s_load_pu(root).re;
    let q_load = q_load - network.s_load_pu(root).im;
    let p_dg: f64 = dg_units
        .iter()
        .filter(|u| u.bus.index() != root)
        .map(|u| u.injection_pu().re)
        .sum();
    let q_dg: f64 = dg_units
        .iter()
        .filter(|u| u.bus.index() != root)
        .map(|u| u.injection_pu().im)
        .sum();
    let p_residual = injected.re + p_dg - p_load - solution.p_loss_total;
    let q_residual = injected.im + q_dg - q_load - solution.q_loss_total;
    assert!(
        p_residual.abs() <= 10.0 * tol,
        "real power imbalance {p_residual}"
    );
    assert!(
        q_residual.abs() <= 10.0 * tol,
        "reactive power imbalance {q_residual}"
    );
}

/// Largest factor the bus's own load can be scaled by before the sweep
/// stops converging cleanly: a brute-force per-bus loadability margin.
/// Bisection between the last good and first bad scale.
pub fn collapse_scale_for_bus(network: &Network, bus: BusId, opts: &SolveOptions) -> f64 {
    let feasible = |scale: f64| -> bool {
        let buses: Vec<BusRecord> = network
            .buses()
            .iter()
            .map(|b| {
                if b.id == bus {
                    BusRecord {
                        id: b.id,
                        p_load_kw: b.p_load_kw * scale,
                        q_load_kvar: b.q_load_kvar * scale,
                    }
                } else {
                    *b
                }
            })
            .collect();
        let scaled = Network::from_records(
            buses,
            network.branches().to_vec(),
            network.v_base_kv(),
            network.s_base_mva(),
        )
        .unwrap();
        matches!(solve(&scaled, &[], opts), Ok(sol) if sol.converged)
    };

    let mut lo = 1.0;
    let mut hi = 2.0;
    while feasible(hi) && hi < 1e6 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
