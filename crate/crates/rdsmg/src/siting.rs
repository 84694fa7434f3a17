//! Per-bus maximum loadability index and weak-bus ranking.
//!
//! The index measures the extra apparent power a bus can carry through its
//! upstream branch before voltage instability; the smallest margin marks
//! the weakest bus and therefore the best micro-source candidate.

use crate::loadflow::LoadFlowSolution;
use crate::netmodel::{BusId, Network};

/// Outcome of the index evaluation at one bus. Degenerate cases map to an
/// infinite margin so they never win a weak-bus ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MliValue {
    Finite(f64),
    /// Zero local load: the index is undefined, an unloaded bus is never
    /// a weak-bus winner.
    DegenerateLoad,
    /// x·P = r·Q with nonzero cross products: the denominator vanishes.
    Collinear,
}

impl MliValue {
    /// Finite value, or the +inf sentinel for degenerate cases.
    pub fn as_f64(&self) -> f64 {
        match self {
            MliValue::Finite(v) => *v,
            _ => f64::INFINITY,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !matches!(self, MliValue::Finite(_))
    }
}

/// Loadability index of one bus from its sending-end voltage magnitude,
/// upstream branch impedance and local load, all per-unit.
///
/// The denominator is evaluated as `2·(x·P − r·Q)²`, which is algebraically
/// equal to the expanded `2·[(r²+x²)(P²+Q²) − (r·P + x·Q)²]` but does not
/// cancel catastrophically near collinearity.
pub fn mli_for_bus(v_p: f64, r: f64, x: f64, p_j: f64, q_j: f64) -> MliValue {
    if p_j == 0.0 && q_j == 0.0 {
        return MliValue::DegenerateLoad;
    }

    let xp = x * p_j;
    let rq = r * q_j;
    let root = xp - rq;
    if root == 0.0 {
        // Both cross products zero means a single-axis load over a
        // single-axis impedance; the numerator cancels identically and
        // the margin sits at zero. Anything else is a true degeneracy.
        if xp == 0.0 {
            return MliValue::Finite(0.0);
        }
        return MliValue::Collinear;
    }

    let dot = r * p_j + x * q_j;
    let zs = ((r * r + x * x) * (p_j * p_j + q_j * q_j)).sqrt();
    let numerator = (v_p * v_p * (zs - dot)).max(0.0);
    let denominator = 2.0 * root * root;

    #[cfg(debug_assertions)]
    {
        let expanded = 2.0 * (zs * zs - dot * dot);
        let scale = (zs * zs).max(dot * dot);
        // Skip the comparison where the expanded form has lost most of
        // its digits to cancellation.
        if denominator > 1e-9 * scale {
            let rel = (expanded - denominator).abs() / denominator;
            debug_assert!(rel < 1e-6, "denominator forms disagree: rel {rel}");
        }
    }

    MliValue::Finite(numerator / denominator)
}

/// Per-bus index values and the weak-bus ordering.
#[derive(Debug, Clone)]
pub struct MliRanking {
    /// Index value per bus index; the root and degenerate buses carry +inf.
    pub mli: Vec<f64>,
    /// Non-root bus ids, weakest (smallest index) first; ties by bus id.
    pub order: Vec<BusId>,
    /// First `k` entries of `order`.
    pub candidates: Vec<BusId>,
    /// Buses whose index degenerated to the sentinel.
    pub degenerate: Vec<BusId>,
}

/// Evaluates the index at every non-root bus of a converged base case and
/// selects the `k` weakest as placement candidates.
///
/// Each bus uses only its upstream branch impedance, its own load, and the
/// parent-bus voltage magnitude from `base_solution`; the index is a local
/// two-bus margin, not a path-accumulated one.
pub fn rank_buses(network: &Network, base_solution: &LoadFlowSolution, k: usize) -> MliRanking {
    let n = network.n_buses();
    assert!(base_solution.converged, "ranking needs a converged base case");
    assert!(k >= 1 && k < n, "k must be in 1..={}", n - 1);

    let mut mli = vec![f64::INFINITY; n];
    let mut degenerate = Vec::new();
    for (bus, slot) in mli.iter_mut().enumerate().skip(1) {
        let parent = network.parent_of(bus).expect("non-root bus has a parent");
        let v_p = base_solution.vm(parent);
        let z = network.z_up_pu(bus);
        let s = network.s_load_pu(bus);
        let value = mli_for_bus(v_p, z.re, z.im, s.re, s.im);
        if value.is_degenerate() {
            degenerate.push(BusId::from_index(bus));
        }
        *slot = value.as_f64();
    }

    let mut order: Vec<BusId> = (1..n).map(BusId::from_index).collect();
    order.sort_by(|a, b| {
        mli[a.index()]
            .partial_cmp(&mli[b.index()])
            .unwrap()
            .then(a.cmp(b))
    });
    let candidates = order[..k].to_vec();

    MliRanking {
        mli,
        order,
        candidates,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loadflow::{solve, SolveOptions};
    use crate::netmodel::{BranchRecord, BusRecord, Network};

    #[test]
    fn symmetric_degeneracy_is_collinear() {
        let v = mli_for_bus(1.0, 0.2, 0.2, 0.5, 0.5);
        assert_eq!(v, MliValue::Collinear);
        assert!(v.as_f64().is_infinite());
    }

    #[test]
    fn pure_reactive_load_over_pure_reactance_has_zero_margin() {
        let v = mli_for_bus(1.0, 0.0, 0.1, 0.0, 1.0);
        assert_eq!(v, MliValue::Finite(0.0));
    }

    #[test]
    fn zero_load_is_degenerate() {
        let v = mli_for_bus(1.0, 0.1, 0.1, 0.0, 0.0);
        assert_eq!(v, MliValue::DegenerateLoad);
        assert!(v.as_f64().is_infinite());
    }

    #[test]
    fn scale_property_spot_check() {
        let base = mli_for_bus(1.0, 0.03, 0.08, 0.4, 0.1).as_f64();
        for c in [0.5, 2.0, 7.0] {
            let scaled = mli_for_bus(1.0, 0.03, 0.08, 0.4 * c, 0.1 * c).as_f64();
            assert!(
                (scaled - base / c).abs() < 1e-12 * base,
                "c={c}: {scaled} vs {}",
                base / c
            );
        }
    }

    fn uniform_chain(n: usize) -> Network {
        let buses = (1..=n)
            .map(|id| BusRecord {
                id: BusId::new(id),
                p_load_kw: if id == 1 { 0.0 } else { 200.0 },
                q_load_kvar: if id == 1 { 0.0 } else { 100.0 },
            })
            .collect();
        let branches = (1..n)
            .map(|i| BranchRecord {
                from: BusId::new(i),
                to: BusId::new(i + 1),
                r_ohm: 0.03,
                x_ohm: 0.02,
                i_rated_a: None,
            })
            .collect();
        Network::from_records(buses, branches, 1.0, 1.0).unwrap()
    }

    #[test]
    fn uniform_chain_ranks_deepest_first() {
        let net = uniform_chain(6);
        let sol = solve(&net, &[], &SolveOptions::default()).unwrap();
        let ranking = rank_buses(&net, &sol, 5);
        // Identical branch and load everywhere: only |V_parent| varies, so
        // the margin shrinks with depth.
        for d in 2..6 {
            assert!(
                ranking.mli[d] < ranking.mli[d - 1],
                "mli not decreasing at depth {d}"
            );
        }
        assert_eq!(ranking.order[0].get(), 6);
        for &value in &ranking.mli[1..] {
            assert!(value.is_finite() && value >= 0.0);
        }
    }

    #[test]
    fn full_k_returns_whole_ordering() {
        let net = uniform_chain(4);
        let sol = solve(&net, &[], &SolveOptions::default()).unwrap();
        let ranking = rank_buses(&net, &sol, 3);
        assert_eq!(ranking.candidates, ranking.order);
        // Permutation of all non-root buses.
        let mut ids: Vec<usize> = ranking.order.iter().map(|b| b.get()).collect();
        ids.sort_unstable();
        assert_eq!(ids, vec![2, 3, 4]);
    }

    #[test]
    fn two_bus_single_row() {
        let net = Network::from_records(
            vec![
                BusRecord { id: BusId::new(1), p_load_kw: 0.0, q_load_kvar: 0.0 },
                BusRecord { id: BusId::new(2), p_load_kw: 300.0, q_load_kvar: 200.0 },
            ],
            vec![BranchRecord {
                from: BusId::new(1),
                to: BusId::new(2),
                r_ohm: 0.05,
                x_ohm: 0.04,
                i_rated_a: None,
            }],
            1.0,
            1.0,
        )
        .unwrap();
        let sol = solve(&net, &[], &SolveOptions::default()).unwrap();
        let ranking = rank_buses(&net, &sol, 1);
        assert_eq!(ranking.order.len(), 1);
        assert_eq!(ranking.candidates, vec![BusId::new(2)]);
        assert!(ranking.mli[1].is_finite());
    }

    #[test]
    fn degenerate_buses_sort_last() {
        // Bus 3 carries no load; it must trail every loaded bus.
        let net = Network::from_records(
            vec![
                BusRecord { id: BusId::new(1), p_load_kw: 0.0, q_load_kvar: 0.0 },
                BusRecord { id: BusId::new(2), p_load_kw: 300.0, q_load_kvar: 200.0 },
                BusRecord { id: BusId::new(3), p_load_kw: 0.0, q_load_kvar: 0.0 },
            ],
            vec![
                BranchRecord { from: BusId::new(1), to: BusId::new(2), r_ohm: 0.05, x_ohm: 0.04, i_rated_a: None },
                BranchRecord { from: BusId::new(2), to: BusId::new(3), r_ohm: 0.05, x_ohm: 0.04, i_rated_a: None },
            ],
            1.0,
            1.0,
        )
        .unwrap();
        let sol = solve(&net, &[], &SolveOptions::default()).unwrap();
        let ranking = rank_buses(&net, &sol, 2);
        assert_eq!(ranking.order.last().unwrap().get(), 3);
        assert_eq!(ranking.degenerate, vec![BusId::new(3)]);
    }
}
