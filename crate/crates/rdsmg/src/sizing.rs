//! Analytical DG sizing from the exact loss formula, plus
//! penetration-level bookkeeping.
//!
//! The loss coefficients come from the bus impedance matrix of the radial
//! network: `Z[i][j]` is the impedance of the branch path shared by the
//! root-to-i and root-to-j walks. Evaluated at a converged operating
//! point, the double-sum loss formula reproduces the load-flow losses;
//! its stationarity condition in one bus's injection yields the sizing
//! rule.

use crate::loadflow::{solve, tan_acos, DgKind, DgUnit, LoadFlowError, LoadFlowSolution, SolveOptions};
use crate::netmodel::{total_load, BusId, Network};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SizingError {
    #[error("loss coefficient is degenerate at bus {0}: no resistive path to the root")]
    DegenerateCoefficient(BusId),
    #[error("cannot rescale an all-zero DG size vector")]
    AllZeroSizes,
    #[error(transparent)]
    LoadFlow(#[from] LoadFlowError),
}

/// Exact-loss-formula coefficients at one operating point.
///
/// `alpha` is symmetric with a zero root row; `beta` is antisymmetric
/// with a zero diagonal.
#[derive(Debug, Clone)]
pub struct LossCoefficients {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl LossCoefficients {
    /// Total real loss from net bus injections (generation positive,
    /// loads negative) via the double-sum formula.
    pub fn total_loss(&self, injections: &[Complex64]) -> f64 {
        let n = self.alpha.len();
        assert_eq!(injections.len(), n);
        let mut loss = 0.0;
        for i in 0..n {
            let (pi, qi) = (injections[i].re, injections[i].im);
            for (j, inj) in injections.iter().enumerate() {
                let (pj, qj) = (inj.re, inj.im);
                loss += self.alpha[i][j] * (pi * pj + qi * qj)
                    + self.beta[i][j] * (qi * pj - pi * qj);
            }
        }
        loss
    }
}

/// Builds the coefficients from a converged solution: shared root-path
/// resistance scaled by voltage magnitudes and angle differences.
pub fn loss_coefficients(network: &Network, solution: &LoadFlowSolution) -> LossCoefficients {
    let n = network.n_buses();

    // Cumulative path impedance from the root and depth per bus.
    let mut z_path = vec![Complex64::new(0.0, 0.0); n];
    let mut depth = vec![0usize; n];
    for &bus in network.depth_order() {
        let parent = network.parent_of(bus).expect("non-root bus has a parent");
        z_path[bus] = z_path[parent] + network.z_up_pu(bus);
        depth[bus] = depth[parent] + 1;
    }

    let lca = |mut a: usize, mut b: usize| -> usize {
        while depth[a] > depth[b] {
            a = network.parent_of(a).unwrap();
        }
        while depth[b] > depth[a] {
            b = network.parent_of(b).unwrap();
        }
        while a != b {
            a = network.parent_of(a).unwrap();
            b = network.parent_of(b).unwrap();
        }
        a
    };

    let vm: Vec<f64> = solution.v.iter().map(|v| v.norm()).collect();
    let angle: Vec<f64> = solution.v.iter().map(|v| v.arg()).collect();

    let mut alpha = vec![vec![0.0; n]; n];
    let mut beta = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let r_path = z_path[lca(i, j)].re;
            let scale = r_path / (vm[i] * vm[j]);
            let theta = angle[i] - angle[j];
            let a = scale * theta.cos();
            let b = scale * theta.sin();
            alpha[i][j] = a;
            alpha[j][i] = a;
            beta[i][j] = b;
            beta[j][i] = -b;
        }
        beta[i][i] = 0.0;
    }

    LossCoefficients { alpha, beta }
}

/// Net complex injection per bus (generation positive) recovered from a
/// solved state via nodal current balance. The root entry is the slack
/// feed-in.
pub fn net_injections(network: &Network, solution: &LoadFlowSolution) -> Vec<Complex64> {
    let n = network.n_buses();
    let mut i_up = vec![Complex64::new(0.0, 0.0); n];
    for (br, i) in network.branches().iter().zip(&solution.i_branch) {
        i_up[br.to.index()] = *i;
    }

    let mut injections = vec![Complex64::new(0.0, 0.0); n];
    for bus in 0..n {
        // Current delivered to the bus: in from the parent, out to children.
        // The root has no upstream entry, so its balance is the slack feed.
        let mut nodal = i_up[bus];
        for &child in network.children_of(bus) {
            nodal -= i_up[child];
        }
        injections[bus] = -(solution.v[bus] * nodal.conj());
    }
    injections
}

/// Result of one analytical sizing: the unit, the raw formula value, and
/// whether a negative size was clamped to zero.
#[derive(Debug, Clone)]
pub struct AnalyticalSizing {
    pub unit: DgUnit,
    pub raw_p_size: f64,
    pub clamped: bool,
}

/// Sizes one DG at `bus` from the stationarity condition of the loss
/// formula evaluated on `solution`:
///
/// `P_DG = [α_ii(P_D + a·Q_D) + β_ii(a·P_D − Q_D) − X − a·Y] / (a²·α_ii + α_ii)`
///
/// with `a = sign·tan(acos(pf))`, `X = Σ_{j≠i}(α_ij·P_j − β_ij·Q_j)` and
/// `Y = Σ_{j≠i}(α_ij·Q_j + β_ij·P_j)` over net injections (loads negative,
/// previously placed DG included). `Q_DG = a·P_DG`.
pub fn analytical_size(
    network: &Network,
    solution: &LoadFlowSolution,
    bus: BusId,
    kind: DgKind,
    pf_dg: f64,
    sign: i8,
) -> Result<AnalyticalSizing, SizingError> {
    let i = bus.index();
    let pf = if kind == DgKind::Pv { 1.0 } else { pf_dg };
    assert!(pf > 0.0 && pf <= 1.0, "power factor must be in (0, 1]");
    assert!(sign == 1 || sign == -1, "sign must be +1 or -1");

    let coeffs = loss_coefficients(network, solution);
    let alpha_ii = coeffs.alpha[i][i];
    if alpha_ii <= 0.0 {
        return Err(SizingError::DegenerateCoefficient(bus));
    }
    let beta_ii = coeffs.beta[i][i];

    let injections = net_injections(network, solution);
    // Local demand net of anything already connected at this bus.
    let p_d = -injections[i].re;
    let q_d = -injections[i].im;

    let a = f64::from(sign) * tan_acos(pf);
    let mut x = 0.0;
    let mut y = 0.0;
    for (j, inj) in injections.iter().enumerate() {
        if j == i {
            continue;
        }
        x += coeffs.alpha[i][j] * inj.re - coeffs.beta[i][j] * inj.im;
        y += coeffs.alpha[i][j] * inj.im + coeffs.beta[i][j] * inj.re;
    }

    let numerator = alpha_ii * (p_d + a * q_d) + beta_ii * (a * p_d - q_d) - x - a * y;
    let raw = numerator / (a * a * alpha_ii + alpha_ii);
    let clamped = raw < 0.0;
    let p_size = raw.max(0.0);

    Ok(AnalyticalSizing {
        unit: DgUnit::new(kind, bus, p_size, pf, sign),
        raw_p_size: raw,
        clamped,
    })
}

/// Sequentially sizes one unit per placement: size, re-run the load flow
/// with everything placed so far, recompute coefficients, size the next.
pub fn size_units_sequential(
    network: &Network,
    placements: &[(BusId, DgKind, f64, i8)],
    opts: &SolveOptions,
) -> Result<Vec<AnalyticalSizing>, SizingError> {
    let mut units: Vec<DgUnit> = Vec::new();
    let mut sizings = Vec::new();
    for &(bus, kind, pf, sign) in placements {
        let sol = solve(network, &units, opts)?;
        if !sol.converged {
            return Err(LoadFlowError::NonConvergence {
                max_iter: opts.max_iter,
            }
            .into());
        }
        let sizing = analytical_size(network, &sol, bus, kind, pf, sign)?;
        units.push(sizing.unit);
        sizings.push(sizing);
    }
    Ok(sizings)
}

/// Penetration target: total DG real power as a fraction of total real
/// load, plus the per-bus share bookkeeping once units are sized.
#[derive(Debug, Clone, Serialize)]
pub struct PenetrationSpec {
    /// Fraction of total real load in (0, 1].
    pub level: f64,
    /// Per-unit total DG real power target.
    pub pdg_pp: f64,
    /// Per-bus share of the sized total; shares sum to one.
    pub per_unit_breakdown: Vec<(BusId, f64)>,
}

impl PenetrationSpec {
    pub fn from_level(network: &Network, level: f64) -> Self {
        assert!(level > 0.0 && level <= 1.0, "level must be in (0, 1]");
        let (p_total, _, _) = total_load(network);
        PenetrationSpec {
            level,
            pdg_pp: level * p_total,
            per_unit_breakdown: Vec::new(),
        }
    }

    /// Fills the per-bus breakdown from sized units. The last share is
    /// adjusted so the sum is exactly one.
    pub fn set_breakdown(&mut self, units: &[DgUnit]) {
        let total: f64 = units.iter().map(|u| u.p_size).sum();
        self.per_unit_breakdown.clear();
        if total <= 0.0 {
            return;
        }
        let mut acc = 0.0;
        for (idx, unit) in units.iter().enumerate() {
            let share = if idx + 1 == units.len() {
                1.0 - acc
            } else {
                unit.p_size / total
            };
            acc += share;
            self.per_unit_breakdown.push((unit.bus, share));
        }
    }
}

/// Rescales unit sizes proportionally so their sum equals the penetration
/// target exactly. Power factors and signs are untouched.
pub fn apply_penetration(
    units: &[DgUnit],
    spec: &PenetrationSpec,
) -> Result<Vec<DgUnit>, SizingError> {
    let total: f64 = units.iter().map(|u| u.p_size).sum();
    if total <= 0.0 {
        return Err(SizingError::AllZeroSizes);
    }
    let scale = spec.pdg_pp / total;
    Ok(units
        .iter()
        .map(|u| DgUnit {
            p_size: u.p_size * scale,
            ..*u
        })
        .collect())
}

/// Apparent-power penetration: apparent DG power over apparent load,
/// percent.
pub fn penetration_percent(units: &[DgUnit], network: &Network) -> f64 {
    let p_dg: f64 = units.iter().map(|u| u.injection_pu().re).sum();
    let q_dg: f64 = units.iter().map(|u| u.injection_pu().im).sum();
    let (_, _, s_load) = total_load(network);
    100.0 * p_dg.hypot(q_dg) / s_load
}

/// Real-power penetration: total DG real power over total real load,
/// percent. This is the basis the sizing equality targets; both numbers
/// are reported since the two differ whenever DG injects reactive power.
pub fn penetration_real_percent(units: &[DgUnit], network: &Network) -> f64 {
    let p_dg: f64 = units.iter().map(|u| u.p_size).sum();
    let (p_load, _, _) = total_load(network);
    100.0 * p_dg / p_load
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loadflow::objective;
    use crate::netmodel::{BranchRecord, BusRecord};

    fn bus(id: usize, p: f64, q: f64) -> BusRecord {
        BusRecord {
            id: BusId::new(id),
            p_load_kw: p,
            q_load_kvar: q,
        }
    }

    fn branch(from: usize, to: usize, r: f64, x: f64) -> BranchRecord {
        BranchRecord {
            from: BusId::new(from),
            to: BusId::new(to),
            r_ohm: r,
            x_ohm: x,
            i_rated_a: None,
        }
    }

    // 1 kV / 1 MVA bases: ohms and kW read directly as per-unit.
    fn pu_network(buses: Vec<BusRecord>, branches: Vec<BranchRecord>) -> Network {
        Network::from_records(buses, branches, 1.0, 1.0).unwrap()
    }

    fn tight() -> SolveOptions {
        SolveOptions {
            tol: 1e-13,
            max_iter: 500,
            ..SolveOptions::default()
        }
    }

    #[test]
    fn two_bus_alpha_matches_hand_value() {
        let net = pu_network(
            vec![bus(1, 0.0, 0.0), bus(2, 100.0, 50.0)],
            vec![branch(1, 2, 0.05, 0.05)],
        );
        // Synthetic operating point: |V2| = 0.95 at -1 degree.
        let v2 = Complex64::from_polar(0.95, -1.0f64.to_radians());
        let sol = LoadFlowSolution {
            v: vec![Complex64::new(1.0, 0.0), v2],
            i_branch: vec![Complex64::new(0.0, 0.0)],
            p_loss_branch: vec![0.0],
            q_loss_branch: vec![0.0],
            p_loss_total: 0.0,
            q_loss_total: 0.0,
            iterations: 1,
            converged: true,
        };
        let coeffs = loss_coefficients(&net, &sol);
        assert!((coeffs.alpha[1][1] - 0.05 / 0.9025).abs() < 1e-12);
        // Root row carries no path impedance.
        assert_eq!(coeffs.alpha[0][0], 0.0);
        assert_eq!(coeffs.alpha[0][1], 0.0);
        assert_eq!(coeffs.beta[1][1], 0.0);
    }

    #[test]
    fn loss_formula_matches_loadflow_on_chain() {
        let net = pu_network(
            vec![
                bus(1, 0.0, 0.0),
                bus(2, 80.0, 40.0),
                bus(3, 50.0, 20.0),
                bus(4, 60.0, 30.0),
            ],
            vec![
                branch(1, 2, 0.02, 0.04),
                branch(2, 3, 0.03, 0.03),
                branch(3, 4, 0.04, 0.02),
            ],
        );
        let sol = solve(&net, &[], &tight()).unwrap();
        let coeffs = loss_coefficients(&net, &sol);
        let inj = net_injections(&net, &sol);
        let formula = coeffs.total_loss(&inj);
        let rel = (formula - sol.p_loss_total).abs() / sol.p_loss_total;
        assert!(rel < 0.02, "relative mismatch {rel}");
        // At the converged point the formula is exact, not just close.
        assert!(rel < 1e-8, "relative mismatch {rel}");
    }

    #[test]
    fn coefficient_symmetry() {
        let net = pu_network(
            vec![bus(1, 0.0, 0.0), bus(2, 80.0, 40.0), bus(3, 50.0, 20.0), bus(4, 60.0, 30.0)],
            vec![branch(1, 2, 0.02, 0.04), branch(2, 3, 0.03, 0.03), branch(2, 4, 0.04, 0.02)],
        );
        let sol = solve(&net, &[], &tight()).unwrap();
        let coeffs = loss_coefficients(&net, &sol);
        for i in 0..4 {
            assert_eq!(coeffs.beta[i][i], 0.0);
            for j in 0..4 {
                assert_eq!(coeffs.alpha[i][j], coeffs.alpha[j][i]);
                assert_eq!(coeffs.beta[i][j], -coeffs.beta[j][i]);
            }
        }
    }

    #[test]
    fn reactive_ratio_behaviour() {
        assert_eq!(tan_acos(1.0), 0.0);
        assert!((tan_acos(0.9) - 0.48432).abs() < 1e-5);
        // Strictly decreasing in pf.
        let mut prev = f64::INFINITY;
        let mut pf = 0.05;
        while pf <= 1.0 {
            let a = tan_acos(pf);
            assert!(a < prev, "not decreasing at pf {pf}");
            prev = a;
            pf += 0.05;
        }
    }

    #[test]
    fn unity_pf_sizing_cancels_local_demand_on_two_bus() {
        let net = pu_network(
            vec![bus(1, 0.0, 0.0), bus(2, 300.0, 0.0)],
            vec![branch(1, 2, 0.05, 0.05)],
        );
        let sol = solve(&net, &[], &tight()).unwrap();
        let sizing = analytical_size(&net, &sol, BusId::new(2), DgKind::Pv, 1.0, 1).unwrap();
        assert!(!sizing.clamped);
        assert!(
            (sizing.unit.p_size - 0.3).abs() < 1e-9,
            "sized {}",
            sizing.unit.p_size
        );
        assert_eq!(sizing.unit.injection_pu().im, 0.0);
    }

    #[test]
    fn load_pf_sizing_zeroes_the_loss() {
        let p = 300.0;
        let q = 200.0;
        let net = pu_network(
            vec![bus(1, 0.0, 0.0), bus(2, p, q)],
            vec![branch(1, 2, 0.05, 0.05)],
        );
        let sol = solve(&net, &[], &tight()).unwrap();
        let pf = p / p.hypot(q);
        let sizing =
            analytical_size(&net, &sol, BusId::new(2), DgKind::MicroTurbine, pf, 1).unwrap();
        let loss = objective(&net, &[sizing.unit]).unwrap();
        assert!(loss < 1e-18, "residual loss {loss}");
    }

    #[test]
    fn root_bus_is_degenerate() {
        let net = pu_network(
            vec![bus(1, 0.0, 0.0), bus(2, 300.0, 200.0)],
            vec![branch(1, 2, 0.05, 0.05)],
        );
        let sol = solve(&net, &[], &tight()).unwrap();
        let err = analytical_size(&net, &sol, BusId::new(1), DgKind::Pv, 1.0, 1).unwrap_err();
        assert!(matches!(err, SizingError::DegenerateCoefficient(b) if b.get() == 1));
    }

    #[test]
    fn oversupplied_neighbour_clamps_to_zero() {
        let net = pu_network(
            vec![bus(1, 0.0, 0.0), bus(2, 100.0, 50.0), bus(3, 100.0, 50.0)],
            vec![branch(1, 2, 0.05, 0.04), branch(2, 3, 0.05, 0.04)],
        );
        // Bus 3 already massively over-generates; adding anything at bus 2
        // only raises the loss, so the formula goes negative.
        let big = DgUnit::new(DgKind::Pv, BusId::new(3), 0.5, 1.0, 1);
        let sol = solve(&net, &[big], &tight()).unwrap();
        let sizing = analytical_size(&net, &sol, BusId::new(2), DgKind::Pv, 1.0, 1).unwrap();
        assert!(sizing.clamped, "raw size {}", sizing.raw_p_size);
        assert!(sizing.raw_p_size < 0.0);
        assert_eq!(sizing.unit.p_size, 0.0);
    }

    #[test]
    fn proportional_rescale() {
        let units: Vec<DgUnit> = [2.0, 3.0, 5.0]
            .iter()
            .map(|&p| DgUnit::new(DgKind::Pv, BusId::new(2), p, 1.0, 1))
            .collect();
        let spec = PenetrationSpec {
            level: 1.0,
            pdg_pp: 5.0,
            per_unit_breakdown: Vec::new(),
        };
        let scaled = apply_penetration(&units, &spec).unwrap();
        let sizes: Vec<f64> = scaled.iter().map(|u| u.p_size).collect();
        assert_eq!(sizes, vec![1.0, 1.5, 2.5]);
    }

    #[test]
    fn single_unit_rescale() {
        let units = vec![DgUnit::new(DgKind::Pv, BusId::new(2), 3.0, 1.0, 1)];
        let spec = PenetrationSpec {
            level: 1.0,
            pdg_pp: 7.0,
            per_unit_breakdown: Vec::new(),
        };
        let scaled = apply_penetration(&units, &spec).unwrap();
        assert_eq!(scaled[0].p_size, 7.0);
    }

    #[test]
    fn zero_sizes_cannot_rescale() {
        let units = vec![DgUnit::new(DgKind::Pv, BusId::new(2), 0.0, 1.0, 1)];
        let spec = PenetrationSpec {
            level: 1.0,
            pdg_pp: 7.0,
            per_unit_breakdown: Vec::new(),
        };
        assert!(matches!(
            apply_penetration(&units, &spec),
            Err(SizingError::AllZeroSizes)
        ));
    }

    #[test]
    fn penetration_percent_bounds() {
        let net = pu_network(
            vec![bus(1, 0.0, 0.0), bus(2, 300.0, 400.0)],
            vec![branch(1, 2, 0.05, 0.05)],
        );
        assert_eq!(penetration_percent(&[], &net), 0.0);
        // DG apparent power equal to the load apparent power: 100%.
        let pf = 0.6;
        let dg = DgUnit::new(DgKind::Wind, BusId::new(2), 0.3, pf, 1);
        let pct = penetration_percent(&[dg], &net);
        assert!((pct - 100.0).abs() < 1e-9, "pct {pct}");
    }

    #[test]
    fn breakdown_shares_sum_to_one() {
        let units: Vec<DgUnit> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&p| DgUnit::new(DgKind::Pv, BusId::new(2), p, 1.0, 1))
            .collect();
        let net = pu_network(
            vec![bus(1, 0.0, 0.0), bus(2, 300.0, 400.0)],
            vec![branch(1, 2, 0.05, 0.05)],
        );
        let mut spec = PenetrationSpec::from_level(&net, 0.8);
        spec.set_breakdown(&units);
        let sum: f64 = spec.per_unit_breakdown.iter().map(|(_, s)| s).sum();
        assert_eq!(sum, 1.0);
    }
}
