//! Study report assembly: loss, voltage and penetration outcomes in a
//! JSON-friendly shape.

use crate::loadflow::{min_voltage, LoadFlowSolution};
use crate::loadflow::{DgKind, DgUnit};
use crate::netmodel::{BusId, Network};
use crate::sizing::{penetration_percent, penetration_real_percent};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgTableRow {
    pub kind: DgKind,
    pub bus: BusId,
    pub p_kw: f64,
    pub q_kvar: f64,
    pub pf: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoltageRow {
    pub bus: BusId,
    pub v_base_pu: f64,
    /// Voltage with the DG set connected; absent when the study has none.
    pub v_dg_pu: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub loadflow_iterations: usize,
    pub evaluations: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenario: String,
    pub base_loss_kw: f64,
    pub final_loss_kw: f64,
    pub reduction_pct: f64,
    pub dg_table: Vec<DgTableRow>,
    pub voltage_profile: Vec<VoltageRow>,
    pub min_voltage: (BusId, f64),
    pub penetration_real_pct: f64,
    pub penetration_apparent_pct: f64,
    pub solver_stats: SolverStats,
}

impl StudyReport {
    /// Assembles a report from the base case and, when a DG set is in
    /// play, the re-solved final state.
    pub fn build(
        scenario: impl Into<String>,
        network: &Network,
        base: &LoadFlowSolution,
        with_dg: Option<&LoadFlowSolution>,
        units: &[DgUnit],
        stats: SolverStats,
    ) -> Self {
        let s_base_kw = network.s_base_mva() * 1e3;
        let final_sol = with_dg.unwrap_or(base);
        let base_loss_kw = base.p_loss_total * s_base_kw;
        let final_loss_kw = final_sol.p_loss_total * s_base_kw;
        let reduction_pct = if base_loss_kw > 0.0 {
            100.0 * (base_loss_kw - final_loss_kw) / base_loss_kw
        } else {
            0.0
        };

        let dg_table = units
            .iter()
            .map(|u| DgTableRow {
                kind: u.kind,
                bus: u.bus,
                p_kw: u.p_size * s_base_kw,
                q_kvar: u.injection_pu().im * s_base_kw,
                pf: u.effective_pf(),
            })
            .collect();

        let voltage_profile = (0..network.n_buses())
            .map(|i| VoltageRow {
                bus: BusId::from_index(i),
                v_base_pu: base.vm(i),
                v_dg_pu: with_dg.map(|s| s.vm(i)),
            })
            .collect();

        StudyReport {
            scenario: scenario.into(),
            base_loss_kw,
            final_loss_kw,
            reduction_pct,
            dg_table,
            voltage_profile,
            min_voltage: min_voltage(final_sol),
            penetration_real_pct: penetration_real_percent(units, network),
            penetration_apparent_pct: penetration_percent(units, network),
            solver_stats: stats,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loadflow::{solve, SolveOptions};
    use crate::netmodel::parse_network;

    #[test]
    fn base_only_report() {
        let net = parse_network(crate::testdata::IEEE33, 12.66, 100.0).unwrap();
        let base = solve(&net, &[], &SolveOptions::default()).unwrap();
        let report = StudyReport::build("loadflow", &net, &base, None, &[], SolverStats::default());
        assert_eq!(report.base_loss_kw, report.final_loss_kw);
        assert_eq!(report.reduction_pct, 0.0);
        assert_eq!(report.voltage_profile.len(), 33);
        assert!(report.voltage_profile.iter().all(|r| r.v_dg_pu.is_none()));
        assert_eq!(report.min_voltage.0.get(), 18);
        assert_eq!(report.penetration_real_pct, 0.0);
        // Ascending bus order, every bus exactly once.
        for (i, row) in report.voltage_profile.iter().enumerate() {
            assert_eq!(row.bus.index(), i);
        }
    }

    #[test]
    fn report_with_dg_set() {
        let net = parse_network(crate::testdata::IEEE33, 12.66, 100.0).unwrap();
        let base = solve(&net, &[], &SolveOptions::default()).unwrap();
        let units = vec![DgUnit::new(DgKind::Wind, BusId::new(30), 0.01, 0.9, 1)];
        let final_sol = solve(&net, &units, &SolveOptions::default()).unwrap();
        let report = StudyReport::build(
            "test",
            &net,
            &base,
            Some(&final_sol),
            &units,
            SolverStats { loadflow_iterations: final_sol.iterations, evaluations: 0, seed: None },
        );
        assert!(report.final_loss_kw < report.base_loss_kw);
        assert!((report.reduction_pct
            - 100.0 * (report.base_loss_kw - report.final_loss_kw) / report.base_loss_kw)
            .abs()
            < 1e-12);
        assert_eq!(report.dg_table.len(), 1);
        assert!((report.dg_table[0].p_kw - 1000.0).abs() < 1e-9);
        // 1 MW at pf 0.9 lagging injects ~484 kVAr.
        assert!((report.dg_table[0].q_kvar - 484.32).abs() < 0.01);
        assert!(report.voltage_profile.iter().all(|r| r.v_dg_pu.is_some()));
    }
}
