//! Command-line studies: load flow, siting, sizing, swarm optimization and
//! penetration sweeps. Reports are JSON, tables are CSV.

use crate::loadflow::{solve, DgUnit, LoadFlowError, LoadFlowSolution, SolveOptions};
use crate::netmodel::{load_network, BusId, Network, NetworkError};
use crate::report::{SolverStats, StudyReport};
use crate::siting::{rank_buses, MliRanking};
use crate::sizing::{size_units_sequential, PenetrationSpec, SizingError};
use crate::swarm::{decode_position, optimize, FitnessContext, SwarmConfig, SwarmError, SwarmResult};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Dataset(#[from] NetworkError),
    #[error("invalid DG spec: {0}")]
    DgSpec(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Solver(#[from] LoadFlowError),
    #[error("{0}")]
    Sizing(#[from] SizingError),
    #[error("{0}")]
    Swarm(#[from] SwarmError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 = dataset/usage trouble, 3 = solver failure, 4 = infeasible
    /// optimization scenario.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Dataset(_) | CliError::DgSpec(_) | CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::Solver(_) | CliError::Sizing(_) => 3,
            CliError::Swarm(SwarmError::InfeasibleScenario) => 4,
            CliError::Swarm(SwarmError::InvalidConfig(_)) => 2,
            CliError::Swarm(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rdsmg", version, about = "Radial distribution micro-grid studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Suppress the timestamp header line in CSV outputs.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Backward/forward sweep load flow, optionally with a DG set
    Loadflow(LoadflowArgs),
    /// Rank buses by loadability index
    Site(SiteArgs),
    /// Analytical DG sizing at the weakest buses
    Size(SizeArgs),
    /// Swarm-optimized siting and sizing at one penetration level
    Optimize(OptimizeArgs),
    /// Swarm optimization across several penetration levels
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct NetArgs {
    /// Network dataset file (#BUS / #BRANCH sections)
    pub network: PathBuf,
    /// Line voltage base in kV
    #[arg(long, default_value_t = 12.66)]
    pub v_base: f64,
    /// Apparent power base in MVA
    #[arg(long, default_value_t = 100.0)]
    pub s_base: f64,
}

#[derive(Debug, Args)]
pub struct LoadflowArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// DG spec file: CSV rows `kind,bus,p_kW,pf,sign`
    #[arg(long)]
    pub dg: Option<PathBuf>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the per-bus voltage CSV here
    #[arg(long)]
    pub voltage_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SiteArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Number of candidate buses to mark
    #[arg(long, default_value_t = 3)]
    pub top: usize,
    /// Write the MLI table here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SizeArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Number of units to place (kinds cycle pv, wind, mt)
    #[arg(long, default_value_t = 3)]
    pub top: usize,
    /// Power factor for non-PV units
    #[arg(long, default_value_t = 0.9)]
    pub pf: f64,
    /// Reactive sign for non-PV units: +1 injects, -1 absorbs
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    pub sign: i8,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Penetration level in percent of total real load, (0, 100]
    #[arg(long)]
    pub penetration: f64,
    /// RNG seed; falls back to RDSMG_SEED, then 1
    #[arg(long)]
    pub seed: Option<u64>,
    /// Swarm size override
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub particles: Option<u64>,
    /// Iteration count override
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: Option<u64>,
    /// Named parameter preset; `table2` pins the published PSO setup
    #[arg(long)]
    pub profile: Option<String>,
    /// Candidate buses offered to the swarm
    #[arg(long, default_value_t = 3)]
    pub top: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the per-iteration convergence CSV here
    #[arg(long)]
    pub convergence_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Penetration levels in percent, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub levels: Vec<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub particles: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: Option<u64>,
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub top: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Loadflow(args) => {
            cmd_loadflow(args, cli.no_timestamp)?;
        }
        Command::Site(args) => {
            cmd_site(args, cli.no_timestamp)?;
        }
        Command::Size(args) => {
            cmd_size(args)?;
        }
        Command::Optimize(args) => {
            cmd_optimize(args, cli.no_timestamp)?;
        }
        Command::Sweep(args) => {
            cmd_sweep(args, cli.no_timestamp)?;
        }
    }
    Ok(())
}

fn load(net: &NetArgs) -> Result<Network, CliError> {
    Ok(load_network(&net.network, net.v_base, net.s_base)?)
}

fn solved(network: &Network, units: &[DgUnit]) -> Result<LoadFlowSolution, CliError> {
    let opts = SolveOptions::default();
    let sol = solve(network, units, &opts)?;
    if !sol.converged {
        return Err(LoadFlowError::NonConvergence {
            max_iter: opts.max_iter,
        }
        .into());
    }
    Ok(sol)
}

/// Parses the DG spec format: `kind,bus,p_kW,pf,sign` per row, `#`
/// comments and an optional header row allowed.
pub fn parse_dg_spec(text: &str, network: &Network) -> Result<Vec<DgUnit>, CliError> {
    let mut units = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields[0].eq_ignore_ascii_case("kind") {
            continue;
        }
        if fields.len() != 5 {
            return Err(CliError::DgSpec(format!(
                "line {lineno}: expected kind,bus,p_kW,pf,sign"
            )));
        }
        let kind = fields[0]
            .parse()
            .map_err(|e| CliError::DgSpec(format!("line {lineno}: {e}")))?;
        let bus: usize = fields[1]
            .parse()
            .map_err(|_| CliError::DgSpec(format!("line {lineno}: bad bus id '{}'", fields[1])))?;
        if bus < 1 || bus > network.n_buses() {
            return Err(CliError::DgSpec(format!(
                "line {lineno}: bus {bus} not in 1..={}",
                network.n_buses()
            )));
        }
        let p_kw: f64 = fields[2]
            .parse()
            .map_err(|_| CliError::DgSpec(format!("line {lineno}: bad p_kW '{}'", fields[2])))?;
        if p_kw < 0.0 {
            return Err(CliError::DgSpec(format!("line {lineno}: negative p_kW")));
        }
        let pf: f64 = fields[3]
            .parse()
            .map_err(|_| CliError::DgSpec(format!("line {lineno}: bad pf '{}'", fields[3])))?;
        if !(pf > 0.0 && pf <= 1.0) {
            return Err(CliError::DgSpec(format!(
                "line {lineno}: pf must be in (0, 1]"
            )));
        }
        let sign: i8 = fields[4]
            .trim_start_matches('+')
            .parse()
            .map_err(|_| CliError::DgSpec(format!("line {lineno}: bad sign '{}'", fields[4])))?;
        if sign != 1 && sign != -1 {
            return Err(CliError::DgSpec(format!(
                "line {lineno}: sign must be +1 or -1"
            )));
        }
        units.push(DgUnit::new(
            kind,
            BusId::new(bus),
            p_kw / (network.s_base_mva() * 1e3),
            pf,
            sign,
        ));
    }
    Ok(units)
}

fn timestamp_header(no_timestamp: bool) -> String {
    if no_timestamp {
        String::new()
    } else {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!("# generated {secs}\n")
    }
}

fn write_text(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn emit_report(report: &StudyReport, out: Option<&Path>) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    match out {
        Some(p) => fs::write(p, format!("{json}\n"))?,
        None => println!("{json}"),
    }
    Ok(())
}

/// Per-bus voltage table. One value column for a plain base case, two
/// (base and with-DG) when a DG set is in play.
pub fn voltage_csv(report: &StudyReport, no_timestamp: bool) -> String {
    let mut csv = timestamp_header(no_timestamp);
    let with_dg = report.voltage_profile.iter().any(|r| r.v_dg_pu.is_some());
    if with_dg {
        csv.push_str("bus,v_base_pu,v_dg_pu\n");
        for row in &report.voltage_profile {
            let _ = writeln!(
                csv,
                "{},{},{}",
                row.bus,
                row.v_base_pu,
                row.v_dg_pu.unwrap_or(row.v_base_pu)
            );
        }
    } else {
        csv.push_str("bus,v_pu\n");
        for row in &report.voltage_profile {
            let _ = writeln!(csv, "{},{}", row.bus, row.v_base_pu);
        }
    }
    csv
}

pub fn cmd_loadflow(args: &LoadflowArgs, no_timestamp: bool) -> Result<StudyReport, CliError> {
    let network = load(&args.net)?;
    let units = match &args.dg {
        Some(path) => parse_dg_spec(&fs::read_to_string(path)?, &network)?,
        None => Vec::new(),
    };

    let base = solved(&network, &[])?;
    let final_sol = if units.is_empty() {
        None
    } else {
        Some(solved(&network, &units)?)
    };
    let iterations = final_sol.as_ref().unwrap_or(&base).iterations;
    let report = StudyReport::build(
        "loadflow",
        &network,
        &base,
        final_sol.as_ref(),
        &units,
        SolverStats {
            loadflow_iterations: iterations,
            evaluations: 0,
            seed: None,
        },
    );

    if let Some(csv_path) = &args.voltage_csv {
        write_text(Some(csv_path), &voltage_csv(&report, no_timestamp))?;
    }
    emit_report(&report, args.out.as_deref())?;
    Ok(report)
}

/// MLI table: every non-root bus in weak-first order, candidates flagged.
pub fn site_csv(ranking: &MliRanking, k: usize, no_timestamp: bool) -> String {
    let mut csv = timestamp_header(no_timestamp);
    csv.push_str("rank,bus,mli,candidate\n");
    for (i, bus) in ranking.order.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            i + 1,
            bus,
            ranking.mli[bus.index()],
            u8::from(i < k)
        );
    }
    csv
}

pub fn cmd_site(args: &SiteArgs, no_timestamp: bool) -> Result<MliRanking, CliError> {
    let network = load(&args.net)?;
    let base = solved(&network, &[])?;
    let k = effective_top(args.top, &network)?;
    let ranking = rank_buses(&network, &base, k);
    write_text(args.out.as_deref(), &site_csv(&ranking, k, no_timestamp))?;
    Ok(ranking)
}

fn effective_top(top: usize, network: &Network) -> Result<usize, CliError> {
    if top < 1 {
        return Err(CliError::Usage("--top must be at least 1".into()));
    }
    Ok(top.min(network.n_buses() - 1))
}

/// Kind cycle for analytically sized units: pv, wind, micro-turbine.
fn placement_templates(k: usize, pf: f64, sign: i8) -> Vec<(crate::loadflow::DgKind, f64, i8)> {
    use crate::loadflow::DgKind;
    let cycle = [DgKind::Pv, DgKind::Wind, DgKind::MicroTurbine];
    (0..k)
        .map(|i| {
            let kind = cycle[i % cycle.len()];
            let pf = if kind == DgKind::Pv { 1.0 } else { pf };
            (kind, pf, sign)
        })
        .collect()
}

pub fn cmd_size(args: &SizeArgs) -> Result<StudyReport, CliError> {
    if !(args.pf > 0.0 && args.pf <= 1.0) {
        return Err(CliError::Usage("--pf must be in (0, 1]".into()));
    }
    if args.sign != 1 && args.sign != -1 {
        return Err(CliError::Usage("--sign must be +1 or -1".into()));
    }
    let network = load(&args.net)?;
    let base = solved(&network, &[])?;
    let k = effective_top(args.top, &network)?;
    let ranking = rank_buses(&network, &base, k);

    let placements: Vec<_> = ranking
        .candidates
        .iter()
        .zip(placement_templates(k, args.pf, args.sign))
        .map(|(&bus, (kind, pf, sign))| (bus, kind, pf, sign))
        .collect();
    let sizings = size_units_sequential(&network, &placements, &SolveOptions::default())?;
    for sizing in &sizings {
        if sizing.clamped {
            eprintln!(
                "warning: analytical size at bus {} was negative ({:.3} p.u.), clamped to zero",
                sizing.unit.bus, sizing.raw_p_size
            );
        }
    }
    let units: Vec<DgUnit> = sizings.iter().map(|s| s.unit).collect();

    let final_sol = solved(&network, &units)?;
    let report = StudyReport::build(
        "analytical",
        &network,
        &base,
        Some(&final_sol),
        &units,
        SolverStats {
            loadflow_iterations: final_sol.iterations,
            evaluations: 0,
            seed: None,
        },
    );
    emit_report(&report, args.out.as_deref())?;
    Ok(report)
}

fn resolve_seed(cli_seed: Option<u64>) -> u64 {
    cli_seed
        .or_else(|| {
            std::env::var("RDSMG_SEED")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or(1)
}

fn swarm_config(
    profile: Option<&str>,
    seed: u64,
    particles: Option<u64>,
    iters: Option<u64>,
) -> Result<SwarmConfig, CliError> {
    let mut config = match profile {
        None => SwarmConfig::default(),
        Some("table2") => SwarmConfig::table2(seed),
        Some(other) => {
            return Err(CliError::Usage(format!(
                "unknown profile '{other}' (expected 'table2')"
            )))
        }
    };
    config.seed = seed;
    if let Some(n) = particles {
        config.n_particles = n as usize;
    }
    if let Some(n) = iters {
        config.max_iter = n as usize;
    }
    Ok(config)
}

/// Shared optimize pipeline: base flow, MLI ranking, swarm run, final flow.
fn optimize_pipeline(
    network: &Network,
    penetration_pct: f64,
    config: &SwarmConfig,
    top: usize,
) -> Result<(StudyReport, SwarmResult), CliError> {
    if !(penetration_pct > 0.0 && penetration_pct <= 100.0) {
        return Err(CliError::Usage(
            "--penetration must be in (0, 100]".into(),
        ));
    }
    let base = solved(network, &[])?;
    let k = effective_top(top, network)?;
    let ranking = rank_buses(network, &base, k);
    let mut spec = PenetrationSpec::from_level(network, penetration_pct / 100.0);

    let result = optimize(network, &ranking, Some(&spec), config)?;
    let ctx = FitnessContext::new(network, &ranking.candidates, Some(&spec), config)?;
    let units = decode_position(&ctx, &result.gbest_x)?;
    spec.set_breakdown(&units);

    let final_sol = solved(network, &units)?;
    let report = StudyReport::build(
        format!("pso-{penetration_pct}%"),
        network,
        &base,
        Some(&final_sol),
        &units,
        SolverStats {
            loadflow_iterations: final_sol.iterations,
            evaluations: result.evaluations,
            seed: Some(config.seed),
        },
    );
    Ok((report, result))
}

/// Per-iteration best fitness, in kW on the system power base.
pub fn convergence_csv(result: &SwarmResult, network: &Network, no_timestamp: bool) -> String {
    let mut csv = timestamp_header(no_timestamp);
    csv.push_str("iteration,gbest_kw\n");
    for (i, f) in result.history.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", i + 1, f * network.s_base_mva() * 1e3);
    }
    csv
}

pub fn cmd_optimize(
    args: &OptimizeArgs,
    no_timestamp: bool,
) -> Result<(StudyReport, SwarmResult), CliError> {
    let network = load(&args.net)?;
    let config = swarm_config(
        args.profile.as_deref(),
        resolve_seed(args.seed),
        args.particles,
        args.iters,
    )?;
    let (report, result) = optimize_pipeline(&network, args.penetration, &config, args.top)?;
    if let Some(csv_path) = &args.convergence_csv {
        write_text(Some(csv_path), &convergence_csv(&result, &network, no_timestamp))?;
    }
    emit_report(&report, args.out.as_deref())?;
    Ok((report, result))
}

/// One summary row per penetration level.
pub fn sweep_csv(rows: &[(f64, StudyReport)], no_timestamp: bool) -> String {
    let mut csv = timestamp_header(no_timestamp);
    csv.push_str("level_pct,final_loss_kw,reduction_pct,min_voltage_bus,min_voltage_pu\n");
    for (level, report) in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            level,
            report.final_loss_kw,
            report.reduction_pct,
            report.min_voltage.0,
            report.min_voltage.1
        );
    }
    csv
}

pub fn cmd_sweep(
    args: &SweepArgs,
    no_timestamp: bool,
) -> Result<Vec<(f64, StudyReport)>, CliError> {
    let network = load(&args.net)?;
    let config = swarm_config(
        args.profile.as_deref(),
        resolve_seed(args.seed),
        args.particles,
        args.iters,
    )?;

    let mut levels: Vec<f64> = Vec::new();
    for &level in &args.levels {
        if !(level > 0.0 && level <= 100.0) {
            return Err(CliError::Usage(format!(
                "penetration level {level} outside (0, 100]"
            )));
        }
        if levels.contains(&level) {
            eprintln!("warning: duplicate penetration level {level}% skipped");
        } else {
            levels.push(level);
        }
    }

    let mut rows = Vec::with_capacity(levels.len());
    for level in levels {
        let (report, _) = optimize_pipeline(&network, level, &config, args.top)?;
        rows.push((level, report));
    }
    write_text(args.out.as_deref(), &sweep_csv(&rows, no_timestamp))?;
    Ok(rows)
}
