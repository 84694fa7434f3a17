//! Particle swarm optimizer for micro-source siting and sizing.
//!
//! A particle carries one size gene (kW) and one continuous location gene
//! per unit; location genes floor onto the candidate-bus list. Sizing
//! equality against the penetration target is enforced by repair, size
//! bounds by clamping, and voltage/current limits by quadratic penalty,
//! so the swarm can cross infeasible regions while every reported best
//! stays feasible.

use crate::loadflow::{solve, DgKind, DgUnit, LoadFlowError, SolveOptions};
use crate::netmodel::{BusId, Network};
use crate::siting::MliRanking;
use crate::sizing::PenetrationSpec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Keeps clamped location genes strictly below the candidate count so the
/// floor decode stays in range.
const LOCATION_MARGIN: f64 = 1e-9;

/// Improvements smaller than this do not reset the convergence marker.
const CONVERGENCE_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SwarmError {
    #[error("invalid swarm configuration: {0}")]
    InvalidConfig(String),
    #[error("no feasible particle at initialization: the penetration target cannot be met within the size bounds")]
    InfeasibleScenario,
    #[error("position cannot satisfy the penetration target: {0}")]
    InfeasibleEncoding(String),
    #[error("base-case load flow failed: {0}")]
    BaseCase(#[from] LoadFlowError),
}

/// Kind, power factor and reactive sign for one optimized unit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DgTemplate {
    pub kind: DgKind,
    pub pf: f64,
    pub sign: i8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub c1: f64,
    pub c2: f64,
    pub n_particles: usize,
    pub max_iter: usize,
    /// Velocity clamp on size dimensions, kW. Location dimensions clamp
    /// to a quarter of the candidate count.
    pub v_max_kw: f64,
    pub w_start: f64,
    pub w_end: f64,
    pub seed: u64,
    /// Per-unit size box, kW; one entry per template.
    pub size_bounds_kw: Vec<(f64, f64)>,
    /// Bus voltage band (V_min, V_max) in per-unit.
    pub v_limits: (f64, f64),
    pub penalty_weight: f64,
    /// Optional early-termination threshold on the best fitness.
    pub min_fitness: Option<f64>,
    pub templates: Vec<DgTemplate>,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        SwarmConfig {
            c1: 1.0,
            c2: 1.0,
            n_particles: 50,
            max_iter: 100,
            v_max_kw: 125.0,
            w_start: 0.9,
            w_end: 0.4,
            seed: 1,
            size_bounds_kw: vec![(0.0, 2000.0); 3],
            v_limits: (0.90, 1.05),
            penalty_weight: 1e3,
            min_fitness: None,
            templates: vec![
                DgTemplate { kind: DgKind::Pv, pf: 1.0, sign: 1 },
                DgTemplate { kind: DgKind::Wind, pf: 0.9, sign: 1 },
                DgTemplate { kind: DgKind::MicroTurbine, pf: 0.9, sign: 1 },
            ],
        }
    }
}

impl SwarmConfig {
    /// The published parameter set: c1 = c2 = 1, 50 particles, velocity
    /// clamp ±125, 100 iterations, six-dimensional particles.
    pub fn table2(seed: u64) -> Self {
        SwarmConfig {
            seed,
            ..SwarmConfig::default()
        }
    }

    pub fn n_units(&self) -> usize {
        self.templates.len()
    }

    /// Particle dimensionality: one size and one location gene per unit.
    pub fn dim(&self) -> usize {
        2 * self.templates.len()
    }

    pub fn validate(&self) -> Result<(), SwarmError> {
        let fail = |msg: String| Err(SwarmError::InvalidConfig(msg));
        if !(0.0..=2.0).contains(&self.c1) || !(0.0..=2.0).contains(&self.c2) {
            return fail(format!("c1/c2 must lie in [0, 2], got {}/{}", self.c1, self.c2));
        }
        if self.n_particles < 2 {
            return fail("at least two particles required".into());
        }
        if self.max_iter < 1 {
            return fail("max_iter must be at least 1".into());
        }
        let v_max_ok = self.v_max_kw > 0.0;
        if !v_max_ok {
            return fail("velocity clamp must be positive".into());
        }
        let inertia_ok = self.w_start >= self.w_end && self.w_end > 0.0;
        if !inertia_ok {
            return fail("inertia weights need w_start >= w_end > 0".into());
        }
        if self.templates.is_empty() {
            return fail("at least one DG template required".into());
        }
        if self.size_bounds_kw.len() != self.templates.len() {
            return fail("one size bound pair per template required".into());
        }
        for (lo, hi) in &self.size_bounds_kw {
            let bounds_ok = *lo >= 0.0 && hi >= lo;
            if !bounds_ok {
                return fail(format!("bad size bounds ({lo}, {hi})"));
            }
        }
        for t in &self.templates {
            let pf_ok = t.pf > 0.0 && t.pf <= 1.0;
            if !pf_ok {
                return fail(format!("template pf {} outside (0, 1]", t.pf));
            }
            if t.sign != 1 && t.sign != -1 {
                return fail(format!("template sign {} must be +1 or -1", t.sign));
            }
        }
        let band_ok = self.v_limits.0 < self.v_limits.1;
        if !band_ok {
            return fail("voltage limits must satisfy V_min < V_max".into());
        }
        if self.penalty_weight < 0.0 {
            return fail("penalty weight must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Particle {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub pbest_x: Vec<f64>,
    pub pbest_f: f64,
}

#[derive(Debug, Clone)]
pub struct SwarmResult {
    pub gbest_x: Vec<f64>,
    pub gbest_f: f64,
    /// Best fitness after each iteration; non-increasing.
    pub history: Vec<f64>,
    /// Last iteration (1-based) that improved the best fitness by more
    /// than 1e-8; 0 when the initial best was never beaten.
    pub converged_at: usize,
    pub evaluations: usize,
}

/// Everything a fitness evaluation needs besides the position itself.
pub struct FitnessContext<'a> {
    pub network: &'a Network,
    pub candidates: &'a [BusId],
    /// Penetration equality target; `None` leaves sizes free inside their
    /// bounds.
    pub spec: Option<&'a PenetrationSpec>,
    pub config: &'a SwarmConfig,
    pub base_loss: f64,
    pub solve_opts: SolveOptions,
}

impl<'a> FitnessContext<'a> {
    pub fn new(
        network: &'a Network,
        candidates: &'a [BusId],
        spec: Option<&'a PenetrationSpec>,
        config: &'a SwarmConfig,
    ) -> Result<Self, SwarmError> {
        let solve_opts = SolveOptions::default();
        let base = solve(network, &[], &solve_opts)?;
        if !base.converged {
            return Err(SwarmError::BaseCase(LoadFlowError::NonConvergence {
                max_iter: solve_opts.max_iter,
            }));
        }
        Ok(FitnessContext {
            network,
            candidates,
            spec,
            config,
            base_loss: base.p_loss_total,
            solve_opts,
        })
    }

    /// Fitness assigned to positions that cannot be evaluated: repair
    /// failures and non-convergent flows.
    pub fn sentinel(&self) -> f64 {
        1e3 * self.base_loss
    }
}

/// Proportionally rescales `sizes` toward `target` while honoring the
/// per-dimension box. Dimensions that would leave the box are pinned to
/// the violated bound and the remainder is redistributed over the rest.
fn repair_sizes(sizes: &mut [f64], bounds: &[(f64, f64)], target: f64) -> Result<(), String> {
    let min_sum: f64 = bounds.iter().map(|b| b.0).sum();
    let max_sum: f64 = bounds.iter().map(|b| b.1).sum();
    if target < min_sum - 1e-9 || target > max_sum + 1e-9 {
        return Err(format!(
            "target {target} kW outside reachable [{min_sum}, {max_sum}] kW"
        ));
    }

    let mut locked = vec![false; sizes.len()];
    for _ in 0..=sizes.len() {
        let locked_sum: f64 = sizes
            .iter()
            .zip(&locked)
            .filter(|(_, l)| **l)
            .map(|(s, _)| s)
            .sum();
        let free: Vec<usize> = (0..sizes.len()).filter(|&d| !locked[d]).collect();
        if free.is_empty() {
            break;
        }
        let free_sum: f64 = free.iter().map(|&d| sizes[d]).sum();
        let residual = target - locked_sum;
        if free_sum <= 0.0 {
            if residual.abs() <= 1e-9 * target.max(1.0) {
                break;
            }
            return Err("all-zero free sizes cannot be rescaled".into());
        }
        let scale = residual / free_sum;
        let mut any_pinned = false;
        for &d in &free {
            let scaled = sizes[d] * scale;
            if scaled > bounds[d].1 {
                sizes[d] = bounds[d].1;
                locked[d] = true;
                any_pinned = true;
            } else if scaled < bounds[d].0 {
                sizes[d] = bounds[d].0;
                locked[d] = true;
                any_pinned = true;
            }
        }
        if !any_pinned {
            for &d in &free {
                sizes[d] *= scale;
            }
            break;
        }
    }

    let total: f64 = sizes.iter().sum();
    if (total - target).abs() > 1e-9 * target.max(1.0) {
        return Err(format!("repair landed at {total} kW instead of {target} kW"));
    }
    Ok(())
}

/// Decodes a position into DG units: size genes in kW, location genes
/// floored onto the candidate list (duplicates allowed; their injections
/// simply sum at the shared bus). With a penetration spec the sizes are
/// repaired so their total meets the target exactly.
pub fn decode_position(ctx: &FitnessContext, x: &[f64]) -> Result<Vec<DgUnit>, SwarmError> {
    let m = ctx.config.n_units();
    assert_eq!(x.len(), 2 * m, "position has {} dims, expected {}", x.len(), 2 * m);
    let k = ctx.candidates.len();
    assert!(k >= 1, "candidate list is empty");

    let mut sizes_kw: Vec<f64> = (0..m)
        .map(|d| x[d].clamp(ctx.config.size_bounds_kw[d].0, ctx.config.size_bounds_kw[d].1))
        .collect();

    if let Some(spec) = ctx.spec {
        let target_kw = spec.pdg_pp * ctx.network.s_base_mva() * 1e3;
        if sizes_kw.iter().sum::<f64>() <= 0.0 && target_kw > 0.0 {
            return Err(SwarmError::InfeasibleEncoding(
                "all size genes are zero".into(),
            ));
        }
        repair_sizes(&mut sizes_kw, &ctx.config.size_bounds_kw, target_kw)
            .map_err(SwarmError::InfeasibleEncoding)?;
    }

    let units = (0..m)
        .map(|d| {
            let gene = x[m + d];
            let idx = (gene.max(0.0).floor() as usize).min(k - 1);
            let template = ctx.config.templates[d];
            DgUnit::new(
                template.kind,
                ctx.candidates[idx],
                sizes_kw[d] / (ctx.network.s_base_mva() * 1e3),
                template.pf,
                template.sign,
            )
        })
        .collect();
    Ok(units)
}

enum EvalStatus {
    Feasible,
    Priced,
}

fn evaluate(ctx: &FitnessContext, x: &[f64]) -> (f64, EvalStatus) {
    let units = match decode_position(ctx, x) {
        Ok(units) => units,
        Err(_) => return (ctx.sentinel(), EvalStatus::Priced),
    };
    let sol = match solve(ctx.network, &units, &ctx.solve_opts) {
        Ok(sol) if sol.converged => sol,
        _ => return (ctx.sentinel(), EvalStatus::Priced),
    };

    let (v_min, v_max) = ctx.config.v_limits;
    let mut violation = 0.0;
    for i in 0..ctx.network.n_buses() {
        let vm = sol.vm(i);
        let under = (v_min - vm).max(0.0);
        let over = (vm - v_max).max(0.0);
        violation += under * under + over * over;
    }
    for (br, current) in ctx.network.branches().iter().zip(&sol.i_branch) {
        if let Some(rated) = ctx.network.i_rated_up_pu(br.to.index()) {
            let excess = (current.norm() - rated).max(0.0);
            violation += excess * excess;
        }
    }

    (
        sol.p_loss_total + ctx.config.penalty_weight * violation,
        EvalStatus::Feasible,
    )
}

/// Loss-plus-penalty fitness of one position. Positions that cannot be
/// decoded or whose flow does not converge price at the sentinel; nothing
/// here errors.
pub fn fitness(ctx: &FitnessContext, x: &[f64]) -> f64 {
    evaluate(ctx, x).0
}

fn velocity_clamp(config: &SwarmConfig, k: usize, d: usize) -> f64 {
    if d < config.n_units() {
        config.v_max_kw
    } else {
        k as f64 / 4.0
    }
}

fn position_bounds(config: &SwarmConfig, k: usize, d: usize) -> (f64, f64) {
    if d < config.n_units() {
        config.size_bounds_kw[d]
    } else {
        (0.0, k as f64 - LOCATION_MARGIN)
    }
}

/// One velocity/position update over the whole swarm. `r1` and `r2` are
/// drawn fresh per particle per dimension, particle-major then
/// dimension-major, so a seeded stream replays exactly.
pub fn step(
    particles: &mut [Particle],
    gbest_x: &[f64],
    iter: usize,
    config: &SwarmConfig,
    k: usize,
    rng: &mut impl Rng,
) {
    let w = config.w_start
        - (config.w_start - config.w_end) * (iter as f64) / (config.max_iter as f64);
    for particle in particles.iter_mut() {
        for (d, &gbest_d) in gbest_x.iter().enumerate() {
            let r1: f64 = rng.gen();
            let r2: f64 = rng.gen();
            let clamp = velocity_clamp(config, k, d);
            let v = w * particle.v[d]
                + config.c1 * r1 * (particle.pbest_x[d] - particle.x[d])
                + config.c2 * r2 * (gbest_d - particle.x[d]);
            particle.v[d] = v.clamp(-clamp, clamp);
            let (lo, hi) = position_bounds(config, k, d);
            particle.x[d] = (particle.x[d] + particle.v[d]).clamp(lo, hi);
        }
    }
}

/// Full swarm run over the ranking's candidate buses. Positions start
/// uniform inside their bounds, velocities uniform inside their clamps;
/// the loop runs `max_iter` iterations unless the optional minimum-fitness
/// termination fires first.
pub fn optimize(
    network: &Network,
    ranking: &MliRanking,
    spec: Option<&PenetrationSpec>,
    config: &SwarmConfig,
) -> Result<SwarmResult, SwarmError> {
    config.validate()?;
    if ranking.candidates.is_empty() {
        return Err(SwarmError::InvalidConfig(
            "ranking carries no candidate buses".into(),
        ));
    }
    let ctx = FitnessContext::new(network, &ranking.candidates, spec, config)?;
    let k = ranking.candidates.len();
    let dim = config.dim();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unit = |rng: &mut ChaCha8Rng| rng.gen::<f64>();

    let mut particles: Vec<Particle> = (0..config.n_particles)
        .map(|_| {
            let mut x = vec![0.0; dim];
            for (d, slot) in x.iter_mut().enumerate() {
                let (lo, hi) = position_bounds(config, k, d);
                *slot = lo + unit(&mut rng) * (hi - lo);
            }
            let mut v = vec![0.0; dim];
            for (d, slot) in v.iter_mut().enumerate() {
                let clamp = velocity_clamp(config, k, d);
                *slot = (2.0 * unit(&mut rng) - 1.0) * clamp;
            }
            Particle {
                pbest_x: x.clone(),
                pbest_f: f64::INFINITY,
                x,
                v,
            }
        })
        .collect();

    let mut any_feasible = false;
    let mut gbest_f = f64::INFINITY;
    let mut gbest_x = particles[0].x.clone();
    for particle in &mut particles {
        let (f, status) = evaluate(&ctx, &particle.x);
        if matches!(status, EvalStatus::Feasible) {
            any_feasible = true;
        }
        particle.pbest_f = f;
        if f < gbest_f {
            gbest_f = f;
            gbest_x = particle.x.clone();
        }
    }
    if !any_feasible {
        return Err(SwarmError::InfeasibleScenario);
    }

    let mut evaluations = config.n_particles;
    let mut history = Vec::with_capacity(config.max_iter);
    let init_gbest = gbest_f;

    for iter in 0..config.max_iter {
        step(&mut particles, &gbest_x, iter, config, k, &mut rng);
        for particle in &mut particles {
            let (f, _) = evaluate(&ctx, &particle.x);
            evaluations += 1;
            if f < particle.pbest_f {
                particle.pbest_f = f;
                particle.pbest_x.copy_from_slice(&particle.x);
            }
            if f < gbest_f {
                gbest_f = f;
                gbest_x.copy_from_slice(&particle.x);
            }
        }
        history.push(gbest_f);
        if let Some(min_fitness) = config.min_fitness {
            if gbest_f <= min_fitness {
                break;
            }
        }
    }

    let mut converged_at = 0;
    let mut prev = init_gbest;
    for (i, &h) in history.iter().enumerate() {
        if prev - h > CONVERGENCE_EPS {
            converged_at = i + 1;
        }
        prev = h;
    }

    Ok(SwarmResult {
        gbest_x,
        gbest_f,
        history,
        converged_at,
        evaluations,
    })
}
