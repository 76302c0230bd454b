//! Projected particle Wasserstein gradient flow.
//!
//! Each iteration moves every particle along the ascent field of the
//! criterion (or the steepest-ascent direction for a repeated `λ_min`) and
//! projects it back onto the design space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::design::{info_matrix, Criterion, DesignMeasure, InfoMatrix};
use crate::error::{DesignError, Result};
use crate::esteep::{multiplicity, steepest_direction_with, EsteepConfig};
use crate::models::{ActiveSet, DesignSpace, RegressionModel};
use crate::wgrad::{ascent_field_with, grad_e_simple_with};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    Fixed,
    Backtracking,
}

/// Eigenvalue band used by the flow. Wider than the esteep default: with
/// `1e-6` the direction flips between nearly equal eigenvalues from one step
/// to the next and the criterion zigzags even for small fixed steps.
pub const FLOW_TOL_MULT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub n_particles: usize,
    pub max_iters: usize,
    /// Base step size.
    pub step: f64,
    pub step_mode: StepMode,
    pub seed: u64,
    /// Stationarity threshold on `‖g‖_ρ` (smooth criteria) or `u*` (E).
    pub stop_tol: f64,
    pub project_each_step: bool,
    pub criterion: Criterion,
    pub esteep: EsteepConfig,
    /// Step along the normalised direction instead of the raw field.
    pub unit_step: bool,
    /// Fresh initialisations tried when the start is singular.
    pub max_restarts: usize,
    /// Hold constraints that the direction pushes against fixed and
    /// recompute the direction within the remaining tangent space.
    pub tangent_directions: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            n_particles: 100,
            max_iters: 1000,
            step: 0.05,
            step_mode: StepMode::Fixed,
            seed: 0,
            stop_tol: 1e-6,
            project_each_step: true,
            criterion: Criterion::E,
            esteep: EsteepConfig {
                tol_mult: FLOW_TOL_MULT,
                ..EsteepConfig::default()
            },
            unit_step: false,
            max_restarts: 10,
            tangent_directions: true,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step >= 0.0) {
            return Err(DesignError::InvalidArgument(format!("invalid step {}", self.step)));
        }
        if self.n_particles == 0 {
            return Err(DesignError::InvalidArgument("need at least one particle".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// Criterion value (maximise convention) after this iteration.
    pub value: f64,
    /// `‖g‖_ρ` of the field used for this iteration, or `u*` for the
    /// steepest-ascent direction. Zero for the initial record.
    pub dirnorm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIters,
    Stationary,
    /// Backtracking could not find a non-decreasing step.
    Stalled,
    Infeasible,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::MaxIters => "max_iters",
            Termination::Stationary => "stationary",
            Termination::Stalled => "stalled",
            Termination::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub records: Vec<TraceRecord>,
    pub final_measure: DesignMeasure,
    pub termination: Termination,
    /// Seed of the initialisation actually used (differs from the
    /// configured one after singular-start restarts).
    pub seed_used: u64,
}

impl FlowTrace {
    pub fn final_value(&self) -> f64 {
        self.records.last().map(|r| r.value).unwrap_or(f64::NEG_INFINITY)
    }
}

/// I.i.d. uniform particles on the design space, deterministic in `seed`.
pub fn init_uniform(space: &DesignSpace, n: usize, seed: u64) -> Result<DesignMeasure> {
    if n == 0 {
        return Err(DesignError::InvalidArgument("need at least one particle".into()));
    }
    let d = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = vec![0.0; n * d];
    for x in coords.chunks_exact_mut(d) {
        space.sample_into(&mut rng, x);
    }
    DesignMeasure::new(d, coords)
}

/// Direction used by one flow iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    /// Row-major `N × d`.
    pub velocity: Vec<f64>,
    /// `u*` when the steepest-ascent subproblem was solved, else `‖g‖_ρ`.
    pub dirnorm: f64,
    pub stop: bool,
}

/// The direction the flow takes at `measure`, computed from scratch.
pub fn flow_direction(
    measure: &DesignMeasure,
    model: &RegressionModel,
    space: &DesignSpace,
    cfg: &FlowConfig,
) -> Result<Direction> {
    let info = info_matrix(measure, model)?;
    compute_direction(&info, measure, model, cfg, cfg.project_each_step.then_some(space))
}

fn compute_direction(
    info: &InfoMatrix,
    measure: &DesignMeasure,
    model: &RegressionModel,
    cfg: &FlowConfig,
    space: Option<&DesignSpace>,
) -> Result<Direction> {
    let mut active = ActiveSet::default();
    let mut dir = direction_in(info, measure, model, cfg, &active)?;
    let Some(space) = space.filter(|_| cfg.tangent_directions) else {
        return Ok(dir);
    };
    // The esteep direction changes globally when constraints are added, so
    // the binding set is grown a few times.
    for _ in 0..4 {
        let binding = ActiveSet::binding(space, measure.coords(), &dir.velocity);
        if binding.is_empty() {
            break;
        }
        active.merge(&binding);
        dir = direction_in(info, measure, model, cfg, &active)?;
    }
    Ok(dir)
}

fn direction_in(
    info: &InfoMatrix,
    measure: &DesignMeasure,
    model: &RegressionModel,
    cfg: &FlowConfig,
    active: &ActiveSet,
) -> Result<Direction> {
    let d = measure.d();
    if let Criterion::E = cfg.criterion {
        let sub = multiplicity(info, cfg.esteep.tol_mult);
        if sub.s1 > 1 {
            let dir = steepest_direction_with(info, measure, model, &cfg.esteep, active)?;
            return Ok(Direction {
                stop: dir.stop,
                dirnorm: dir.u_star,
                velocity: dir.velocity,
            });
        }
        let mut g = grad_e_simple_with(info, measure, model, cfg.esteep.tol_mult)?;
        active.restrict(&mut g.vectors, d);
        let norm = velocity_norm(&g.vectors, d);
        return Ok(Direction {
            stop: norm <= cfg.stop_tol.min(cfg.esteep.stop_tol),
            dirnorm: norm,
            velocity: g.vectors,
        });
    }
    let mut g = ascent_field_with(info, measure, model, &cfg.criterion, cfg.esteep.tol_mult)?;
    active.restrict(&mut g.vectors, d);
    let norm = velocity_norm(&g.vectors, d);
    Ok(Direction {
        stop: norm <= cfg.stop_tol,
        dirnorm: norm,
        velocity: g.vectors,
    })
}

fn moved(
    measure: &DesignMeasure,
    velocity: &[f64],
    alpha: f64,
    space: Option<&DesignSpace>,
) -> DesignMeasure {
    let mut next = measure.clone();
    let d = measure.d();
    for (x, v) in next.coords_mut().chunks_exact_mut(d).zip(velocity.chunks_exact(d)) {
        x.iter_mut().zip(v).for_each(|(xi, vi)| *xi += alpha * vi);
        if let Some(space) = space {
            space.project_in_place(x);
        }
    }
    next
}

/// Halves `alpha0` (at most 20 times) until moving along `field` does not
/// decrease the criterion by more than `1e-12`. Returns 0 when every trial
/// fails.
pub fn backtrack_step(
    measure: &DesignMeasure,
    field: &[f64],
    alpha0: f64,
    model: &RegressionModel,
    crit: &Criterion,
    space: Option<&DesignSpace>,
) -> Result<f64> {
    let base = crit.value(&info_matrix(measure, model)?)?;
    let mut alpha = alpha0;
    for _ in 0..=20 {
        let trial = moved(measure, field, alpha, space);
        let value = crit.value(&info_matrix(&trial, model)?)?;
        if value >= base - 1e-12 {
            return Ok(alpha);
        }
        alpha *= 0.5;
    }
    Ok(0.0)
}

/// Runs the flow from `measure0`, or from a uniform initialisation.
pub fn run(
    model: &RegressionModel,
    space: &DesignSpace,
    cfg: &FlowConfig,
    measure0: Option<DesignMeasure>,
) -> Result<FlowTrace> {
    cfg.validate()?;
    cfg.criterion.check_dim(model.m())?;
    if space.dim() != model.d() {
        return Err(DesignError::DimensionMismatch {
            expected: model.d(),
            got: space.dim(),
        });
    }
    let (mut measure, seed_used) = initial_measure(model, space, cfg, measure0)?;
    let project = cfg.project_each_step.then_some(space);

    let mut info = info_matrix(&measure, model)?;
    let mut value = cfg.criterion.value(&info)?;
    let mut records = Vec::with_capacity(cfg.max_iters + 1);
    records.push(TraceRecord {
        iter: 0,
        value,
        dirnorm: 0.0,
        step: 0.0,
    });
    let mut termination = Termination::MaxIters;

    for iter in 1..=cfg.max_iters {
        let mut dir = compute_direction(&info, &measure, model, cfg, project)?;
        if dir.stop {
            termination = Termination::Stationary;
            break;
        }
        if cfg.unit_step && dir.dirnorm > 0.0 {
            let norm = velocity_norm(&dir.velocity, measure.d());
            dir.velocity.iter_mut().for_each(|v| *v /= norm);
        }
        let alpha = match cfg.step_mode {
            StepMode::Fixed => cfg.step,
            StepMode::Backtracking => {
                let a = backtrack_step(&measure, &dir.velocity, cfg.step, model, &cfg.criterion, project)?;
                if a == 0.0 {
                    termination = Termination::Stalled;
                    break;
                }
                a
            }
        };
        measure = moved(&measure, &dir.velocity, alpha, project);
        info = info_matrix(&measure, model)?;
        value = cfg.criterion.value(&info)?;
        records.push(TraceRecord {
            iter,
            value,
            dirnorm: dir.dirnorm,
            step: alpha,
        });
        if cfg.criterion.needs_inverse() && !value.is_finite() {
            termination = Termination::Infeasible;
            break;
        }
    }

    Ok(FlowTrace {
        records,
        final_measure: measure,
        termination,
        seed_used,
    })
}

fn velocity_norm(v: &[f64], d: usize) -> f64 {
    let n = (v.len() / d).max(1);
    (v.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt()
}

fn initial_measure(
    model: &RegressionModel,
    space: &DesignSpace,
    cfg: &FlowConfig,
    measure0: Option<DesignMeasure>,
) -> Result<(DesignMeasure, u64)> {
    let usable = |mu: &DesignMeasure| -> Result<bool> {
        if !cfg.criterion.needs_inverse() {
            return Ok(true);
        }
        Ok(!info_matrix(mu, model)?.is_singular())
    };
    if let Some(mu) = measure0 {
        if mu.d() != model.d() {
            return Err(DesignError::DimensionMismatch {
                expected: model.d(),
                got: mu.d(),
            });
        }
        if mu.points().any(|x| !space.contains(x, 1e-12)) {
            return Err(DesignError::InvalidArgument(
                "initial measure lies outside the design space".into(),
            ));
        }
        if usable(&mu)? {
            return Ok((mu, cfg.seed));
        }
    } else {
        let mu = init_uniform(space, cfg.n_particles, cfg.seed)?;
        if usable(&mu)? {
            return Ok((mu, cfg.seed));
        }
    }
    for r in 1..=cfg.max_restarts as u64 {
        let seed = cfg.seed.wrapping_add(r);
        let mu = init_uniform(space, cfg.n_particles, seed)?;
        if usable(&mu)? {
            return Ok((mu, seed));
        }
    }
    Err(DesignError::Infeasible(format!(
        "information matrix singular for {} particles after {} restarts (m = {})",
        cfg.n_particles,
        cfg.max_restarts,
        model.m()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_init_is_deterministic_and_feasible() {
        let cube = DesignSpace::cube(5, -1.0, 1.0).unwrap();
        let a = init_uniform(&cube, 100, 7).unwrap();
        let b = init_uniform(&cube, 100, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.points().all(|x| cube.contains(x, 0.0)));
        let ball = DesignSpace::ball(3, 1.0).unwrap();
        let c = init_uniform(&ball, 500, 1).unwrap();
        assert!(c.points().all(|x| ball.contains(x, 1e-15)));
    }

    #[test]
    fn uniform_mean_concentrates() {
        let cube = DesignSpace::cube(5, -1.0, 1.0).unwrap();
        // ‖mean‖² has expectation d·(1/3)/n = 0.0167, so 0.35 is > 2.7 sd
        let mut failures = 0;
        for seed in 0..50 {
            let mu = init_uniform(&cube, 100, seed).unwrap();
            let mut mean = [0.0; 5];
            for x in mu.points() {
                for (m, v) in mean.iter_mut().zip(x) {
                    *m += v / 100.0;
                }
            }
            if crate::models::norm(&mean) > 0.35 {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures} seeds exceeded the bound");
    }

    #[test]
    fn zero_step_keeps_measure() {
        let model = RegressionModel::second_order(2).unwrap();
        let cube = DesignSpace::cube(2, -1.0, 1.0).unwrap();
        let cfg = FlowConfig {
            n_particles: 20,
            max_iters: 5,
            step: 0.0,
            criterion: Criterion::D,
            ..Default::default()
        };
        let trace = run(&model, &cube, &cfg, None).unwrap();
        let start = init_uniform(&cube, 20, 0).unwrap();
        assert_eq!(trace.final_measure, start);
        assert_eq!(trace.records.len(), 6);
        assert!(trace.records.iter().all(|r| r.value == trace.records[0].value));
    }

    #[test]
    fn singular_start_resamples_or_fails() {
        let model = RegressionModel::second_order(2).unwrap();
        let cube = DesignSpace::cube(2, -1.0, 1.0).unwrap();
        // fewer particles than features: always singular
        let cfg = FlowConfig {
            n_particles: 3,
            max_iters: 2,
            criterion: Criterion::D,
            ..Default::default()
        };
        assert!(matches!(run(&model, &cube, &cfg, None), Err(DesignError::Infeasible(_))));
        // a singular measure0 falls back to fresh uniform draws
        let mu = DesignMeasure::new(2, vec![0.0; 40]).unwrap();
        let cfg = FlowConfig {
            n_particles: 20,
            max_iters: 2,
            criterion: Criterion::D,
            ..Default::default()
        };
        let trace = run(&model, &cube, &cfg, Some(mu)).unwrap();
        assert_eq!(trace.seed_used, 1);
        assert!(trace.records[0].value.is_finite());
    }

    #[test]
    fn backtracking_accepts_small_step_and_shrinks_huge_one() {
        let model = RegressionModel::second_order(2).unwrap();
        let cube = DesignSpace::cube(2, -1.0, 1.0).unwrap();
        let mu = init_uniform(&cube, 30, 4).unwrap();
        let info = info_matrix(&mu, &model).unwrap();
        let g = ascent_field_with(&info, &mu, &model, &Criterion::D, 1e-6).unwrap();
        let a = backtrack_step(&mu, &g.vectors, 1e-4, &model, &Criterion::D, Some(&cube)).unwrap();
        assert_eq!(a, 1e-4);

        let cfg = EsteepConfig::default();
        let dir = steepest_direction_with(&info, &mu, &model, &cfg, &ActiveSet::default()).unwrap();
        let before = Criterion::E.value(&info).unwrap();
        let a = backtrack_step(&mu, &dir.velocity, 1e6, &model, &Criterion::E, Some(&cube)).unwrap();
        assert!(a < 1e6);
        let after = Criterion::E
            .value(&info_matrix(&moved(&mu, &dir.velocity, a, Some(&cube)), &model).unwrap())
            .unwrap();
        assert!(after >= before - 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = RegressionModel::second_order(2).unwrap();
        let cube = DesignSpace::cube(3, -1.0, 1.0).unwrap();
        assert!(run(&model, &cube, &FlowConfig::default(), None).is_err());
        let square = DesignSpace::cube(2, -1.0, 1.0).unwrap();
        let outside = DesignMeasure::new(2, vec![2.0, 0.0]).unwrap();
        assert!(run(&model, &square, &FlowConfig::default(), Some(outside)).is_err());
        let cfg = FlowConfig { step: -1.0, ..Default::default() };
        assert!(run(&model, &square, &cfg, None).is_err());
    }

    #[test]
    fn tangent_directions_respect_binding_constraints() {
        let model = RegressionModel::second_order(2).unwrap();
        let cube = DesignSpace::cube(2, -1.0, 1.0).unwrap();
        let mut coords = init_uniform(&cube, 30, 2).unwrap().coords().to_vec();
        // pin a few particles to faces and corners
        coords[0] = 1.0;
        coords[2] = -1.0;
        coords[3] = -1.0;
        coords[5] = 1.0;
        let mu = DesignMeasure::new(2, coords).unwrap();
        for crit in [Criterion::D, Criterion::A, Criterion::E] {
            let cfg = FlowConfig { criterion: crit, ..Default::default() };
            let free = FlowConfig { tangent_directions: false, ..cfg.clone() };
            let dir = flow_direction(&mu, &model, &cube, &cfg).unwrap();
            let raw = flow_direction(&mu, &model, &cube, &free).unwrap();
            let binding = ActiveSet::binding(&cube, mu.coords(), &dir.velocity);
            assert!(binding.is_empty(), "{binding:?}");
            // interior particles are untouched for the smooth criteria
            if !matches!(cfg.criterion, Criterion::E) {
                for p in 3..30 {
                    let x = mu.point(p);
                    if x.iter().all(|v| v.abs() < 1.0) {
                        assert_eq!(&dir.velocity[2 * p..2 * p + 2], &raw.velocity[2 * p..2 * p + 2]);
                    }
                }
            }
        }
    }

    #[test]
    fn flow_direction_matches_first_step() {
        let model = RegressionModel::second_order(2).unwrap();
        let ball = DesignSpace::ball(2, 1.0).unwrap();
        let cfg = FlowConfig { n_particles: 25, max_iters: 1, step: 0.01, ..Default::default() };
        let trace = run(&model, &ball, &cfg, None).unwrap();
        let mu = init_uniform(&ball, 25, 0).unwrap();
        let dir = flow_direction(&mu, &model, &ball, &cfg).unwrap();
        assert_eq!(trace.records[1].dirnorm, dir.dirnorm);
        let mut expected = mu.coords().to_vec();
        for (x, v) in expected.chunks_exact_mut(2).zip(dir.velocity.chunks_exact(2)) {
            x[0] += 0.01 * v[0];
            x[1] += 0.01 * v[1];
            ball.project_in_place(x);
        }
        assert_eq!(trace.final_measure.coords(), &expected[..]);
    }
}
