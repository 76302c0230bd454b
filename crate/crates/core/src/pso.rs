//! Particle swarm optimisation over whole designs, used as a baseline.
//!
//! Every swarm member is a complete design of `n_points` equally weighted
//! points, flattened into one vector of length `n_points · d`.

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::design::{criterion_value, moment_matrix, Criterion, DesignMeasure, InfoMatrix};
use crate::error::{DesignError, Result};
use crate::flow::{FlowTrace, Termination, TraceRecord};
use crate::models::{DesignSpace, RegressionModel};

#[derive(Debug, Clone, PartialEq)]
pub struct PsoConfig {
    pub swarm_size: usize,
    /// Design points per swarm member.
    pub n_points: usize,
    pub max_iters: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
    /// Per-coordinate velocity bound as a fraction of the space's extent.
    pub velocity_clamp: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 100,
            n_points: 100,
            max_iters: 1000,
            inertia: 0.7298,
            cognitive: 1.49618,
            social: 1.49618,
            seed: 0,
            velocity_clamp: 0.5,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size == 0 || self.n_points == 0 {
            return Err(DesignError::InvalidArgument(
                "swarm size and points per design must be positive".into(),
            ));
        }
        if !(self.inertia > 0.0 && self.inertia < 1.0) {
            return Err(DesignError::InvalidArgument("inertia must lie in (0, 1)".into()));
        }
        if !(self.cognitive > 0.0 && self.social > 0.0) {
            return Err(DesignError::InvalidArgument(
                "acceleration coefficients must be positive".into(),
            ));
        }
        if !(self.velocity_clamp > 0.0) {
            return Err(DesignError::InvalidArgument("velocity clamp must be positive".into()));
        }
        Ok(())
    }
}

/// Criterion evaluation on flat designs. D and E skip the full
/// eigen-decomposition.
fn fitness(model: &RegressionModel, crit: &Criterion, coords: &[f64]) -> f64 {
    let m = moment_matrix(model, coords);
    if m.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    match crit {
        Criterion::D => log_det_or_neg_inf(m),
        Criterion::E => m.symmetric_eigenvalues().min(),
        _ => InfoMatrix::from_matrix(m)
            .and_then(|info| crit.value(&info))
            .unwrap_or(f64::NEG_INFINITY),
    }
}

fn log_det_or_neg_inf(m: DMatrix<f64>) -> f64 {
    let max_diag = m.diagonal().max().max(1.0);
    match Cholesky::new(m) {
        Some(ch) => {
            let l = ch.l_dirty();
            let mut acc = 0.0;
            for i in 0..l.nrows() {
                let p = l[(i, i)] * l[(i, i)];
                if p <= 1e-10 * max_diag {
                    return f64::NEG_INFINITY;
                }
                acc += p.ln();
            }
            acc
        }
        None => f64::NEG_INFINITY,
    }
}

pub fn pso_run(
    model: &RegressionModel,
    space: &DesignSpace,
    crit: &Criterion,
    cfg: &PsoConfig,
) -> Result<FlowTrace> {
    cfg.validate()?;
    crit.check_dim(model.m())?;
    if space.dim() != model.d() {
        return Err(DesignError::DimensionMismatch {
            expected: model.d(),
            got: space.dim(),
        });
    }
    let d = model.d();
    let dim = cfg.n_points * d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vmax: Vec<f64> = (0..d).map(|j| cfg.velocity_clamp * space.coordinate_span(j)).collect();

    let mut positions: Vec<Vec<f64>> = (0..cfg.swarm_size)
        .map(|_| {
            let mut x = vec![0.0; dim];
            for p in x.chunks_exact_mut(d) {
                space.sample_into(&mut rng, p);
            }
            x
        })
        .collect();
    let mut velocities = vec![vec![0.0; dim]; cfg.swarm_size];
    let mut fit: Vec<f64> = positions.iter().map(|x| fitness(model, crit, x)).collect();
    let mut pbest = positions.clone();
    let mut pbest_fit = fit.clone();
    let mut gbest_idx = argmax(&pbest_fit);
    let mut gbest = pbest[gbest_idx].clone();
    let mut gbest_fit = pbest_fit[gbest_idx];

    let mut records = Vec::with_capacity(cfg.max_iters + 1);
    records.push(TraceRecord {
        iter: 0,
        value: gbest_fit,
        dirnorm: 0.0,
        step: 0.0,
    });

    for iter in 1..=cfg.max_iters {
        let mut vel_sq = 0.0;
        for ((x, v), pb) in positions.iter_mut().zip(&mut velocities).zip(&pbest) {
            for c in 0..dim {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let bound = vmax[c % d];
                let vc = cfg.inertia * v[c]
                    + cfg.cognitive * r1 * (pb[c] - x[c])
                    + cfg.social * r2 * (gbest[c] - x[c]);
                v[c] = vc.clamp(-bound, bound);
                x[c] += v[c];
                vel_sq += v[c] * v[c];
            }
            for p in x.chunks_exact_mut(d) {
                space.project_in_place(p);
            }
        }
        for (f, x) in fit.iter_mut().zip(&positions) {
            *f = fitness(model, crit, x);
        }
        for i in 0..cfg.swarm_size {
            if fit[i] > pbest_fit[i] {
                pbest_fit[i] = fit[i];
                pbest[i].copy_from_slice(&positions[i]);
            }
        }
        gbest_idx = argmax(&pbest_fit);
        if pbest_fit[gbest_idx] > gbest_fit {
            gbest_fit = pbest_fit[gbest_idx];
            gbest.copy_from_slice(&pbest[gbest_idx]);
        }
        records.push(TraceRecord {
            iter,
            value: gbest_fit,
            dirnorm: (vel_sq / cfg.swarm_size as f64).sqrt(),
            step: 1.0,
        });
    }

    Ok(FlowTrace {
        records,
        final_measure: DesignMeasure::new(d, gbest)?,
        termination: Termination::MaxIters,
        seed_used: cfg.seed,
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
    /// Sample standard deviation (zero for a single run).
    pub stdev: f64,
    /// Final global-best value of each run, in seed order.
    pub values: Vec<f64>,
}

impl EnsembleSummary {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(DesignError::InvalidArgument("empty ensemble".into()));
        }
        let n = values.len() as f64;
        let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let worst = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = values.iter().sum::<f64>() / n;
        let stdev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            best,
            mean,
            worst,
            stdev,
            values,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub summary: EnsembleSummary,
    pub traces: Vec<FlowTrace>,
}

/// Runs seeds `cfg.seed, cfg.seed + 1, …` independently (in parallel) and
/// aggregates the final values.
pub fn pso_ensemble(
    model: &RegressionModel,
    space: &DesignSpace,
    crit: &Criterion,
    cfg: &PsoConfig,
    n_runs: usize,
) -> Result<EnsembleResult> {
    if n_runs == 0 {
        return Err(DesignError::InvalidArgument("need at least one run".into()));
    }
    let traces: Vec<FlowTrace> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let run_cfg = PsoConfig {
                seed: cfg.seed.wrapping_add(r),
                ..cfg.clone()
            };
            pso_run(model, space, crit, &run_cfg)
        })
        .collect::<Result<_>>()?;
    let values = traces.iter().map(FlowTrace::final_value).collect();
    Ok(EnsembleResult {
        summary: EnsembleSummary::from_values(values)?,
        traces,
    })
}

/// Exact criterion value of the best design found by a run.
pub fn final_design_value(trace: &FlowTrace, model: &RegressionModel, crit: &Criterion) -> Result<f64> {
    criterion_value(&trace.final_measure, model, crit)
}
