//! Running one experiment with either engine.

use std::time::Instant;

use oedflow::pso::EnsembleSummary;
use oedflow::{pso_ensemble, pso_run, run, EsteepConfig, FlowConfig, FlowTrace, GlmWeight, PsoConfig, RegressionModel};

use crate::error::{BenchError, Result};
use crate::registry::{ExperimentSpec, ModelSpec, WeightChoice};

pub fn flow_config(spec: &ExperimentSpec, model: &RegressionModel, seed: u64) -> Result<FlowConfig> {
    Ok(FlowConfig {
        n_particles: spec.wgf.particles,
        max_iters: spec.wgf.iters,
        step: spec.wgf.step,
        step_mode: spec.wgf.step_mode,
        seed,
        criterion: spec.criterion.build(model.m())?,
        esteep: EsteepConfig {
            tol_mult: spec.wgf.band,
            ..EsteepConfig::default()
        },
        ..FlowConfig::default()
    })
}

pub fn pso_config(spec: &ExperimentSpec, seed: u64) -> PsoConfig {
    PsoConfig {
        swarm_size: spec.pso.swarm,
        n_points: spec.pso.points,
        max_iters: spec.pso.iters,
        seed,
        ..PsoConfig::default()
    }
}

/// One WGF run under a fixed weight convention.
#[derive(Debug, Clone)]
pub struct WgfRun {
    pub weight: Option<GlmWeight>,
    pub model: RegressionModel,
    pub config: FlowConfig,
    pub trace: FlowTrace,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone)]
pub struct WgfOutcome {
    /// Index into `runs` of the reported run.
    pub selected: usize,
    /// One run per candidate weight convention (a single run for linear
    /// models).
    pub runs: Vec<WgfRun>,
}

impl WgfOutcome {
    pub fn chosen(&self) -> &WgfRun {
        &self.runs[self.selected]
    }
}

fn weights_for(model: &ModelSpec) -> Vec<Option<GlmWeight>> {
    match model {
        ModelSpec::SecondOrder { .. } => vec![None],
        ModelSpec::Logistic { weight, .. } => weight.candidates().into_iter().map(Some).collect(),
    }
}

pub fn run_wgf(spec: &ExperimentSpec, seed: u64) -> Result<WgfOutcome> {
    let space = spec.space.build()?;
    let mut runs = Vec::new();
    for weight in weights_for(&spec.model) {
        let model = spec.model.build(weight)?;
        let config = flow_config(spec, &model, seed)?;
        let start = Instant::now();
        let trace = run(&model, &space, &config, None)?;
        runs.push(WgfRun {
            weight,
            model,
            config,
            trace,
            wall_time_ms: start.elapsed().as_millis() as u64,
        });
    }
    let selected = select_closest(runs.iter().map(|r| r.trace.final_value()), spec.reference_value)?;
    Ok(WgfOutcome { selected, runs })
}

/// Index of the value closest to `reference`. With several candidates and
/// no reference there is nothing to select by.
pub fn select_closest(values: impl Iterator<Item = f64>, reference: Option<f64>) -> Result<usize> {
    let values: Vec<f64> = values.collect();
    match (values.len(), reference) {
        (0, _) => Err(BenchError::Usage("no candidate runs".into())),
        (1, _) => Ok(0),
        (_, None) => Err(BenchError::Usage(
            "weight selection 'auto' needs a reference value".into(),
        )),
        (_, Some(r)) => Ok(values
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - r).abs().total_cmp(&(b.1 - r).abs()))
            .map(|(i, _)| i)
            .unwrap()),
    }
}

/// Weight convention used by PSO: the one the WGF run selected, or the
/// configured one.
fn pso_model(spec: &ExperimentSpec, selected: Option<GlmWeight>) -> Result<RegressionModel> {
    let weight = match (&spec.model, selected) {
        (_, Some(w)) => Some(w),
        (ModelSpec::Logistic { weight: WeightChoice::Auto, .. }, None) => Some(GlmWeight::Fisher),
        _ => None,
    };
    spec.model.build(weight)
}

#[derive(Debug, Clone)]
pub struct PsoOutcome {
    pub weight: Option<GlmWeight>,
    pub trace: FlowTrace,
    pub wall_time_ms: u64,
}

pub fn run_pso(spec: &ExperimentSpec, seed: u64, weight: Option<GlmWeight>) -> Result<PsoOutcome> {
    let model = pso_model(spec, weight)?;
    let space = spec.space.build()?;
    let crit = spec.criterion.build(model.m())?;
    let start = Instant::now();
    let trace = pso_run(&model, &space, &crit, &pso_config(spec, seed))?;
    Ok(PsoOutcome {
        weight: weight_of(&model),
        trace,
        wall_time_ms: start.elapsed().as_millis() as u64,
    })
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub weight: Option<GlmWeight>,
    pub summary: EnsembleSummary,
    pub traces: Vec<FlowTrace>,
    pub base_seed: u64,
    pub wall_time_ms: u64,
}

impl EnsembleOutcome {
    /// Index of the run that reached the best value.
    pub fn best_run(&self) -> usize {
        self.summary
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

pub fn run_pso_ensemble(
    spec: &ExperimentSpec,
    seed: u64,
    runs: usize,
    weight: Option<GlmWeight>,
) -> Result<EnsembleOutcome> {
    let model = pso_model(spec, weight)?;
    let space = spec.space.build()?;
    let crit = spec.criterion.build(model.m())?;
    let start = Instant::now();
    let result = pso_ensemble(&model, &space, &crit, &pso_config(spec, seed), runs)?;
    Ok(EnsembleOutcome {
        weight: weight_of(&model),
        summary: result.summary,
        traces: result.traces,
        base_seed: seed,
        wall_time_ms: start.elapsed().as_millis() as u64,
    })
}

fn weight_of(model: &RegressionModel) -> Option<GlmWeight> {
    match model.family() {
        oedflow::models::ModelFamily::Logistic { weight, .. } => Some(*weight),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::find;

    #[test]
    fn closest_value_wins() {
        assert_eq!(select_closest([0.02, 0.153].into_iter(), Some(0.154)).unwrap(), 1);
        assert_eq!(select_closest([0.5].into_iter(), None).unwrap(), 0);
        assert!(select_closest([0.1, 0.2].into_iter(), None).is_err());
    }

    #[test]
    fn short_runs_follow_the_settings() {
        let mut spec = find("e-k2-ball").unwrap();
        spec.wgf.iters = 5;
        spec.wgf.particles = 20;
        spec.pso.iters = 3;
        spec.pso.swarm = 5;
        spec.pso.points = 20;
        let w = run_wgf(&spec, 4).unwrap();
        assert_eq!(w.runs.len(), 1);
        assert!(w.chosen().trace.records.len() <= 6);
        assert_eq!(w.chosen().trace.final_measure.n(), 20);
        let p = run_pso(&spec, 4, None).unwrap();
        assert_eq!(p.trace.records.len(), 4);
        let e = run_pso_ensemble(&spec, 4, 3, None).unwrap();
        assert_eq!(e.traces.len(), 3);
        assert_eq!(e.summary.values[e.best_run()], e.summary.best);
    }

    #[test]
    fn auto_weight_runs_both_conventions() {
        let mut spec = find("e-logistic-cube7").unwrap();
        spec.wgf.iters = 3;
        spec.wgf.particles = 30;
        let out = run_wgf(&spec, 0).unwrap();
        let weights: Vec<_> = out.runs.iter().map(|r| r.weight).collect();
        assert_eq!(weights, vec![Some(GlmWeight::Paper), Some(GlmWeight::Fisher)]);
        let r = spec.reference_value.unwrap();
        let gap = |i: usize| (out.runs[i].trace.final_value() - r).abs();
        assert!(gap(out.selected) <= gap(1 - out.selected));
    }
}
