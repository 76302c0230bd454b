//! Experiment execution with artifact emission.
//!
//! Artifacts for experiment `name` go to `<out>/<name>/<engine>/`; every
//! experiment owns its own directory.

use std::fs;
use std::path::{Path, PathBuf};

use oedflow::{FlowTrace, GlmWeight};

use crate::error::{BenchError, Result};
use crate::experiment::{run_pso_ensemble, run_wgf, EnsembleOutcome, WgfOutcome};
use crate::plot::{mean_over_runs, render_svg, smooth, Series};
use crate::registry::{ExperimentSpec, ModelSpec};
use crate::report::{
    gap, weight_name, write_design_csv, write_json, write_trace_csv, EnsembleReport, Summary, WeightCandidate,
};

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub wgf: Option<(WgfOutcome, Summary)>,
    pub pso: Option<(EnsembleOutcome, Summary, EnsembleReport)>,
    pub dir: PathBuf,
}

fn write_run(dir: &Path, trace: &FlowTrace, summary: &Summary) -> Result<()> {
    write_trace_csv(&dir.join("trace.csv"), &trace.records)?;
    write_design_csv(&dir.join("design.csv"), &trace.final_measure)?;
    write_json(&dir.join("summary.json"), summary)
}

pub fn wgf_summary(spec: &ExperimentSpec, out: &WgfOutcome, seed: u64) -> Summary {
    let run = out.chosen();
    let final_value = run.trace.final_value();
    let candidates = if out.runs.len() > 1 {
        out.runs
            .iter()
            .map(|r| WeightCandidate {
                glm_weight: weight_name(r.weight).unwrap_or_default(),
                final_value: r.trace.final_value(),
            })
            .collect()
    } else {
        Vec::new()
    };
    Summary {
        experiment: spec.name.clone(),
        engine: "wgf".into(),
        final_value,
        reference_value: spec.reference_value,
        gap: gap(final_value, spec.reference_value),
        wall_time_ms: run.wall_time_ms,
        termination: run.trace.termination.name().into(),
        glm_weight: weight_name(run.weight),
        glm_candidates: candidates,
        seed,
        iterations: run.trace.records.len() - 1,
        reference_source: (!spec.reference_source.is_empty()).then(|| spec.reference_source.clone()),
    }
}

fn pso_reports(spec: &ExperimentSpec, out: &EnsembleOutcome) -> (Summary, EnsembleReport) {
    let best = out.best_run();
    let trace = &out.traces[best];
    let final_value = trace.final_value();
    let summary = Summary {
        experiment: spec.name.clone(),
        engine: "pso".into(),
        final_value,
        reference_value: spec.reference_value,
        gap: gap(final_value, spec.reference_value),
        wall_time_ms: out.wall_time_ms,
        termination: trace.termination.name().into(),
        glm_weight: weight_name(out.weight),
        glm_candidates: Vec::new(),
        seed: out.base_seed.wrapping_add(best as u64),
        iterations: trace.records.len() - 1,
        reference_source: (!spec.reference_source.is_empty()).then(|| spec.reference_source.clone()),
    };
    let s = &out.summary;
    let report = EnsembleReport {
        experiment: spec.name.clone(),
        engine: "pso".into(),
        runs: out.traces.len(),
        base_seed: out.base_seed,
        iterations: spec.pso.iters,
        best: s.best,
        mean: s.mean,
        worst: s.worst,
        stdev: s.stdev,
        reference_value: spec.reference_value,
        wall_time_ms: out.wall_time_ms,
        glm_weight: weight_name(out.weight),
        values: s.values.clone(),
    };
    (summary, report)
}

/// Runs the engines selected in `spec` (PSO as an ensemble of `pso_runs`
/// seeds) and writes all artifacts plus a convergence plot.
pub fn run_experiment(spec: &ExperimentSpec, seed: u64, pso_runs: usize, out_dir: &Path) -> Result<ExperimentResult> {
    let dir = out_dir.join(&spec.name);
    let mut selected_weight: Option<GlmWeight> = None;
    let wgf = if spec.engine.runs_wgf() {
        let outcome = run_wgf(spec, seed)?;
        let summary = wgf_summary(spec, &outcome, seed);
        write_run(&dir.join("wgf"), &outcome.chosen().trace, &summary)?;
        selected_weight = outcome.chosen().weight;
        Some((outcome, summary))
    } else {
        None
    };
    let pso = if spec.engine.runs_pso() {
        let outcome = run_pso_ensemble(spec, seed, pso_runs.max(1), selected_weight)?;
        let (summary, report) = pso_reports(spec, &outcome);
        let pdir = dir.join("pso");
        write_run(&pdir, &outcome.traces[outcome.best_run()], &summary)?;
        write_json(&pdir.join("ensemble.json"), &report)?;
        if outcome.traces.len() > 1 {
            for (i, t) in outcome.traces.iter().enumerate() {
                let s = outcome.base_seed.wrapping_add(i as u64);
                write_trace_csv(&pdir.join("runs").join(format!("seed_{s}.csv")), &t.records)?;
            }
        }
        Some((outcome, summary, report))
    } else {
        None
    };
    let result = ExperimentResult { spec: spec.clone(), wgf, pso, dir };
    let svg = convergence_plot(&result)?;
    fs::create_dir_all(&result.dir).map_err(|e| BenchError::io(&result.dir, e))?;
    let path = result.dir.join("convergence.svg");
    fs::write(&path, svg).map_err(|e| BenchError::io(&path, e))?;
    Ok(result)
}

fn values(trace: &FlowTrace) -> Vec<f64> {
    trace.records.iter().map(|r| r.value).collect()
}

/// WGF trace (block-averaged over 10 iterations for the logistic model)
/// and the PSO mean over runs.
pub fn convergence_plot(result: &ExperimentResult) -> Result<String> {
    let mut series = Vec::new();
    if let Some((w, _)) = &result.wgf {
        let s = Series::from_values("WGF", &values(&w.chosen().trace));
        series.push(match result.spec.model {
            ModelSpec::Logistic { .. } => Series {
                label: "WGF (10-iter mean)".into(),
                points: smooth(&s.points, 10),
            },
            _ => s,
        });
    }
    if let Some((p, _, _)) = &result.pso {
        let all: Vec<Vec<f64>> = p.traces.iter().map(values).collect();
        let label = if all.len() > 1 {
            format!("PSO (mean of {})", all.len())
        } else {
            "PSO".into()
        };
        series.push(Series::from_values(label, &mean_over_runs(&all)));
    }
    let y = format!("{}-criterion", result.spec.criterion.kind().name());
    render_svg(&series, &result.spec.name, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{find, Engine};

    fn tiny(name: &str) -> ExperimentSpec {
        let mut spec = find(name).unwrap();
        spec.wgf.iters = 4;
        spec.wgf.particles = 20;
        spec.pso.iters = 3;
        spec.pso.swarm = 4;
        spec.pso.points = 20;
        spec
    }

    #[test]
    fn artifacts_are_written_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny("e-k2-cube");
        assert_eq!(spec.engine, Engine::Both);
        let res = run_experiment(&spec, 3, 2, dir.path()).unwrap();
        let base = dir.path().join("e-k2-cube");
        for f in ["wgf/trace.csv", "wgf/design.csv", "wgf/summary.json", "pso/ensemble.json", "pso/runs/seed_4.csv", "convergence.svg"] {
            assert!(base.join(f).exists(), "{f}");
        }
        let first = fs::read(base.join("wgf/trace.csv")).unwrap();
        let first_pso = fs::read(base.join("pso/runs/seed_3.csv")).unwrap();
        run_experiment(&spec, 3, 2, dir.path()).unwrap();
        assert_eq!(first, fs::read(base.join("wgf/trace.csv")).unwrap());
        assert_eq!(first_pso, fs::read(base.join("pso/runs/seed_3.csv")).unwrap());

        let (_, summary) = res.wgf.unwrap();
        let json: serde_json::Value = serde_json::from_slice(&fs::read(base.join("wgf/summary.json")).unwrap()).unwrap();
        let fv = json["final_value"].as_f64().unwrap();
        let rv = json["reference_value"].as_f64().unwrap();
        assert_eq!(json["gap"].as_f64().unwrap(), (fv - rv).abs());
        assert_eq!(summary.final_value, fv);
        for key in ["experiment", "engine", "wall_time_ms", "termination"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn logistic_summary_records_the_weight() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny("e-logistic-cube7");
        spec.engine = Engine::Wgf;
        let res = run_experiment(&spec, 0, 1, dir.path()).unwrap();
        let (_, summary) = res.wgf.unwrap();
        assert!(summary.glm_weight.is_some());
        assert_eq!(summary.glm_candidates.len(), 2);
        assert!(!dir.path().join("e-logistic-cube7/pso").exists());
    }
}
