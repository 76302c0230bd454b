//! Trace, design and summary artifacts.

use std::fs;
use std::path::Path;

use oedflow::{DesignMeasure, GlmWeight, TraceRecord};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub value: f64,
    pub dirnorm: f64,
    pub step: f64,
}

impl From<&TraceRecord> for TraceRow {
    fn from(r: &TraceRecord) -> Self {
        Self {
            iter: r.iter,
            value: r.value,
            dirnorm: r.dirnorm,
            step: r.step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightCandidate {
    pub glm_weight: String,
    pub final_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub engine: String,
    pub final_value: f64,
    pub reference_value: Option<f64>,
    pub gap: Option<f64>,
    pub wall_time_ms: u64,
    pub termination: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glm_weight: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub glm_candidates: Vec<WeightCandidate>,
    pub seed: u64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_source: Option<String>,
}

/// `|final − reference|`, absent without a reference.
pub fn gap(final_value: f64, reference: Option<f64>) -> Option<f64> {
    reference.map(|r| (final_value - r).abs())
}

pub fn weight_name(w: Option<GlmWeight>) -> Option<String> {
    w.map(|w| w.name().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub experiment: String,
    pub engine: String,
    pub runs: usize,
    pub base_seed: u64,
    pub iterations: usize,
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
    pub stdev: f64,
    pub reference_value: Option<f64>,
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glm_weight: Option<String>,
    pub values: Vec<f64>,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
        }
    }
    Ok(())
}

pub fn write_trace_csv(path: &Path, records: &[TraceRecord]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(TraceRow::from(r))?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
    Ok(rows)
}

/// One particle per row, columns `x_1, …, x_d`.
pub fn write_design_csv(path: &Path, measure: &DesignMeasure) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((1..=measure.d()).map(|j| format!("x_{j}")))?;
    for x in measure.points() {
        w.write_record(x.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))?;
    Ok(())
}

pub fn read_design_csv(path: &Path) -> Result<DesignMeasure> {
    let mut r = csv::Reader::from_path(path)?;
    let d = r.headers()?.len();
    let mut coords = Vec::new();
    for rec in r.records() {
        for field in rec?.iter() {
            let v = field
                .parse::<f64>()
                .map_err(|e| BenchError::Usage(format!("{}: bad number '{field}': {e}", path.display())))?;
            coords.push(v);
        }
    }
    Ok(DesignMeasure::new(d, coords)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/trace.csv");
        let records = vec![
            TraceRecord { iter: 0, value: -1.5, dirnorm: 0.0, step: 0.0 },
            TraceRecord { iter: 1, value: 0.1 + 0.2, dirnorm: 1e-300, step: 0.05 },
        ];
        write_trace_csv(&path, &records).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iter,value,dirnorm,step\n"));
        let rows = read_trace_csv(&path).unwrap();
        assert_eq!(rows, records.iter().map(TraceRow::from).collect::<Vec<_>>());
    }

    #[test]
    fn design_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("design.csv");
        let mu = DesignMeasure::new(2, vec![0.25, -1.0, 1.0 / 3.0, 0.5]).unwrap();
        write_design_csv(&path, &mu).unwrap();
        assert!(fs::read_to_string(&path).unwrap().starts_with("x_1,x_2\n"));
        assert_eq!(read_design_csv(&path).unwrap(), mu);
    }

    #[test]
    fn summary_gap_and_optional_fields() {
        let s = Summary {
            experiment: "x".into(),
            engine: "wgf".into(),
            final_value: 0.19,
            reference_value: Some(0.2),
            gap: gap(0.19, Some(0.2)),
            wall_time_ms: 3,
            termination: "max_iters".into(),
            glm_weight: None,
            glm_candidates: vec![],
            seed: 0,
            iterations: 10,
            reference_source: None,
        };
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["gap"].as_f64().unwrap(), (0.19f64 - 0.2).abs());
        assert!(v.get("glm_weight").is_none());
        assert_eq!(gap(1.0, None), None);
    }
}
