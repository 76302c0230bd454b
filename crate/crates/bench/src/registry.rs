//! Benchmark experiments with their reference optima.
//!
//! Reference values are reported next to the results and never feed back
//! into the optimisation.

use nalgebra::{DMatrix, DVector};
use oedflow::{Criterion, CriterionKind, DesignSpace, GlmWeight, RegressionModel, StepMode};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Nominal parameter of the seven-factor logistic benchmark.
pub const LOGISTIC_THETA: [f64; 8] = [-0.4926, -0.6280, -0.3283, 0.4378, 0.5283, -0.6120, -0.6837, -0.2061];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightChoice {
    Paper,
    Fisher,
    /// Run both conventions and keep the one closer to the reference value.
    Auto,
}

impl WeightChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Self::Paper),
            "fisher" => Ok(Self::Fisher),
            "auto" => Ok(Self::Auto),
            _ => Err(BenchError::Usage(format!("unknown glm weight '{s}' (paper|fisher|auto)"))),
        }
    }

    pub fn candidates(self) -> Vec<GlmWeight> {
        match self {
            Self::Paper => vec![GlmWeight::Paper],
            Self::Fisher => vec![GlmWeight::Fisher],
            Self::Auto => vec![GlmWeight::Paper, GlmWeight::Fisher],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    SecondOrder { k: usize },
    Logistic { theta: Vec<f64>, weight: WeightChoice },
}

impl ModelSpec {
    pub fn d(&self) -> usize {
        match self {
            ModelSpec::SecondOrder { k } => *k,
            ModelSpec::Logistic { theta, .. } => theta.len() - 1,
        }
    }

    pub fn m(&self) -> usize {
        match self {
            ModelSpec::SecondOrder { k } => oedflow::models::second_order_feature_count(*k),
            ModelSpec::Logistic { theta, .. } => theta.len(),
        }
    }

    /// Concrete model; `weight` is required to resolve `Auto`.
    pub fn build(&self, weight: Option<GlmWeight>) -> Result<RegressionModel> {
        Ok(match self {
            ModelSpec::SecondOrder { k } => RegressionModel::second_order(*k)?,
            ModelSpec::Logistic { theta, weight: choice } => {
                let w = match (choice, weight) {
                    (_, Some(w)) => w,
                    (WeightChoice::Paper, None) => GlmWeight::Paper,
                    (WeightChoice::Fisher, None) => GlmWeight::Fisher,
                    (WeightChoice::Auto, None) => {
                        return Err(BenchError::Usage("glm weight 'auto' needs a concrete choice".into()))
                    }
                };
                RegressionModel::logistic(theta.clone(), w)?
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            ModelSpec::SecondOrder { k } => format!("so(k={k})"),
            ModelSpec::Logistic { theta, .. } => format!("logistic(d={})", theta.len() - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpaceSpec {
    Cube { dim: usize, lo: f64, hi: f64 },
    Ball { dim: usize, radius: f64 },
}

impl SpaceSpec {
    pub fn build(&self) -> Result<DesignSpace> {
        Ok(match self {
            SpaceSpec::Cube { dim, lo, hi } => DesignSpace::cube(*dim, *lo, *hi)?,
            SpaceSpec::Ball { dim, radius } => DesignSpace::ball(*dim, *radius)?,
        })
    }

    pub fn label(&self) -> String {
        match self {
            SpaceSpec::Cube { dim, lo, hi } => format!("[{lo},{hi}]^{dim}"),
            SpaceSpec::Ball { dim, radius } => format!("ball(d={dim},r={radius})"),
        }
    }
}

/// Criterion choice before the model dimension is known.
#[derive(Debug, Clone, PartialEq)]
pub enum CriterionSpec {
    E,
    D,
    A,
    /// `c` defaults to the all-ones vector.
    C(Option<Vec<f64>>),
    /// Diagonal of `L`; defaults to the identity.
    L(Option<Vec<f64>>),
}

impl CriterionSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "E" | "e" => Ok(Self::E),
            "D" | "d" => Ok(Self::D),
            "A" | "a" => Ok(Self::A),
            "c" | "C" => Ok(Self::C(None)),
            "L" | "l" => Ok(Self::L(None)),
            _ => Err(BenchError::Usage(format!("unknown criterion '{s}' (E|D|A|c|L)"))),
        }
    }

    pub fn kind(&self) -> CriterionKind {
        match self {
            CriterionSpec::E => CriterionKind::E,
            CriterionSpec::D => CriterionKind::D,
            CriterionSpec::A => CriterionKind::A,
            CriterionSpec::C(_) => CriterionKind::C,
            CriterionSpec::L(_) => CriterionKind::L,
        }
    }

    pub fn build(&self, m: usize) -> Result<Criterion> {
        let sized = |v: &Option<Vec<f64>>, what: &str| -> Result<DVector<f64>> {
            match v {
                Some(v) if v.len() != m => {
                    Err(BenchError::Usage(format!("{what} has length {}, model needs {m}", v.len())))
                }
                Some(v) => Ok(DVector::from_column_slice(v)),
                None => Ok(DVector::from_element(m, 1.0)),
            }
        };
        Ok(match self {
            CriterionSpec::E => Criterion::E,
            CriterionSpec::D => Criterion::D,
            CriterionSpec::A => Criterion::A,
            CriterionSpec::C(c) => Criterion::c_vector(sized(c, "c vector")?)?,
            CriterionSpec::L(diag) => Criterion::l_weighted(DMatrix::from_diagonal(&sized(diag, "L diagonal")?))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Wgf,
    Pso,
    Both,
}

impl Engine {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wgf" => Ok(Self::Wgf),
            "pso" => Ok(Self::Pso),
            "both" => Ok(Self::Both),
            _ => Err(BenchError::Usage(format!("unknown engine '{s}' (wgf|pso|both)"))),
        }
    }

    pub fn runs_wgf(self) -> bool {
        matches!(self, Engine::Wgf | Engine::Both)
    }

    pub fn runs_pso(self) -> bool {
        matches!(self, Engine::Pso | Engine::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WgfSettings {
    pub particles: usize,
    pub iters: usize,
    pub step: f64,
    pub step_mode: StepMode,
    /// Eigenvalue band multiplier for the E-criterion.
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoSettings {
    pub swarm: usize,
    pub points: usize,
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub model: ModelSpec,
    pub space: SpaceSpec,
    pub criterion: CriterionSpec,
    pub engine: Engine,
    pub wgf: WgfSettings,
    pub pso: PsoSettings,
    pub reference_value: Option<f64>,
    pub reference_source: String,
}

impl ExperimentSpec {
    /// Whether two specs describe the same design problem (settings aside).
    pub fn same_problem(&self, other: &ExperimentSpec) -> bool {
        let model_eq = match (&self.model, &other.model) {
            (ModelSpec::SecondOrder { k: a }, ModelSpec::SecondOrder { k: b }) => a == b,
            (ModelSpec::Logistic { theta: a, .. }, ModelSpec::Logistic { theta: b, .. }) => a == b,
            _ => false,
        };
        model_eq && self.space == other.space && self.criterion == other.criterion
    }
}

/// Default base step: 0.05 for low-dimensional and logistic models, 0.02
/// for higher-dimensional response surfaces.
pub fn default_step(model: &ModelSpec) -> f64 {
    match model {
        ModelSpec::SecondOrder { k } if *k >= 4 => 0.02,
        _ => 0.05,
    }
}

fn wgf(iters: usize, step: f64, step_mode: StepMode) -> WgfSettings {
    WgfSettings {
        particles: 100,
        iters,
        step,
        step_mode,
        band: oedflow::flow::FLOW_TOL_MULT,
    }
}

fn pso(iters: usize) -> PsoSettings {
    PsoSettings {
        swarm: 100,
        points: 100,
        iters,
    }
}

fn row(
    name: &str,
    model: ModelSpec,
    space: SpaceSpec,
    criterion: CriterionSpec,
    wgf: WgfSettings,
    pso: PsoSettings,
    reference: f64,
    source: &str,
) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        model,
        space,
        criterion,
        engine: Engine::Both,
        wgf,
        pso,
        reference_value: Some(reference),
        reference_source: source.into(),
    }
}

const KIEFER: &str = "Kiefer (1959), theoretical D-optimal value for the quadratic response surface";
const DETTE: &str = "Dette and Grigoriev (2014), theoretical E-optimal value for the second-order response surface";
const GAO: &str = "Gao et al., reported E-optimal value for the logistic model at the nominal parameter";

/// The seven benchmark rows.
pub fn registry() -> Vec<ExperimentSpec> {
    use CriterionSpec::{D, E};
    use StepMode::{Backtracking, Fixed};
    let so = |k| ModelSpec::SecondOrder { k };
    let cube = |dim| SpaceSpec::Cube { dim, lo: -1.0, hi: 1.0 };
    let ball = |dim| SpaceSpec::Ball { dim, radius: 1.0 };
    vec![
        row("d-k5-cube", so(5), cube(5), D, wgf(1000, 0.02, Fixed), pso(1000), -14.27, KIEFER),
        row("d-k5-ball", so(5), ball(5), D, wgf(100, 0.02, Fixed), pso(100), -60.68, KIEFER),
        row("e-k2-cube", so(2), cube(2), E, wgf(1000, 0.3, Backtracking), pso(1000), 0.2000, DETTE),
        row("e-k2-ball", so(2), ball(2), E, wgf(1000, 0.3, Backtracking), pso(1000), 0.1000, DETTE),
        row("e-k5-ball", so(5), ball(5), E, wgf(100, 1.0, Backtracking), pso(100), 0.0270, DETTE),
        row("e-k5-cube", so(5), cube(5), E, wgf(2000, 0.3, Backtracking), pso(2000), 0.2000, DETTE),
        row(
            "e-logistic-cube7",
            ModelSpec::Logistic {
                theta: LOGISTIC_THETA.to_vec(),
                weight: WeightChoice::Auto,
            },
            SpaceSpec::Cube { dim: 7, lo: -3.0, hi: 3.0 },
            E,
            wgf(1000, 0.5, Backtracking),
            pso(1000),
            0.1540,
            GAO,
        ),
    ]
}

pub fn find(name: &str) -> Result<ExperimentSpec> {
    registry()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| BenchError::UnknownExperiment(name.into()))
}
