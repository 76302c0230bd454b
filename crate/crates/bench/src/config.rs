//! Run options from flags and TOML files, resolved into an experiment.
//!
//! Every flag has a TOML key of the same name (dashes become
//! underscores). Flags given on the command line override the file.

use std::path::{Path, PathBuf};

use oedflow::StepMode;
use serde::Deserialize;

use crate::error::{BenchError, Result};
use crate::registry::{
    default_step, find, registry, CriterionSpec, Engine, ExperimentSpec, ModelSpec, PsoSettings, SpaceSpec,
    WeightChoice, WgfSettings, LOGISTIC_THETA,
};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    pub experiment: Option<String>,
    pub model: Option<String>,
    pub k: Option<usize>,
    pub space: Option<String>,
    /// `lo,hi` for a cube, the radius for a ball.
    pub bounds: Option<String>,
    pub criterion: Option<String>,
    pub particles: Option<usize>,
    pub iters: Option<usize>,
    pub step: Option<f64>,
    pub step_mode: Option<String>,
    pub band: Option<f64>,
    pub glm_weight: Option<String>,
    pub engine: Option<String>,
    pub pso_iters: Option<usize>,
    pub swarm: Option<usize>,
    pub c_vector: Option<Vec<f64>>,
    pub l_diag: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($self:ident, $other:ident, $($f:ident),*) => {
        RunOptions { $($f: $self.$f.or($other.$f)),* }
    };
}

impl RunOptions {
    /// Fields set here win over `fallback`.
    pub fn or(self, fallback: RunOptions) -> RunOptions {
        overlay!(
            self, fallback, experiment, model, k, space, bounds, criterion, particles, iters, step, step_mode,
            band, glm_weight, engine, pso_iters, swarm, c_vector, l_diag, seed, runs, out
        )
    }

    pub fn from_toml(text: &str) -> Result<RunOptions> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<RunOptions> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results"))
    }
}

fn parse_step_mode(s: &str) -> Result<StepMode> {
    match s.to_ascii_lowercase().as_str() {
        "fixed" => Ok(StepMode::Fixed),
        "backtracking" => Ok(StepMode::Backtracking),
        _ => Err(BenchError::Usage(format!("unknown step mode '{s}' (fixed|backtracking)"))),
    }
}

fn parse_numbers(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| BenchError::Usage(format!("bad number '{t}' in '{s}'")))
        })
        .collect()
}

fn parse_model(opts: &RunOptions) -> Result<ModelSpec> {
    match opts.model.as_deref().unwrap_or("so") {
        "so" => Ok(ModelSpec::SecondOrder { k: opts.k.unwrap_or(2) }),
        "logistic" => {
            let d = LOGISTIC_THETA.len() - 1;
            if opts.k.is_some_and(|k| k != d) {
                return Err(BenchError::Usage(format!(
                    "the logistic model has a nominal parameter only for k = {d}"
                )));
            }
            let weight = match &opts.glm_weight {
                Some(w) => WeightChoice::parse(w)?,
                None => WeightChoice::Auto,
            };
            Ok(ModelSpec::Logistic {
                theta: LOGISTIC_THETA.to_vec(),
                weight,
            })
        }
        other => Err(BenchError::Usage(format!("unknown model '{other}' (so|logistic)"))),
    }
}

fn parse_space(opts: &RunOptions, model: &ModelSpec) -> Result<SpaceSpec> {
    let dim = model.d();
    let bounds = opts.bounds.as_deref().map(parse_numbers).transpose()?;
    match opts.space.as_deref().unwrap_or("cube") {
        "cube" => {
            let (lo, hi) = match bounds.as_deref() {
                None if matches!(model, ModelSpec::Logistic { .. }) => (-3.0, 3.0),
                None => (-1.0, 1.0),
                Some([lo, hi]) if lo < hi => (*lo, *hi),
                Some(_) => return Err(BenchError::Usage("cube bounds must be 'lo,hi' with lo < hi".into())),
            };
            Ok(SpaceSpec::Cube { dim, lo, hi })
        }
        "ball" => {
            let radius = match bounds.as_deref() {
                None => 1.0,
                Some([r]) if *r > 0.0 => *r,
                Some(_) => return Err(BenchError::Usage("ball bounds must be a positive radius".into())),
            };
            Ok(SpaceSpec::Ball { dim, radius })
        }
        other => Err(BenchError::Usage(format!("unknown space '{other}' (cube|ball)"))),
    }
}

fn parse_criterion(opts: &RunOptions) -> Result<CriterionSpec> {
    let spec = CriterionSpec::parse(opts.criterion.as_deref().unwrap_or("E"))?;
    Ok(match spec {
        CriterionSpec::C(_) => CriterionSpec::C(opts.c_vector.clone()),
        CriterionSpec::L(_) => CriterionSpec::L(opts.l_diag.clone()),
        other => other,
    })
}

fn adhoc_name(model: &ModelSpec, space: &SpaceSpec, crit: &CriterionSpec) -> String {
    let m = match model {
        ModelSpec::SecondOrder { k } => format!("so{k}"),
        ModelSpec::Logistic { .. } => "logistic".into(),
    };
    let s = match space {
        SpaceSpec::Cube { .. } => "cube",
        SpaceSpec::Ball { .. } => "ball",
    };
    format!("{}-{m}-{s}", crit.kind().name().to_ascii_lowercase())
}

/// The experiment described by the options: a named registry row, or an
/// ad hoc problem that picks up the settings and reference of a matching
/// registry row if there is one. Explicit settings override either.
pub fn resolve(opts: &RunOptions) -> Result<ExperimentSpec> {
    let mut spec = match &opts.experiment {
        Some(name) => find(name)?,
        None => {
            let model = parse_model(opts)?;
            let space = parse_space(opts, &model)?;
            let criterion = parse_criterion(opts)?;
            let wgf_iters = 1000;
            let adhoc = ExperimentSpec {
                name: adhoc_name(&model, &space, &criterion),
                wgf: WgfSettings {
                    particles: 100,
                    iters: wgf_iters,
                    step: default_step(&model),
                    step_mode: StepMode::Fixed,
                    band: oedflow::flow::FLOW_TOL_MULT,
                },
                pso: PsoSettings {
                    swarm: 100,
                    points: 100,
                    iters: wgf_iters,
                },
                model,
                space,
                criterion,
                engine: Engine::Wgf,
                reference_value: None,
                reference_source: String::new(),
            };
            match registry().into_iter().find(|r| r.same_problem(&adhoc)) {
                Some(row) => ExperimentSpec {
                    model: adhoc.model,
                    engine: Engine::Wgf,
                    ..row
                },
                None => adhoc,
            }
        }
    };
    if opts.experiment.is_some() {
        if let (ModelSpec::Logistic { weight, .. }, Some(w)) = (&mut spec.model, &opts.glm_weight) {
            *weight = WeightChoice::parse(w)?;
        }
    }
    if let Some(p) = opts.particles {
        spec.wgf.particles = p;
        spec.pso.points = p;
    }
    if let Some(n) = opts.iters {
        spec.wgf.iters = n;
    }
    if let Some(s) = opts.step {
        spec.wgf.step = s;
    }
    if let Some(m) = &opts.step_mode {
        spec.wgf.step_mode = parse_step_mode(m)?;
    }
    if let Some(b) = opts.band {
        spec.wgf.band = b;
    }
    if let Some(n) = opts.pso_iters {
        spec.pso.iters = n;
    }
    if let Some(n) = opts.swarm {
        spec.pso.swarm = n;
    }
    if let Some(e) = &opts.engine {
        spec.engine = Engine::parse(e)?;
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(model: &str, k: usize, space: &str, crit: &str) -> RunOptions {
        RunOptions {
            model: Some(model.into()),
            k: Some(k),
            space: Some(space.into()),
            criterion: Some(crit.into()),
            ..Default::default()
        }
    }

    #[test]
    fn adhoc_problem_matches_registry_row() {
        let spec = resolve(&opts("so", 2, "cube", "E")).unwrap();
        assert_eq!(spec.name, "e-k2-cube");
        assert_eq!(spec.reference_value, Some(0.2));
        assert_eq!(spec.engine, Engine::Wgf);
        let spec = resolve(&opts("so", 3, "ball", "A")).unwrap();
        assert_eq!(spec.name, "a-so3-ball");
        assert_eq!(spec.reference_value, None);
        assert_eq!(spec.wgf.step, 0.05);
    }

    #[test]
    fn logistic_defaults_and_weight_override() {
        let spec = resolve(&opts("logistic", 7, "cube", "E")).unwrap();
        assert_eq!(spec.name, "e-logistic-cube7");
        let o = RunOptions {
            glm_weight: Some("fisher".into()),
            ..opts("logistic", 7, "cube", "E")
        };
        let spec = resolve(&o).unwrap();
        assert!(matches!(spec.model, ModelSpec::Logistic { weight: WeightChoice::Fisher, .. }));
        assert!(resolve(&opts("logistic", 3, "cube", "E")).is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = RunOptions::from_toml(
            r#"
            experiment = "d-k5-cube"
            iters = 50
            step = 0.1
            step_mode = "backtracking"
            "#,
        )
        .unwrap();
        let cli = RunOptions {
            iters: Some(7),
            ..Default::default()
        };
        let spec = resolve(&cli.or(file)).unwrap();
        assert_eq!(spec.wgf.iters, 7);
        assert_eq!(spec.wgf.step, 0.1);
        assert_eq!(spec.wgf.step_mode, StepMode::Backtracking);
        assert!(RunOptions::from_toml("itres = 3").is_err());
    }

    #[test]
    fn bounds_and_bad_flags() {
        let o = RunOptions {
            bounds: Some("-2,2".into()),
            ..opts("so", 2, "cube", "D")
        };
        assert_eq!(resolve(&o).unwrap().space, SpaceSpec::Cube { dim: 2, lo: -2.0, hi: 2.0 });
        let o = RunOptions {
            bounds: Some("0.5".into()),
            ..opts("so", 2, "ball", "D")
        };
        assert_eq!(resolve(&o).unwrap().space, SpaceSpec::Ball { dim: 2, radius: 0.5 });
        assert!(resolve(&opts("so", 2, "sphere", "D")).is_err());
        assert!(resolve(&opts("so", 2, "cube", "G")).is_err());
        assert!(resolve(&opts("glm", 2, "cube", "D")).is_err());
        let o = RunOptions {
            bounds: Some("1,-1".into()),
            ..opts("so", 2, "cube", "D")
        };
        assert!(resolve(&o).is_err());
    }
}
