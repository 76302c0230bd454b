//! Benchmark harness for `oedflow`: the experiment registry with reference
//! optima, configuration handling, engine runners, CSV/JSON/SVG artifacts,
//! and numerical oracle suites.

pub mod config;
pub mod error;
pub mod experiment;
pub mod oracles;
pub mod plot;
pub mod registry;
pub mod report;
pub mod runner;

pub use config::{resolve, RunOptions};
pub use error::{BenchError, Result};
pub use registry::{find, registry, Engine, ExperimentSpec};
pub use runner::{run_experiment, ExperimentResult};
