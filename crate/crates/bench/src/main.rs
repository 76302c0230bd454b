use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oedflow_bench::config::{resolve, RunOptions};
use oedflow_bench::error::{BenchError, Result};
use oedflow_bench::oracles::{first_order_gain_check, gradient_checks, simple_case_check, subsolver_check, CheckReport};
use oedflow_bench::plot::{mean_over_runs, render_svg, smooth, Series};
use oedflow_bench::registry::{registry, Engine};
use oedflow_bench::report::read_trace_csv;
use oedflow_bench::runner::{run_experiment, ExperimentResult};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "oedflow", version, about = "Optimal experimental designs by particle Wasserstein gradient flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (registry row or ad hoc problem).
    Run(Flags),
    /// Run every registry row and print the results table.
    Bench(BenchFlags),
    /// Run PSO over several seeds and report best/mean/worst/stdev.
    PsoEnsemble(Flags),
    /// Check the solvers against their numerical oracles.
    OracleTests(OracleFlags),
    /// Plot trace CSVs into one SVG.
    Plot(PlotFlags),
}

#[derive(Args, Default)]
struct Flags {
    /// Registry experiment name (see `bench --list`).
    #[arg(long)]
    experiment: Option<String>,
    /// Model: so | logistic.
    #[arg(long)]
    model: Option<String>,
    /// Input dimension of the second-order model.
    #[arg(long)]
    k: Option<usize>,
    /// Design space: cube | ball.
    #[arg(long)]
    space: Option<String>,
    /// `lo,hi` for a cube, radius for a ball.
    #[arg(long, allow_hyphen_values = true)]
    bounds: Option<String>,
    /// Criterion: E | D | A | c | L.
    #[arg(long)]
    criterion: Option<String>,
    /// Number of particles (WGF) and points per PSO design.
    #[arg(long)]
    particles: Option<usize>,
    /// WGF iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// WGF base step size.
    #[arg(long)]
    step: Option<f64>,
    /// fixed | backtracking.
    #[arg(long)]
    step_mode: Option<String>,
    /// Eigenvalue band multiplier for the E-criterion.
    #[arg(long)]
    band: Option<f64>,
    /// Logistic weight convention: paper | fisher | auto.
    #[arg(long)]
    glm_weight: Option<String>,
    /// wgf | pso | both.
    #[arg(long)]
    engine: Option<String>,
    /// PSO iterations.
    #[arg(long)]
    pso_iters: Option<usize>,
    /// PSO swarm size.
    #[arg(long)]
    swarm: Option<usize>,
    /// Comma-separated c vector for c-optimality.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    c_vector: Option<Vec<f64>>,
    /// Comma-separated diagonal of L for L-optimality.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    l_diag: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of PSO runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Flags {
    fn options(self) -> Result<RunOptions> {
        let cli = RunOptions {
            experiment: self.experiment,
            model: self.model,
            k: self.k,
            space: self.space,
            bounds: self.bounds,
            criterion: self.criterion,
            particles: self.particles,
            iters: self.iters,
            step: self.step,
            step_mode: self.step_mode,
            band: self.band,
            glm_weight: self.glm_weight,
            engine: self.engine,
            pso_iters: self.pso_iters,
            swarm: self.swarm,
            c_vector: self.c_vector,
            l_diag: self.l_diag,
            seed: self.seed,
            runs: self.runs,
            out: self.out,
        };
        match self.config {
            Some(path) => Ok(cli.or(RunOptions::from_file(&path)?)),
            None => Ok(cli),
        }
    }
}

#[derive(Args)]
struct BenchFlags {
    /// Only these rows (comma-separated names).
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<String>>,
    /// List the registry and exit.
    #[arg(long)]
    list: bool,
    /// wgf | pso | both.
    #[arg(long, default_value = "both")]
    engine: String,
    /// PSO runs per row.
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleFlags {
    /// Subproblem instances.
    #[arg(long, default_value_t = 200)]
    instances: usize,
    /// Angular grid resolution of the brute-force oracle.
    #[arg(long, default_value_t = 720)]
    resolution: usize,
    /// Also run the gradient, simple-case and first-order gain suites.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
struct PlotFlags {
    /// Trace CSV files.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Output SVG path.
    #[arg(long, default_value = "convergence.svg")]
    out: PathBuf,
    /// Plot the mean over all traces as one series.
    #[arg(long)]
    mean: bool,
    /// Average over consecutive blocks of this many iterations.
    #[arg(long, default_value_t = 1)]
    smooth: usize,
    #[arg(long, default_value = "convergence")]
    title: String,
    #[arg(long, default_value = "criterion value")]
    ylabel: String,
}

fn print_result(r: &ExperimentResult) {
    if let Some((_, s)) = &r.wgf {
        println!("{}", serde_json::to_string_pretty(s).unwrap_or_default());
    }
    if let Some((_, s, e)) = &r.pso {
        if e.runs > 1 {
            println!("{}", serde_json::to_string_pretty(e).unwrap_or_default());
        } else {
            println!("{}", serde_json::to_string_pretty(s).unwrap_or_default());
        }
    }
    println!("artifacts: {}", r.dir.display());
}

fn cmd_run(flags: Flags, default_engine: Option<Engine>, default_runs: usize) -> Result<()> {
    let mut opts = flags.options()?;
    if opts.engine.is_none() {
        if let Some(e) = default_engine {
            opts.engine = Some(format!("{e:?}").to_lowercase());
        }
    }
    let spec = resolve(&opts)?;
    let runs = opts.runs.unwrap_or(default_runs);
    let result = run_experiment(&spec, opts.seed(), runs, &opts.out_dir())?;
    print_result(&result);
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn cmd_bench(flags: BenchFlags) -> Result<()> {
    let engine = Engine::parse(&flags.engine)?;
    let mut rows = registry();
    if flags.list {
        for r in &rows {
            println!(
                "{:<18} {:<14} {:<16} {}  ref {}  ({})",
                r.name,
                r.model.label(),
                r.space.label(),
                r.criterion.kind().name(),
                fmt_opt(r.reference_value),
                r.reference_source
            );
        }
        return Ok(());
    }
    if let Some(only) = &flags.only {
        for name in only {
            if !rows.iter().any(|r| &r.name == name) {
                return Err(BenchError::UnknownExperiment(name.clone()));
            }
        }
        rows.retain(|r| only.contains(&r.name));
    }
    for r in &mut rows {
        r.engine = engine;
    }
    let results: Vec<ExperimentResult> = rows
        .par_iter()
        .map(|r| run_experiment(r, flags.seed, flags.runs, &flags.out))
        .collect::<Result<_>>()?;
    println!(
        "{:<18} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9}  weight",
        "experiment", "reference", "WGF", "gap", "PSO best", "PSO mean", "WGF ms"
    );
    for r in &results {
        let w = r.wgf.as_ref().map(|(_, s)| s);
        let p = r.pso.as_ref().map(|(_, _, e)| e);
        println!(
            "{:<18} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9}  {}",
            r.spec.name,
            fmt_opt(r.spec.reference_value),
            fmt_opt(w.map(|s| s.final_value)),
            fmt_opt(w.and_then(|s| s.gap)),
            fmt_opt(p.map(|e| e.best)),
            fmt_opt(p.map(|e| e.mean)),
            w.map(|s| s.wall_time_ms.to_string()).unwrap_or_else(|| "-".into()),
            w.and_then(|s| s.glm_weight.clone()).unwrap_or_else(|| "-".into()),
        );
    }
    println!("artifacts: {}", flags.out.display());
    Ok(())
}

fn print_check(r: &CheckReport) -> bool {
    println!(
        "{} {}: {} cases, worst {:.3e} (tol {:.0e})",
        if r.passed() { "PASS" } else { "FAIL" },
        r.name,
        r.cases,
        r.worst,
        r.tolerance
    );
    for f in r.failures.iter().take(5) {
        println!("    {f}");
    }
    r.passed()
}

fn cmd_oracle(flags: OracleFlags) -> Result<bool> {
    let mut ok = print_check(&subsolver_check(flags.instances, flags.seed, flags.resolution)?);
    if flags.all {
        for r in gradient_checks(20, flags.seed)? {
            ok &= print_check(&r);
        }
        ok &= print_check(&simple_case_check(20, flags.seed)?);
        ok &= print_check(&first_order_gain_check(10, flags.seed)?);
    }
    Ok(ok)
}

fn cmd_plot(flags: PlotFlags) -> Result<()> {
    let mut traces = Vec::new();
    for p in &flags.traces {
        let rows = read_trace_csv(p)?;
        if rows.is_empty() {
            return Err(BenchError::Usage(format!("{}: empty trace", p.display())));
        }
        let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        traces.push((label, rows.iter().map(|r| r.value).collect::<Vec<f64>>()));
    }
    let mut series: Vec<Series> = if flags.mean {
        let all: Vec<Vec<f64>> = traces.into_iter().map(|t| t.1).collect();
        let label = format!("mean of {}", all.len());
        vec![Series::from_values(label, &mean_over_runs(&all))]
    } else {
        traces.iter().map(|(l, v)| Series::from_values(l.clone(), v)).collect()
    };
    for s in &mut series {
        s.points = smooth(&s.points, flags.smooth);
    }
    let svg = render_svg(&series, &flags.title, &flags.ylabel)?;
    std::fs::write(&flags.out, svg).map_err(|e| BenchError::io(&flags.out, e))?;
    println!("wrote {}", flags.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(f) => cmd_run(f, None, 1).map(|_| true),
        Command::Bench(f) => cmd_bench(f).map(|_| true),
        Command::PsoEnsemble(f) => cmd_run(f, Some(Engine::Pso), 100).map(|_| true),
        Command::OracleTests(f) => cmd_oracle(f),
        Command::Plot(f) => cmd_plot(f).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, BenchError::Usage(_) | BenchError::UnknownExperiment(_)) {
                eprintln!("run `oedflow --help` for usage");
            }
            ExitCode::from(2)
        }
    }
}
