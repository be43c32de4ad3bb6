//! Command-line front end: scenario configs, the simulate / optimize / verify
//! pipelines and their output files.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adjoint::solve_adjoint;
use crate::dynamics::export::{cache_key, write_trajectories_csv, CacheFile};
use crate::dynamics::{moment_diagnostics, simulate_forward, Scenarios, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::finance::{build_portfolio_problem, MarketModel, PortfolioParams};
use crate::maxprinciple::{check_max_principle, OptimalityReport, Tolerances};
use crate::measures::{ControlsDocument, RelaxedControl, SingularControl};
use crate::optimizer::{evaluate_cost, optimize, write_iterations_csv, CostEstimate, OptimizerOptions};
use crate::par;
use crate::problem::Problem;

pub const SCENARIO_SCHEMA: &str = "relaxsing/scenario-v1";
pub const EXAMPLE_BOND: &str = include_str!("../scenarios/example-bond.json");

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemSpec {
    Canonical(Problem),
    Finance {
        #[serde(default)]
        market: MarketModel,
        #[serde(default)]
        params: PortfolioParams,
    },
}

/// Starting controls: `ξ = 0` except for a controls document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialControls {
    #[default]
    Uniform,
    Dirac(usize),
    Document(ControlsDocument),
}

fn default_scenarios() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    pub problem: ProblemSpec,
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub initial_controls: InitialControls,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        if cfg.schema != SCENARIO_SCHEMA {
            return Err(Error::invalid(
                "schema",
                format!("expected {SCENARIO_SCHEMA}, found {}", cfg.schema),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Builds and validates the problem and the starting controls.
    pub fn resolve(&self) -> Result<(Problem, RelaxedControl, SingularControl)> {
        let problem = match &self.problem {
            ProblemSpec::Canonical(p) => p.clone(),
            ProblemSpec::Finance { market, params } => build_portfolio_problem(market.clone(), params.clone())?.problem,
        };
        problem.validate()?;
        if self.scenarios == 0 {
            return Err(Error::invalid("scenarios", "must be >= 1"));
        }
        let t = &self.tolerances;
        if [t.gap_se, t.gap_abs, t.slack_rel, t.complementarity_rel]
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::invalid("tolerances", "must be finite and nonnegative"));
        }
        let o = &self.optimizer;
        if !(o.armijo_c1 > 0.0 && o.armijo_c1 < 1.0) {
            return Err(Error::invalid("optimizer.armijo_c1", "must lie in (0, 1)"));
        }
        let n = problem.time.steps;
        let count = problem.action_grid.len();
        let m = problem.singular_dim;
        let (mu, xi) = match &self.initial_controls {
            InitialControls::Uniform => (RelaxedControl::uniform(n, count), SingularControl::zeros(n, m)),
            InitialControls::Dirac(j) => (RelaxedControl::constant_dirac(n, count, *j)?, SingularControl::zeros(n, m)),
            InitialControls::Document(doc) => doc.into_controls(&problem.action_grid, problem.time.horizon, n, m)?,
        };
        xi.check_admissible(problem.singular_cap)?;
        Ok((problem, mu, xi))
    }
}

#[derive(Debug, Parser)]
#[command(name = "relaxsing", version, about = "Relaxed-singular stochastic control by Monte Carlo")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the state under the configured starting controls.
    Simulate(RunArgs),
    /// Run Frank–Wolfe iterations and check the maximum principle at the result.
    Optimize(RunArgs),
    /// Check the maximum principle for a controls file (exit 1 on failure).
    Verify {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        controls: PathBuf,
    },
    /// Write the packaged bond-portfolio scenario.
    ExampleBond {
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a ScenarioConfig,
    cache_key: String,
    outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp_unix: Option<u64>,
}

/// Collects output files and writes the manifest last.
struct Outputs {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Outputs {
            dir,
            hashes: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.hashes.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write(name, &text)
    }

    fn finish(mut self, command: &'static str, config: &ScenarioConfig, key: String, timestamp: bool) -> Result<()> {
        let mut echoed = config.clone();
        echoed.output_dir = None;
        let manifest = Manifest {
            tool: "relaxsing",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: &echoed,
            cache_key: key,
            outputs: std::mem::take(&mut self.hashes),
            timestamp_unix: timestamp.then(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            }),
        };
        self.json("manifest.json", &manifest)
    }
}

/// Run context after flags are applied to the loaded config.
struct Prepared {
    config: ScenarioConfig,
    problem: Problem,
    mu: RelaxedControl,
    xi: SingularControl,
    scenarios: Arc<Scenarios>,
    out: Outputs,
    timestamp: bool,
}

fn prepare(args: &RunArgs) -> Result<Prepared> {
    let mut config = ScenarioConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = Some(out.clone());
    }
    let (problem, mu, xi) = config.resolve()?;
    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(Error::invalid("threads", "must be >= 1"));
        }
        if let Err(e) = par::configure_threads(threads) {
            log::warn!("could not resize the worker pool: {e}");
        }
    }
    let scenarios = Scenarios::generate(&problem, config.scenarios, config.seed)?;
    let out = Outputs::new(config.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")))?;
    Ok(Prepared {
        config,
        problem,
        mu,
        xi,
        scenarios,
        out,
        timestamp: !args.no_timestamp,
    })
}

fn run_key(p: &Prepared, mu: &RelaxedControl, xi: &SingularControl) -> Result<String> {
    let problem = serde_json::to_vec(&p.problem)?;
    let controls = serde_json::to_vec(&ControlsDocument::new(p.problem.time.horizon, &p.problem.action_grid, mu, xi))?;
    Ok(cache_key(&[
        &problem,
        &controls,
        &(p.config.scenarios as u64).to_le_bytes(),
        &p.config.seed.to_le_bytes(),
    ]))
}

fn write_cache(out: &mut Outputs, key: &str, bundle: &TrajectoryBundle, extra: Vec<(String, Vec<f64>)>) -> Result<()> {
    let mut cache = CacheFile::from_bundle(bundle);
    cache.arrays.extend(extra);
    let mut bytes = Vec::new();
    cache.write_to(&mut bytes)?;
    out.write(&format!("cache/{key}.bin"), &bytes)
}

fn csv_bytes<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn cmd_simulate(args: &RunArgs) -> Result<i32> {
    let mut p = prepare(args)?;
    let bundle = simulate_forward(&p.problem, p.scenarios.clone(), &p.mu, &p.xi)?;
    let moments = moment_diagnostics(&p.problem, &bundle, 2.0);
    let key = run_key(&p, &p.mu, &p.xi)?;
    p.out.write("trajectories.csv", &csv_bytes(|b| write_trajectories_csv(&bundle, b))?)?;
    p.out.json("moments.json", &moments)?;
    write_cache(&mut p.out, &key, &bundle, Vec::new())?;
    p.out.finish("simulate", &p.config, key, p.timestamp)?;
    if !moments.healthy() {
        eprintln!("simulation exploded (moment diagnostics not finite or above threshold)");
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct OptimizeReport<'a> {
    status: &'static str,
    iterations: usize,
    cost: CostEstimate,
    optimality: &'a OptimalityReport,
}

pub fn cmd_optimize(args: &RunArgs) -> Result<i32> {
    let mut p = prepare(args)?;
    let outcome = optimize(
        &p.problem,
        p.scenarios.clone(),
        p.mu.clone(),
        p.xi.clone(),
        &p.config.optimizer,
        &p.config.tolerances,
    )?;
    let state = &outcome.state;
    let status = if state.converged {
        "converged"
    } else if state.stalled {
        "stalled"
    } else {
        "not-converged"
    };
    let key = run_key(&p, &state.mu, &state.xi)?;
    let horizon = p.problem.time.horizon;
    p.out.write("trajectories.csv", &csv_bytes(|b| write_trajectories_csv(&outcome.bundle, b))?)?;
    p.out.write("adjoints.csv", &csv_bytes(|b| outcome.adjoint.write_csv(horizon, b))?)?;
    p.out.write("iterations.csv", &csv_bytes(|b| write_iterations_csv(&outcome.records, b))?)?;
    p.out.json(
        "controls.json",
        &ControlsDocument::new(horizon, &p.problem.action_grid, &state.mu, &state.xi),
    )?;
    p.out.json(
        "report.json",
        &OptimizeReport {
            status,
            iterations: state.iteration,
            cost: state.cost,
            optimality: &outcome.report,
        },
    )?;
    write_cache(&mut p.out, &key, &outcome.bundle, outcome.adjoint.cache_arrays())?;
    p.out.finish("optimize", &p.config, key, p.timestamp)?;
    println!("status: {status} after {} accepted step(s)", state.iteration);
    print!("{}", outcome.report.render());
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct VerifyReport<'a> {
    cost: CostEstimate,
    optimality: &'a OptimalityReport,
}

pub fn cmd_verify(args: &RunArgs, controls: &Path) -> Result<i32> {
    let mut p = prepare(args)?;
    let doc: ControlsDocument = serde_json::from_str(&fs::read_to_string(controls)?)?;
    let (mu, xi) = doc.into_controls(
        &p.problem.action_grid,
        p.problem.time.horizon,
        p.problem.time.steps,
        p.problem.singular_dim,
    )?;
    xi.check_admissible(p.problem.singular_cap)?;
    let bundle = simulate_forward(&p.problem, p.scenarios.clone(), &mu, &xi)?;
    let adjoint = solve_adjoint(&p.problem, &bundle, p.config.optimizer.adjoint, &p.config.optimizer.regression)?;
    let report = check_max_principle(&p.problem, &bundle, &adjoint, &p.config.tolerances)?;
    let key = run_key(&p, &mu, &xi)?;
    p.out.write(
        "adjoints.csv",
        &csv_bytes(|b| adjoint.write_csv(p.problem.time.horizon, b))?,
    )?;
    p.out.json(
        "report.json",
        &VerifyReport {
            cost: evaluate_cost(&p.problem, &bundle),
            optimality: &report,
        },
    )?;
    p.out.finish("verify", &p.config, key, p.timestamp)?;
    print!("{}", report.render());
    Ok(if report.passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}

pub fn cmd_example_bond(out: &Path) -> Result<i32> {
    fs::create_dir_all(out)?;
    let path = out.join("example-bond.json");
    fs::write(&path, EXAMPLE_BOND)?;
    println!("{}", path.display());
    Ok(EXIT_OK)
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Verify { run, controls } => cmd_verify(run, controls),
        Command::ExampleBond { out } => cmd_example_bond(out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
