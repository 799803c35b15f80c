//! `lincom-ci`: exact intervals, PMFs, coverage sweeps and Bayes cost from the
//! command line.
//!
//! Results go to standard output (JSON or CSV), diagnostics to standard error.
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure.

mod input;

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lincom_core::bayescost::{bc_interval, bc_weights, estimate_bc, ContingencyTable, CostMatrix, PrevalenceVector, Rounding};
use lincom_core::coverage::{
    comparator_curve, coverage_curve_with_table, interval_table, run_scenario, write_curve_csv, Comparator, Method,
};
use lincom_core::model::{estimate_l, rational_to_f64};
use lincom_core::pmf::{pmf_bruteforce, pmf_fft};
use lincom_core::{
    adjust_alpha, fiducial_interval, Budget, CoverageReport, Execution, OptimizerConfig, Problem, ScenarioId,
    ScenarioSpec, SolverConfig,
};
use serde::Serialize;
use serde_json::json;

pub use input::RunConfig;

/// Caps the worker pool size.
pub const THREADS_ENV: &str = "LINCOM_CI_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] lincom_core::Error),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("invalid {field}: {message}")]
    Parse { field: String, message: String },
    #[error("write failed: {0}")]
    Output(#[from] io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lincom-ci", version, about = "Exact confidence intervals for linear combinations of multinomial probabilities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Point estimate and exact interval for observed counts.
    Bounds(BoundsArgs),
    /// Exact PMF of the plug-in statistic at a given p.
    Pmf(PmfArgs),
    /// Coverage curve of the exact interval (and optionally a comparator).
    Coverage(CoverageArgs),
    /// One of the built-in simulation scenarios A-D.
    Scenario(ScenarioArgs),
    /// Significance level whose intervals have average coverage 1 - alpha.
    AdjustAlpha(AdjustArgs),
    /// Bayes cost of a classifier with an exact interval.
    BayesCost(BayesCostArgs),
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Random exploration draws per tail evaluation.
    #[arg(long, default_value_t = 20)]
    nr: usize,
    /// Perturbation steps per tail evaluation.
    #[arg(long, default_value_t = 20)]
    ns: usize,
    /// Base seed; defaults to the config's seed, then 42.
    #[arg(long)]
    seed: Option<u64>,
    /// Initial perturbation scale.
    #[arg(long, default_value_t = 0.25)]
    scale: f64,
    /// Per-step scale multiplier.
    #[arg(long)]
    decay: Option<f64>,
    /// Root-finding tolerance on the tail functional.
    #[arg(long, default_value_t = 1e-4)]
    tol_f: f64,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
}

impl SolverArgs {
    fn seed(&self, config: Option<&RunConfig>) -> u64 {
        self.seed.or_else(|| config.and_then(|c| c.seed)).unwrap_or(42)
    }

    fn solver(&self, seed: u64) -> Result<SolverConfig, CliError> {
        let defaults = OptimizerConfig::default();
        let cfg = SolverConfig {
            tol_f: self.tol_f,
            optimizer: OptimizerConfig {
                n_r: self.nr,
                n_s: self.ns,
                seed,
                initial_scale: self.scale,
                decay: self.decay.unwrap_or(defaults.decay),
            },
            ..SolverConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BudgetProfile {
    Desk,
    Full,
}

#[derive(Debug, Args)]
struct BudgetArgs {
    #[arg(long, value_enum, default_value = "desk")]
    budget: BudgetProfile,
    /// Overrides the number of L grid points.
    #[arg(long)]
    n_l: Option<usize>,
    /// Overrides the number of p per L.
    #[arg(long)]
    n_p: Option<usize>,
    /// Overrides the Monte Carlo draws per p.
    #[arg(long)]
    draws: Option<usize>,
}

impl BudgetArgs {
    fn budget(&self) -> Result<Budget, CliError> {
        let base = match self.budget {
            BudgetProfile::Desk => Budget::desk(),
            BudgetProfile::Full => Budget::full(),
        };
        let budget = Budget {
            n_l: self.n_l.unwrap_or(base.n_l),
            n_p: self.n_p.unwrap_or(base.n_p),
            n_draws: self.draws.unwrap_or(base.n_draws),
        };
        budget.validate()?;
        Ok(budget)
    }
}

#[derive(Debug, Args)]
struct BoundsArgs {
    /// Problem definition (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Observed counts, one CSV row per experiment.
    #[arg(long)]
    counts: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    /// Replace alpha by its average-coverage adjustment first.
    #[arg(long)]
    adjust: bool,
    #[command(flatten)]
    budget: BudgetArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct PmfArgs {
    #[arg(long)]
    config: PathBuf,
    /// Probabilities, one CSV row per experiment.
    #[arg(long)]
    p: PathBuf,
    /// Enumerate the sample space instead of using the FFT.
    #[arg(long)]
    brute_force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ComparatorArg {
    Gold,
    Goodman,
}

impl From<ComparatorArg> for Comparator {
    fn from(c: ComparatorArg) -> Self {
        match c {
            ComparatorArg::Gold => Comparator::Gold,
            ComparatorArg::Goodman => Comparator::Goodman,
        }
    }
}

#[derive(Debug, Args)]
struct CoverageArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    comparator: Option<ComparatorArg>,
    /// Also write a JSON summary (averages, minima, runtime) here.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    budget: BudgetArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// A, B, C or D.
    #[arg(long)]
    id: String,
    /// Trials per experiment.
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    budget: BudgetArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct AdjustArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    budget: BudgetArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct BayesCostArgs {
    /// K x K counts, rows = truth, columns = assigned class.
    #[arg(long)]
    table: PathBuf,
    /// K x K misclassification costs in the same orientation as the table.
    #[arg(long)]
    costs: PathBuf,
    /// K prevalences on one row.
    #[arg(long)]
    prev: PathBuf,
    /// Round weights to the nearest integer.
    #[arg(long)]
    round: bool,
    /// Inputs have truth in columns.
    #[arg(long)]
    transpose: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    solver: SolverArgs,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn dispatch<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render();
            let code = if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
            return code;
        }
    };
    configure_threads(err);
    match run(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads(err: &mut dyn Write) {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            #[cfg(feature = "parallel")]
            {
                // Already initialized in this process: keep the existing pool.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
        _ => {
            let _ = writeln!(err, "warning: ignoring {THREADS_ENV}={value}");
        }
    }
}

fn resolve_alpha(flag: Option<f64>, config: &RunConfig) -> f64 {
    flag.or(config.alpha).unwrap_or(0.05)
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::Parse {
            field: "alpha".into(),
            message: format!("{alpha} is not in (0, 1)"),
        })
    }
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn run(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Bounds(a) => bounds(a, out, err),
        Command::Pmf(a) => pmf(a, out),
        Command::Coverage(a) => coverage(a, out, err),
        Command::Scenario(a) => scenario(a, out, err),
        Command::AdjustAlpha(a) => adjust(a, out, err),
        Command::BayesCost(a) => bayes_cost(a, out),
    }
}

fn bounds(a: BoundsArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let config = input::read_config(&a.config)?;
    let alpha = resolve_alpha(a.alpha, &config);
    check_alpha(alpha)?;
    let problem = config.problem()?;
    let counts = input::read_counts(&a.counts)?;
    let seed = a.solver.seed(Some(&config));
    let cfg = a.solver.solver(seed)?;
    let adjusted = if a.adjust {
        let budget = a.budget.budget()?;
        let adj = adjust_alpha(&problem, alpha, &budget, &cfg, seed, a.solver.execution())?;
        writeln!(err, "adjusted alpha {} (average coverage {})", adj.alpha_prime, adj.average_coverage)?;
        Some(adj.alpha_prime)
    } else {
        None
    };
    let b = fiducial_interval(&problem, &counts, adjusted.unwrap_or(alpha), &cfg)?;
    if b.residuals.0.abs() > cfg.tol_f || b.residuals.1.abs() > cfg.tol_f {
        writeln!(err, "warning: root residuals {:?} exceed tol-f", b.residuals)?;
    }
    print_json(
        out,
        &json!({
            "estimate": rational_to_f64(&estimate_l(&problem, &counts)?),
            "lower": b.lower,
            "upper": b.upper,
            "alpha": alpha,
            "adjusted_alpha": adjusted,
            "lower_pinned": b.lb_pinned,
            "upper_pinned": b.ub_pinned,
        }),
    )
}

fn pmf(a: PmfArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let problem = input::read_config(&a.config)?.problem()?;
    let p = input::read_point(&a.p)?;
    let pmf = if a.brute_force {
        pmf_bruteforce(&problem, &p)?
    } else {
        pmf_fft(&problem, &p)?
    };
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["y", "probability"])?;
    for (j, (_, prob)) in pmf.points().enumerate() {
        if problem.is_attainable(j) {
            writer.write_record([pmf.lattice().value(j).to_string(), prob.to_string()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveSummary {
    method: Method,
    degrees_of_freedom: Option<usize>,
    average_coverage: f64,
    min_coverage: f64,
}

impl From<&CoverageReport> for CurveSummary {
    fn from(r: &CoverageReport) -> Self {
        Self {
            method: r.method,
            degrees_of_freedom: r.degrees_of_freedom,
            average_coverage: r.avg_coverage,
            min_coverage: r.conf_coeff_estimate,
        }
    }
}

fn write_summary(
    path: Option<&PathBuf>,
    alpha: f64,
    budget: &Budget,
    exact: &CoverageReport,
    comparator: Option<&CoverageReport>,
    started: Instant,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let summary = json!({
        "alpha": alpha,
        "budget": budget,
        "exact": CurveSummary::from(exact),
        "comparator": comparator.map(CurveSummary::from),
        "runtime_seconds": started.elapsed().as_secs_f64(),
    });
    writeln!(
        err,
        "exact: average {:.4}, min {:.4}",
        exact.avg_coverage, exact.conf_coeff_estimate
    )?;
    if let Some(c) = comparator {
        writeln!(err, "comparator: average {:.4}, min {:.4}", c.avg_coverage, c.conf_coeff_estimate)?;
    }
    if let Some(path) = path {
        let text = serde_json::to_string_pretty(&summary).map_err(io::Error::from)?;
        std::fs::write(path, text + "\n").map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

fn coverage(a: CoverageArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let started = Instant::now();
    let config = input::read_config(&a.config)?;
    let alpha = resolve_alpha(a.alpha, &config);
    check_alpha(alpha)?;
    let problem = config.problem()?;
    let budget = a.budget.budget()?;
    let seed = a.solver.seed(Some(&config));
    let cfg = a.solver.solver(seed)?;
    let exec = a.solver.execution();
    let table = interval_table(&problem, alpha, &cfg, exec)?;
    let exact = coverage_curve_with_table(&problem, &table, budget.n_l, budget.n_p, seed, exec)?;
    let other = a
        .comparator
        .map(|c| comparator_curve(&problem, c.into(), alpha, &budget, seed, exec))
        .transpose()?;
    write_curve_csv(&mut *out, &exact, other.as_ref())?;
    write_summary(a.summary.as_ref(), alpha, &budget, &exact, other.as_ref(), started, err)
}

fn scenario(a: ScenarioArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let started = Instant::now();
    check_alpha(a.alpha)?;
    let id: ScenarioId = a.id.parse()?;
    let budget = a.budget.budget()?;
    let seed = a.solver.seed(None);
    let cfg = a.solver.solver(seed)?;
    let result = run_scenario(ScenarioSpec::new(id, a.n), a.alpha, &budget, &cfg, seed, a.solver.execution())?;
    result.write_csv(&mut *out)?;
    write_summary(
        a.summary.as_ref(),
        a.alpha,
        &budget,
        &result.exact,
        result.comparator.as_ref(),
        started,
        err,
    )
}

fn adjust(a: AdjustArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let config = input::read_config(&a.config)?;
    let alpha = resolve_alpha(a.alpha, &config);
    check_alpha(alpha)?;
    let problem: Problem = config.problem()?;
    let budget = a.budget.budget()?;
    let seed = a.solver.seed(Some(&config));
    let cfg = a.solver.solver(seed)?;
    let started = Instant::now();
    let adj = adjust_alpha(&problem, alpha, &budget, &cfg, seed, a.solver.execution())?;
    writeln!(err, "adjust-alpha finished in {:.1?}", started.elapsed())?;
    print_json(
        out,
        &json!({
            "alpha": adj.alpha,
            "adjusted_alpha": adj.alpha_prime,
            "average_coverage": adj.average_coverage,
            "unadjusted_average_coverage": adj.base_coverage,
            "method": Method::ExactAdjusted,
            "budget": budget,
        }),
    )
}

fn bayes_cost(a: BayesCostArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_alpha(a.alpha)?;
    let mut table = ContingencyTable::new(input::read_integer_matrix(&a.table, "table")?)?;
    let mut costs = CostMatrix::new(input::read_rational_matrix(&a.costs, "costs")?)?;
    if a.transpose {
        table = table.transpose()?;
        costs = costs.transpose();
    }
    let prev_rows = input::read_rational_matrix(&a.prev, "prev")?;
    let prev = PrevalenceVector::new(prev_rows.into_iter().flatten().collect())?;
    let rounding = if a.round { Rounding::NearestInteger } else { Rounding::None };
    let weights = bc_weights(&costs, &prev, rounding)?;
    let cfg = a.solver.solver(a.solver.seed(None))?;
    let estimate = estimate_bc(&table, &weights)?;
    let b = bc_interval(&table, &weights, a.alpha, &cfg)?;
    let weights_f64: Vec<Vec<f64>> = weights
        .iter()
        .map(|row| row.iter().map(rational_to_f64).collect())
        .collect();
    print_json(
        out,
        &json!({
            "estimate": rational_to_f64(&estimate),
            "lower": b.lower,
            "upper": b.upper,
            "alpha": a.alpha,
            "weights": weights_f64,
        }),
    )
}
