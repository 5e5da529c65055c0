//! Command-line front end: `solve`, `sweep` and `validate`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

use crate::dual::DualEngine;
use crate::error::{MecError, Result};
use crate::joint::{solve_design, Design, JointOptions};
use crate::output::{sweep_csv, write_file, write_solution, SweepRow};
use crate::scenario::{load_scenario, Scenario};
use crate::validate::run_all;

pub const DEFAULT_PERIOD: f64 = 6.0;
pub const DEFAULT_TASK_BITS: f64 = 0.4e6;
pub const DEFAULT_T_VALUES: [f64; 5] = [3.0, 4.0, 5.0, 6.0, 7.0];
pub const DEFAULT_L_VALUES: [f64; 6] = [0.1e6, 0.2e6, 0.3e6, 0.4e6, 0.5e6, 0.6e6];

#[derive(Debug, Parser)]
#[command(
    name = "uavmec",
    version,
    about = "Energy minimization for UAV-assisted MEC"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one design and write its CSVs.
    Solve(SolveArgs),
    /// Sweep the horizon or the task size over every design.
    Sweep(SweepArgs),
    /// Run the self-check suite.
    Validate(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Ellipsoid,
    Subgradient,
    Decomposed,
    Auto,
}

impl From<EngineArg> for DualEngine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Ellipsoid => DualEngine::Ellipsoid,
            EngineArg::Subgradient => DualEngine::Subgradient,
            EngineArg::Decomposed => DualEngine::Decomposed,
            EngineArg::Auto => DualEngine::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    #[value(name = "T")]
    T,
    #[value(name = "L")]
    L,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario JSON; the bundled default when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Horizon in seconds.
    #[arg(long = "T")]
    pub period: Option<f64>,
    /// Required bits per TD per slot.
    #[arg(long = "L")]
    pub bits: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = EngineArg::Auto)]
    pub dual_engine: EngineArg,
    /// Relative stopping tolerance of the outer loop.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Outer iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "proposed")]
    pub design: Design,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated parameter values (seconds or bits).
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
    /// Comma-separated designs; all five when omitted.
    #[arg(long, value_delimiter = ',')]
    pub design: Vec<Design>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl CommonArgs {
    pub fn options(&self) -> JointOptions {
        let mut opts = JointOptions::default();
        opts.dual.engine = self.dual_engine.into();
        if let Some(tol) = self.tol {
            opts.tol = tol;
        }
        if let Some(m) = self.max_iter {
            opts.max_iter = m;
        }
        opts
    }

    /// Scenario with `--T` and `--L` applied. Without a file, missing values
    /// fall back to the defaults.
    pub fn scenario(&self) -> Result<Scenario> {
        match &self.scenario {
            Some(path) => {
                let sc = load_scenario(path)?;
                if self.period.is_none() && self.bits.is_none() {
                    return Ok(sc);
                }
                let bits = match self.bits {
                    Some(b) => b,
                    None => uniform_task(&sc)?,
                };
                sc.rescaled(self.period.unwrap_or(sc.period()), bits)
            }
            None => Scenario::default_with(
                self.period.unwrap_or(DEFAULT_PERIOD),
                self.bits.unwrap_or(DEFAULT_TASK_BITS),
            ),
        }
    }
}

fn uniform_task(sc: &Scenario) -> Result<f64> {
    let first = sc.task_min[0][0];
    if sc.task_min.iter().flatten().all(|&b| b == first) {
        Ok(first)
    } else {
        Err(MecError::Invalid {
            field: "L".into(),
            reason: "scenario has a non-uniform task; pass --L to rescale it".into(),
        })
    }
}

fn error_kind(e: &MecError) -> (&'static str, u8) {
    match e {
        MecError::Io { .. } => ("io", 2),
        MecError::Parse(_) => ("parse", 2),
        MecError::Invalid { .. } => ("invalid", 2),
        MecError::Unreachable { .. } => ("unreachable", 3),
        MecError::NonMultiplePeriod { .. } => ("invalid", 2),
        MecError::Infeasible { .. } => ("infeasible", 3),
        MecError::Numerical(_) => ("numerical", 4),
    }
}

/// Prints a one-line JSON error to stderr and returns its exit code.
pub fn report_error(e: &MecError) -> ExitCode {
    let (kind, code) = error_kind(e);
    let line = serde_json::json!({ "error": kind, "message": e.to_string() });
    eprintln!("{line}");
    ExitCode::from(code)
}

pub fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let sc = args.common.scenario()?;
    let opts = args.common.options();
    let start = Instant::now();
    let sol = solve_design(&sc, args.design, &opts)?;
    info!(
        "{} solved in {:.2?}: {:.9e} J ({})",
        args.design,
        start.elapsed(),
        sol.report.energy.total,
        sol.report.status.as_str()
    );
    write_solution(&args.out, &sol, args.design, &sc, args.common.seed)?;
    println!(
        "{} {} objective={:.9e} J feasibility={}",
        args.design,
        sol.report.status.as_str(),
        sol.report.energy.total,
        if sol.report.feasibility.pass {
            "pass"
        } else {
            "fail"
        }
    );
    Ok(())
}

/// Solves every `(value, design)` cell on `jobs` threads; rows come back in
/// value-major, design-minor order regardless of scheduling.
pub fn run_sweep(
    base: &Scenario,
    param: SweepParam,
    values: &[f64],
    designs: &[Design],
    opts: &JointOptions,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let cells: Vec<(f64, Design)> = values
        .iter()
        .flat_map(|&v| designs.iter().map(move |&d| (v, d)))
        .collect();
    let solve_cell = |&(value, design): &(f64, Design)| -> Result<SweepRow> {
        let sc = match param {
            SweepParam::T => base.rescaled(value, uniform_task(base)?)?,
            SweepParam::L => base.rescaled(base.period(), value)?,
        };
        match solve_design(&sc, design, opts) {
            Ok(sol) => Ok(SweepRow::from_solution(value, design, &sol)),
            Err(MecError::Infeasible { .. }) | Err(MecError::Unreachable { .. }) => {
                warn!("{design} infeasible at {value}");
                Ok(SweepRow::infeasible(value, design))
            }
            Err(e) => Err(e),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| MecError::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| cells.par_iter().map(solve_cell).collect())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let base = args.common.scenario()?;
    let values = if !args.values.is_empty() {
        args.values.clone()
    } else {
        match args.param {
            SweepParam::T => DEFAULT_T_VALUES.to_vec(),
            SweepParam::L => DEFAULT_L_VALUES.to_vec(),
        }
    };
    let designs = if args.design.is_empty() {
        Design::ALL.to_vec()
    } else {
        args.design.clone()
    };
    let rows = run_sweep(
        &base,
        args.param,
        &values,
        &designs,
        &args.common.options(),
        args.common.jobs,
    )?;
    write_file(&args.out, "sweep.csv", &sweep_csv(&rows))?;
    println!(
        "{} cells written to {}",
        rows.len(),
        args.out.join("sweep.csv").display()
    );
    Ok(())
}

/// Returns whether every check passed.
pub fn cmd_validate(args: &CommonArgs) -> Result<bool> {
    let sc = args.scenario()?;
    let mut all = true;
    for check in run_all(&sc, args.seed, &args.options()) {
        all &= check.pass;
        let tag = if check.pass { "PASS" } else { "FAIL" };
        println!("{tag} {}: {}", check.name, check.detail);
    }
    Ok(all)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("MEC_LOG", "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => report_error(&e),
    }
}
