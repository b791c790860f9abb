//! Command-line front end: run bound sweeps from a TOML configuration, print
//! reference values and run the built-in invariant suite.
//!
//! Exit codes: 0 success, 1 a flag failed, 2 configuration error, 3 solver
//! failure.

mod config;
mod output;

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use galerkin_bounds::certify::{run_sweep, BoundReport};
use galerkin_bounds::oracle::{collocation_cost, default_horizon, solve_care};
use galerkin_bounds::selftest::{run_selftest, SelftestOptions};
use galerkin_bounds::sets::UpperSetMode;
use galerkin_bounds::Error;

use config::{ConfigError, RunConfig};

const THREADS_VAR: &str = "GALERKIN_THREADS";

#[derive(Parser)]
#[command(name = "galerkin-bounds", version, about = "Certified upper and lower bounds for infinite-horizon LQ control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the basis size and write the report files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        tol: Option<f64>,
        #[arg(long)]
        s_max: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Print the Riccati value, closed-loop eigenvalues and collocation band.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in invariant checks and print a pass/fail table.
    Selftest {
        #[arg(long, default_value_t = 1e-8, allow_hyphen_values = true)]
        tol: f64,
        /// Perturb the basis generator to confirm the identity check fires.
        #[arg(long)]
        corrupt_generator: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "sampled")]
    Sampled,
    #[value(name = "sampled_with_tail")]
    SampledWithTail,
}

impl From<ModeArg> for UpperSetMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sampled => UpperSetMode::Sampled,
            ModeArg::SampledWithTail => UpperSetMode::SampledWithTail,
        }
    }
}

enum Failure {
    Flags(String),
    Config(String),
    Solver(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Flags(_) => 1,
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Flags(m) | Failure::Config(m) | Failure::Solver(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

/// Argument errors from the library are configuration errors; anything else
/// is a solver failure.
fn library(e: Error) -> Failure {
    match e {
        Error::InvalidArgument { .. } | Error::DimensionMismatch { .. } => Failure::Config(e.to_string()),
        other => Failure::Solver(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            tol,
            s_max,
            mode,
        } => cmd_run(config, out, tol, s_max, mode),
        Command::Oracle { config } => cmd_oracle(config),
        Command::Selftest { tol, corrupt_generator } => cmd_selftest(tol, corrupt_generator),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn threads_from_env() -> Result<Option<usize>, Failure> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Config(format!("{THREADS_VAR}: expected a positive integer, got {v:?}"))),
        },
    }
}

fn cmd_run(
    path: PathBuf,
    out: Option<PathBuf>,
    tol: Option<f64>,
    s_max: Option<usize>,
    mode: Option<ModeArg>,
) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&path)?;
    if let Some(t) = tol {
        cfg.solver.tol = t;
    }
    if let Some(s) = s_max {
        cfg.basis.s_max = s;
    }
    if let Some(m) = mode {
        cfg.modes.upper_set_mode = m.into();
    }
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    let prob = cfg.problem()?;
    let sweep = cfg.sweep(threads_from_env()?)?;
    let report = run_sweep(&prob, cfg.basis.p, &sweep).map_err(library)?;
    write_outputs(&cfg, &report)?;
    print_summary(&report);

    if report.solver_failures > 0 {
        let sizes: Vec<String> = report
            .records
            .iter()
            .filter(|r| output::row_flags(r).contains("max_iter") || r.error.is_some())
            .map(|r| r.s.to_string())
            .collect();
        return Err(Failure::Solver(format!("solver did not finish at s = {}", sizes.join(", "))));
    }
    let failed = report.flags.failures();
    if !failed.is_empty() {
        return Err(Failure::Flags(format!("flags failed: {}", failed.join(", "))));
    }
    Ok(())
}

fn write_outputs(cfg: &RunConfig, report: &BoundReport) -> Result<(), Failure> {
    let dir = &cfg.output.dir;
    let io = |what: &str, e: &dyn std::fmt::Display| Failure::Config(format!("output.{what}: {e}"));
    std::fs::create_dir_all(dir).map_err(|e| io("dir", &e))?;
    output::write_json(report, &dir.join(&cfg.output.json)).map_err(|e| io("json", &e))?;
    let csv = File::create(dir.join(&cfg.output.csv)).map_err(|e| io("csv", &e))?;
    output::write_report_csv(report, BufWriter::new(csv)).map_err(|e| io("csv", &e))?;
    let plot = File::create(dir.join(&cfg.output.plot)).map_err(|e| io("plot", &e))?;
    output::write_plot_csv(report, BufWriter::new(plot)).map_err(|e| io("plot", &e))?;
    Ok(())
}

fn print_summary(report: &BoundReport) {
    println!("{:>4}  {:>22}  {:>22}  {:>10}  flags", "s", "J_s", "Jtilde_s", "gap");
    let show = |v: Option<f64>| v.map(|x| format!("{x:.15e}")).unwrap_or_else(|| "inf".into());
    for r in &report.records {
        println!(
            "{:>4}  {:>22}  {:>22}  {:>10}  {}",
            r.s,
            show(r.upper_cost),
            show(r.lower_cost),
            r.gap.map(|g| format!("{g:.3e}")).unwrap_or_default(),
            output::row_flags(r)
        );
    }
    match &report.oracle {
        Some(o) => println!("reference: {:.15e} ± {:.3e} ({:?})", o.value, o.band, o.source),
        None => println!("reference: none"),
    }
    let failed = report.flags.failures();
    if failed.is_empty() {
        println!("flags: all enabled flags pass");
    } else {
        println!("flags: failed {}", failed.join(", "));
    }
}

fn cmd_oracle(path: PathBuf) -> Result<(), Failure> {
    let cfg = RunConfig::load(&path)?;
    let prob = cfg.problem()?;
    cfg.sweep(None)?;
    let care = solve_care(prob.a(), prob.b()).map_err(library)?;
    println!("care: J = {:.15e} (unconstrained)", care.cost(prob.x0()));
    println!("care: P = {:?}", care.p.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>());
    println!("care: residual = {:.3e}", care.residual);
    let eigs: Vec<String> = care
        .closed_loop_eigs
        .iter()
        .map(|l| format!("{:.12e}{:+.12e}i", l.re, l.im))
        .collect();
    println!("closed-loop eigenvalues: {}", eigs.join(", "));
    let horizon = cfg.oracle.horizon.unwrap_or_else(|| default_horizon(&care));
    let c = collocation_cost(&prob, horizon, cfg.oracle.intervals).map_err(library)?;
    println!(
        "collocation: J = {:.15e} ± {:.3e} (T = {horizon}, N = {}, {})",
        c.cost,
        c.estimate,
        cfg.oracle.intervals,
        if c.converged { "converged" } else { "not converged" }
    );
    if !c.converged {
        return Err(Failure::Solver("collocation did not converge".into()));
    }
    Ok(())
}

fn cmd_selftest(tol: f64, corrupt_generator: bool) -> Result<(), Failure> {
    let opts = SelftestOptions { tol, corrupt_generator };
    let table = run_selftest(&opts).map_err(library)?;
    let width = table.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &table {
        println!("{:<width$}  {}  {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
    }
    let failed: Vec<&str> = table.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Flags(format!("self-test failed: {}", failed.join(", "))))
    }
}
