//! Command-line front end: `run` a config, `sweep` a grid over one, or
//! `verify` the built-in check suites.
//!
//! Exit codes: 0 success, 1 verification failure, 2 config error,
//! 3 divergence.

use clap::{Parser, Subcommand};
use lnsgd::config;
use lnsgd::runner;
use lnsgd::verify::{self, Suite};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lnsgd",
    about = "Two-layer linear network training dynamics: label-noise SGD, SAM, \
             oscillation chains, and their verification suite",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute one run config and write its trace and summary.
    Run {
        /// Path to the config file.
        config: PathBuf,
        /// Directory for the declared output files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Cartesian-product sweep of one or more key=v1,v2,... grids over a
    /// base config; one independent run per point.
    Sweep {
        config: PathBuf,
        /// Grid axis, e.g. --grid schedule.0.sigma=0,0.5,1 (repeatable).
        #[arg(long = "grid", required = true)]
        grid: Vec<String>,
        #[arg(long, default_value = "sweep_out")]
        out: PathBuf,
    },
    /// Run the verification suite and print one line per check.
    Verify {
        /// quick (smoke scale) or full (acceptance scale).
        #[arg(default_value = "quick")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report array as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

const EXIT_CHECK_FAILURE: u8 = 1;
const EXIT_CONFIG_ERROR: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

fn workers_from_env() -> Option<usize> {
    std::env::var("LNSGD_WORKERS").ok().and_then(|v| v.parse().ok())
}

fn load_config(path: &PathBuf) -> Result<config::RunConfig, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG_ERROR)
    })?;
    config::parse_str(&text).map_err(|e| {
        eprintln!("{e}");
        ExitCode::from(EXIT_CONFIG_ERROR)
    })
}

fn cmd_run(path: PathBuf, out: PathBuf) -> ExitCode {
    let cfg = match load_config(&path) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    for warning in config::check_conditions(&cfg) {
        eprintln!("condition: {warning}");
    }
    match runner::execute_run(&cfg, &out) {
        Ok(outcome) => {
            let s = &outcome.summary;
            println!("experiment       : {}", s.experiment);
            println!("steps run        : {}", s.steps_run);
            println!("final train loss : {:.6e}", s.final_train_loss);
            println!("final pop loss   : {:.6e}", s.final_pop_loss);
            println!("final theta err  : {:.6e}", s.final_theta_err);
            let pr = &s.phase_report;
            println!(
                "escape           : full at {:?}; per-neuron escaped {}/{}",
                s.escape_step,
                pr.escape_step_per_neuron.iter().filter(|e| e.is_some()).count(),
                pr.escape_step_per_neuron.len()
            );
            println!("phase-2 entry    : {:?}", pr.phase2_entry_step);
            if let Some(t1) = pr.t1_predicted {
                println!("predicted T1     : {t1:.1}");
            }
            println!("mean align (end) : {:.4}", pr.alignment_at_end);
            println!("converged        : {}", pr.converged);
            println!("|a| bound excess : {:.3}", pr.a_bound_violation_rate);
            if let Some(path) = &outcome.trace_path {
                println!("trace            : {}", path.display());
            }
            if let Some(path) = &outcome.summary_path {
                println!("summary          : {}", path.display());
            }
            match &s.aborted {
                Some(detail) => {
                    eprintln!("aborted: {detail}");
                    ExitCode::from(EXIT_DIVERGENCE)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            if e.is_divergence() {
                ExitCode::from(EXIT_DIVERGENCE)
            } else {
                ExitCode::from(EXIT_CONFIG_ERROR)
            }
        }
    }
}

fn cmd_sweep(path: PathBuf, grid: Vec<String>, out: PathBuf) -> ExitCode {
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", path.display());
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
    };
    let mut grids = Vec::new();
    for arg in &grid {
        match config::parse_grid_arg(arg) {
            Ok(g) => grids.push(g),
            Err(e) => {
                eprintln!("{e}");
                eprintln!("usage: lnsgd sweep <cfg> --grid key=v1,v2 [--grid key2=...]");
                return ExitCode::from(EXIT_CONFIG_ERROR);
            }
        }
    }
    let points = match config::expand_grid(&text, &grids) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
    };
    println!("sweep: {} points -> {}", points.len(), out.display());
    match runner::execute_sweep(points, &out, workers_from_env()) {
        Ok(rows) => {
            for row in &rows {
                let assignment: Vec<String> =
                    row.assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("point {:4}  {:40}  {}", row.point, assignment.join(" "), row.status);
            }
            println!("aggregate: {}", out.join("sweep_summary.csv").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sweep failed: {e}");
            ExitCode::from(EXIT_CONFIG_ERROR)
        }
    }
}

fn cmd_verify(suite: String, seed: u64, json: Option<PathBuf>) -> ExitCode {
    let suite: Suite = match suite.parse() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
    };
    let run = || verify::run_suite(suite, seed);
    let reports = match workers_from_env() {
        Some(w) => match rayon_pool(w) {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(EXIT_CONFIG_ERROR);
            }
        },
        None => run(),
    };
    let reports = match reports {
        Ok(r) => r,
        Err(e) => {
            eprintln!("verify failed to run: {e}");
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
    };
    print!("{}", verify::render_table(&reports));
    if let Some(path) = json {
        match serde_json::to_string_pretty(&reports) {
            Ok(body) => {
                if let Err(e) = std::fs::write(&path, body) {
                    eprintln!("cannot write {}: {e}", path.display());
                    return ExitCode::from(EXIT_CONFIG_ERROR);
                }
                println!("report: {}", path.display());
            }
            Err(e) => {
                eprintln!("cannot serialize reports: {e}");
                return ExitCode::from(EXIT_CONFIG_ERROR);
            }
        }
    }
    let failures = reports.iter().filter(|r| r.failed()).count();
    let skipped = reports.iter().filter(|r| r.precondition_skipped).count();
    println!(
        "{} checks, {} failed, {} precondition-skipped",
        reports.len(),
        failures,
        skipped
    );
    if failures > 0 {
        ExitCode::from(EXIT_CHECK_FAILURE)
    } else {
        ExitCode::SUCCESS
    }
}

fn rayon_pool(workers: usize) -> Result<rayon::ThreadPool, String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| format!("worker pool: {e}"))
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run { config, out } => cmd_run(config, out),
        Cmd::Sweep { config, grid, out } => cmd_sweep(config, grid, out),
        Cmd::Verify { suite, seed, json } => cmd_verify(suite, seed, json),
    }
}
