//! Monte-Carlo and brute-force verification of every claim about the
//! dynamics that a desk machine can test.
//!
//! Each check produces a [`VerifyReport`] carrying the measured statistic,
//! the bound or target it is held against, and a Monte-Carlo standard
//! error where one applies. A report whose operational preconditions are
//! unmet is marked `precondition_skipped` instead of failed; the suite
//! exit status counts only non-skipped failures.

pub mod checks;
pub mod oracle;

pub use checks::{
    check_concentration_probes, check_convergence, check_deltaw_signs, check_escape,
    check_markov_autocovariance, check_phase2_alignment, check_simulation_decay,
    check_theta_expectation, predicted_escape_time, predicted_escape_time_log10,
    ConcentrationConfig, ConvergenceConfig, DeltaWSignsConfig, EscapeCheckConfig,
    MarkovAutocovConfig, Phase2AlignmentConfig, SimulationDecayConfig,
    ThetaExpectationConfig,
};
pub use oracle::{chain_autocov_exact, deltaw_positive_prob_oracle};

use crate::error::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub check: String,
    pub statistic: f64,
    pub bound_or_target: f64,
    pub mc_stderr: f64,
    pub n_trials: u64,
    pub passed: bool,
    pub precondition_skipped: bool,
    pub notes: String,
}

impl VerifyReport {
    /// A hard failure: not passed and not skipped.
    pub fn failed(&self) -> bool {
        !self.passed && !self.precondition_skipped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Smoke scale: every check family at reduced trial counts; minutes.
    Quick,
    /// Full acceptance scale.
    Full,
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "quick" => Ok(Suite::Quick),
            "full" => Ok(Suite::Full),
            other => Err(format!("unknown suite {other:?} (expected quick or full)")),
        }
    }
}

/// Runs every check family of a suite. Families execute in parallel with
/// independent streams derived from `seed`; the merged report vector is in
/// a fixed order, so the serialized output is byte-identical for a given
/// `(suite, seed)`.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<VerifyReport>> {
    type Job = Box<dyn Fn() -> Result<Vec<VerifyReport>> + Send + Sync>;
    let quick = suite == Suite::Quick;
    let jobs: Vec<Job> = vec![
        Box::new(move || {
            check_deltaw_signs(DeltaWSignsConfig {
                m: 4096,
                d: 16,
                sigma: 1.0,
                n_trials: if quick { 20_000 } else { 100_000 },
                seed,
            })
        }),
        Box::new(move || {
            Ok(vec![check_markov_autocovariance(MarkovAutocovConfig {
                m: if quick { 100 } else { 200 },
                eta: 0.01,
                horizon: if quick { 400 } else { 520 },
                n_seeds: if quick { 5 } else { 10 },
                seed,
            })?])
        }),
        Box::new(move || {
            Ok(vec![check_theta_expectation(ThetaExpectationConfig {
                m: if quick { 32 } else { 64 },
                d: 8,
                eta: 0.01,
                horizon: if quick { 500 } else { 2000 },
                n_seeds: if quick { 60 } else { 500 },
                seed,
            })?])
        }),
        Box::new(move || {
            let mut reports = vec![check_simulation_decay(SimulationDecayConfig {
                eta: 0.04,
                d: 8,
                n_seeds: 20,
                seed,
            })?];
            if !quick {
                reports.push(check_simulation_decay(SimulationDecayConfig {
                    eta: 0.01,
                    d: 8,
                    n_seeds: 20,
                    seed,
                })?);
            }
            Ok(reports)
        }),
        Box::new(move || {
            let mut reports = vec![check_escape(EscapeCheckConfig {
                m: 64,
                d: 8,
                eta: 0.01,
                sigma: 1.0,
                n_seeds: if quick { 3 } else { 10 },
                seed,
                horizon_cap: 50_000,
            })?];
            if !quick {
                // The formula-scale configuration; see the report notes for
                // the measured stability behavior.
                reports.push(check_escape(EscapeCheckConfig {
                    m: 1024,
                    d: 32,
                    eta: 0.1,
                    sigma: 1.0,
                    n_seeds: 10,
                    seed,
                    horizon_cap: 40_000,
                })?);
            }
            Ok(reports)
        }),
        Box::new(move || {
            Ok(vec![check_phase2_alignment(Phase2AlignmentConfig {
                m: 64,
                d: 16,
                eta: 0.01,
                theta_norm: 0.5,
                n_seeds: if quick { 3 } else { 10 },
                seed,
            })?])
        }),
        Box::new(move || {
            Ok(vec![check_convergence(ConvergenceConfig {
                m: 64,
                d: 16,
                eta: 0.01,
                theta_norm: 0.5,
                n_seeds: if quick { 3 } else { 10 },
                seed,
            })?])
        }),
        Box::new(move || {
            // The probes' own precondition floor is 1e5 trials; below it
            // they self-mark as skipped, so quick keeps the floor.
            check_concentration_probes(ConcentrationConfig { d: 64, n_trials: 100_000, seed })
        }),
    ];
    let results: Vec<Result<Vec<VerifyReport>>> =
        jobs.par_iter().map(|job| job()).collect();
    let mut merged = Vec::new();
    for r in results {
        merged.extend(r?);
    }
    Ok(merged)
}

/// Human-readable one-line-per-check table.
pub fn render_table(reports: &[VerifyReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let status = if r.precondition_skipped {
            "SKIP"
        } else if r.passed {
            "PASS"
        } else {
            "FAIL"
        };
        out.push_str(&format!(
            "{status:4}  {:38} stat={:<12.6} target={:<12.6} se={:<10.3e} n={}\n",
            r.check, r.statistic, r.bound_or_target, r.mc_stderr, r.n_trials
        ));
    }
    out
}
