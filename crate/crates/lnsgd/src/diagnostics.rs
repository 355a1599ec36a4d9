//! Everything the two-phase picture is measured with.
//!
//! Phase I is about norms: the per-step quantity
//! `ΔWᵢ = −r²((xᵀwᵢ)² − aᵢ²‖x‖²)` accounts exactly for the change of
//! `‖wᵢ‖²` through a telescoping identity, and escape from the lazy regime
//! is the event `‖wᵢ(t) − wᵢ(0)‖ > 1/√m`. Phase II is about directions:
//! the alignment cosine against the teacher, and a closed-form rank-two
//! matrix exponential that predicts where gradient descent sends each
//! stacked `(wᵢ; aᵢ)` once the parameters are small.

use crate::data::{Dataset, TeacherProblem};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, norm_sq};
use crate::model::NetworkParams;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// `ΔW = −r²((xᵀw)² − a²‖x‖²)`: positive exactly when the sampled input is
/// more aligned with the second-layer weight than with the neuron.
pub fn delta_w(residual: f64, x: &[f64], w_i: &[f64], a_i: f64) -> f64 {
    let proj = dot(x, w_i);
    -(residual * residual) * (proj * proj - a_i * a_i * norm_sq(x))
}

/// Accumulates the telescoping identity
/// `‖wᵢ(T)‖² = ‖wᵢ(0)‖² + η²·ΣⱼΔWᵢ(j) − aᵢ(0)² + aᵢ(T)²`
/// for every neuron over a single-sample coupled-update segment. The
/// identity is exact algebra; in double precision the residual stays at
/// rounding level, which is what [`TelescopeTracker::residuals`] reports.
#[derive(Debug, Clone)]
pub struct TelescopeTracker {
    eta: f64,
    w_norm_sq_start: Vec<f64>,
    a_sq_start: Vec<f64>,
    dw_sum: Vec<f64>,
    steps: u64,
}

impl TelescopeTracker {
    /// Snapshots the current state as the segment start.
    pub fn new(p: &NetworkParams, eta: f64) -> Self {
        let m = p.m();
        Self {
            eta,
            w_norm_sq_start: (0..m).map(|i| norm_sq(p.neuron(i))).collect(),
            a_sq_start: p.a().iter().map(|a| a * a).collect(),
            dw_sum: vec![0.0; m],
            steps: 0,
        }
    }

    /// Feeds one step, given the pre-step projections `z = Wx` and the
    /// pre-step second layer. Called by the steppers before they mutate.
    pub fn accumulate(&mut self, r: f64, x_norm_sq: f64, z: &[f64], a: &[f64]) {
        let r_sq = r * r;
        for ((sum, zi), ai) in self.dw_sum.iter_mut().zip(z).zip(a) {
            *sum += -r_sq * (zi * zi - ai * ai * x_norm_sq);
        }
        self.steps += 1;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Running `Σⱼ ΔWᵢ(j)` per neuron (unweighted by η²).
    pub fn cum_dw(&self) -> &[f64] {
        &self.dw_sum
    }

    /// Per-neuron `|‖wᵢ(T)‖² − (‖wᵢ(0)‖² + η²ΣΔWᵢ − aᵢ(0)² + aᵢ(T)²)|`
    /// evaluated against the current parameters.
    pub fn residuals(&self, p: &NetworkParams) -> Vec<f64> {
        let eta_sq = self.eta * self.eta;
        (0..p.m())
            .map(|i| {
                let lhs = norm_sq(p.neuron(i));
                let rhs = self.w_norm_sq_start[i] + eta_sq * self.dw_sum[i]
                    - self.a_sq_start[i]
                    + p.a()[i] * p.a()[i];
                (lhs - rhs).abs()
            })
            .collect()
    }

    /// The per-neuron pass bound `1e-8·(1 + ‖wᵢ(0)‖²)`.
    pub fn bounds(&self) -> Vec<f64> {
        self.w_norm_sq_start.iter().map(|w| 1e-8 * (1.0 + w)).collect()
    }
}

/// Per-neuron distance from initialization and the escape flags of the
/// lazy-regime definition (`escaped ⟺ distance > 1/√m`; staying exactly at
/// the threshold still counts as lazy).
#[derive(Debug, Clone)]
pub struct EscapeStatus {
    pub distances: Vec<f64>,
    pub escaped: Vec<bool>,
    pub frac_escaped: f64,
}

pub fn lazy_escape_status(p: &NetworkParams) -> EscapeStatus {
    let m = p.m();
    let threshold = 1.0 / (m as f64).sqrt();
    let distances: Vec<f64> = (0..m)
        .map(|i| {
            let d_sq: f64 = p
                .neuron(i)
                .iter()
                .zip(p.neuron0(i))
                .map(|(w, w0)| (w - w0) * (w - w0))
                .sum();
            d_sq.sqrt()
        })
        .collect();
    let escaped: Vec<bool> = distances.iter().map(|d| *d > threshold).collect();
    let frac = escaped.iter().filter(|e| **e).count() as f64 / m as f64;
    EscapeStatus { distances, escaped, frac_escaped: frac }
}

/// `|⟨θ*, w⟩| / (‖θ*‖·‖w‖)`, defined as 0 for a degenerate neuron.
pub fn alignment_cosine(w: &[f64], theta_star: &[f64]) -> Result<f64> {
    let ts_norm = norm(theta_star);
    if ts_norm == 0.0 {
        return Err(Error::InvalidArgument("alignment against a zero teacher".into()));
    }
    let w_norm = norm(w);
    if w_norm < 1e-300 {
        return Ok(0.0);
    }
    Ok((dot(w, theta_star).abs() / (ts_norm * w_norm)).min(1.0))
}

/// The `(d+1) × (d+1)` coupling matrix of the small-parameter phase:
/// zero except for a first-layer/second-layer cross block carrying θ*.
/// Its spectrum is `±‖θ*‖` on `(θ̂; ±1)/√2` and 0 on the complement.
pub fn phase2_matrix(theta_star: &[f64]) -> Vec<f64> {
    let d = theta_star.len();
    let n = d + 1;
    let mut m = vec![0.0; n * n];
    for (j, t) in theta_star.iter().enumerate() {
        m[j * n + d] = *t;
        m[d * n + j] = *t;
    }
    m
}

/// Closed-form action of `exp(s·M)` on stacked `(w; a)` vectors: a
/// hyperbolic rotation of `(θ̂ᵀw, a)` at rate `‖θ*‖`, identity on the
/// orthogonal complement. No dense exponential is ever formed.
#[derive(Debug, Clone)]
pub struct Phase2Map {
    theta_hat: Vec<f64>,
    lambda: f64,
}

impl Phase2Map {
    pub fn new(theta_star: &[f64]) -> Result<Self> {
        let lambda = norm(theta_star);
        if lambda == 0.0 {
            return Err(Error::InvalidArgument("phase-2 map needs a nonzero teacher".into()));
        }
        Ok(Self {
            theta_hat: theta_star.iter().map(|t| t / lambda).collect(),
            lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Growing-mode coefficient `α₊ = (θ̂ᵀw + a)/√2` of a stacked vector.
    pub fn growing_coefficient(&self, w: &[f64], a: f64) -> f64 {
        (dot(&self.theta_hat, w) + a) / std::f64::consts::SQRT_2
    }

    /// `exp(s·M) (w; a)`.
    pub fn apply(&self, w: &[f64], a: f64, s: f64) -> (Vec<f64>, f64) {
        let arg = s * self.lambda;
        let (ch, sh) = (arg.cosh(), arg.sinh());
        let w_par = dot(&self.theta_hat, w);
        let mut w_out = w.to_vec();
        let par_gain = (ch - 1.0) * w_par + sh * a;
        for (wo, th) in w_out.iter_mut().zip(&self.theta_hat) {
            *wo += par_gain * th;
        }
        (w_out, a * ch + w_par * sh)
    }
}

/// Applies `exp(s·M)` to every neuron's stacked `(wᵢ; aᵢ)`.
pub fn phase2_predict(
    p: &NetworkParams,
    theta_star: &[f64],
    s: f64,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let map = Phase2Map::new(theta_star)?;
    Ok((0..p.m())
        .map(|i| map.apply(p.neuron(i), p.a()[i], s))
        .collect())
}

/// True once every neuron satisfies `‖wᵢ‖ ≤ √η` and `|aᵢ| ≤ √η`.
pub fn detect_phase_boundary(p: &NetworkParams, eta: f64) -> bool {
    let root_eta = eta.sqrt();
    (0..p.m()).all(|i| norm(p.neuron(i)) <= root_eta)
        && p.a().iter().all(|a| a.abs() <= root_eta)
}

/// Training loss over the clean dataset and the exact population loss
/// `½‖θ − θ*‖²` (Gaussian inputs, clean labels). Without a dataset the
/// training loss falls back to the population value.
pub fn losses(p: &NetworkParams, tp: &TeacherProblem, ds: Option<&Dataset>) -> (f64, f64) {
    let theta = p.effective_predictor();
    let pop = 0.5
        * theta
            .iter()
            .zip(&tp.theta_star)
            .map(|(t, s)| (t - s) * (t - s))
            .sum::<f64>();
    let train = match ds {
        Some(ds) => {
            let n = ds.len() as f64;
            ds.inputs
                .iter()
                .zip(&ds.targets)
                .map(|(x, y)| {
                    let r = dot(&theta, x) - y;
                    0.5 * r * r
                })
                .sum::<f64>()
                / n
        }
        None => pop,
    };
    (train, pop)
}

/// One row of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub train_loss: f64,
    pub pop_loss: f64,
    pub mean_norm: f64,
    pub min_norm: f64,
    pub max_norm: f64,
    pub mean_align: f64,
    pub min_align: f64,
    pub frac_escaped: f64,
    pub theta_err: f64,
    pub a_abs_max: f64,
    /// Mean raw inner product `⟨wᵢ, θ*⟩`; written as an extra trailing
    /// column only when explicitly enabled.
    pub mean_dot: f64,
}

/// The fixed trace schema.
pub const TRACE_HEADER: &str = "step,train_loss,pop_loss,mean_norm,min_norm,max_norm,mean_align,min_align,frac_escaped,theta_err,a_abs_max";

/// Per-neuron dump schema.
pub const NEURON_HEADER: &str = "step,i,w_norm,align,a_i,cum_dw,escaped";

/// Assembles a [`StepRecord`] from the current parameters. Pure read.
pub fn observe(
    p: &NetworkParams,
    tp: &TeacherProblem,
    ds: Option<&Dataset>,
    step: u64,
) -> Result<StepRecord> {
    let m = p.m();
    let (train_loss, pop_loss) = losses(p, tp, ds);
    let theta = p.effective_predictor();
    let theta_err = theta
        .iter()
        .zip(&tp.theta_star)
        .map(|(t, s)| (t - s) * (t - s))
        .sum::<f64>()
        .sqrt();
    let escape = lazy_escape_status(p);
    let mut mean_norm = 0.0;
    let mut min_norm = f64::INFINITY;
    let mut max_norm: f64 = 0.0;
    let mut mean_align = 0.0;
    let mut min_align = f64::INFINITY;
    let mut mean_dot = 0.0;
    for i in 0..m {
        let w = p.neuron(i);
        let n = norm(w);
        mean_norm += n;
        min_norm = min_norm.min(n);
        max_norm = max_norm.max(n);
        let align = alignment_cosine(w, &tp.theta_star)?;
        mean_align += align;
        min_align = min_align.min(align);
        mean_dot += dot(w, &tp.theta_star);
    }
    let a_abs_max = p.a().iter().fold(0.0f64, |acc, a| acc.max(a.abs()));
    Ok(StepRecord {
        step,
        train_loss,
        pop_loss,
        mean_norm: mean_norm / m as f64,
        min_norm,
        max_norm,
        mean_align: mean_align / m as f64,
        min_align,
        frac_escaped: escape.frac_escaped,
        theta_err,
        a_abs_max,
        mean_dot: mean_dot / m as f64,
    })
}

/// Receives trace rows. Sink failures are surfaced, never dropped.
pub trait TraceSink {
    fn record(&mut self, rec: &StepRecord) -> Result<()>;
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

/// CSV sink with the bit-exact [`TRACE_HEADER`]; `with_mean_dot` appends
/// the optional inner-product column.
pub struct CsvSink<W: Write> {
    out: W,
    mean_dot: bool,
    wrote_header: bool,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W) -> Self {
        Self { out, mean_dot: false, wrote_header: false }
    }

    pub fn with_mean_dot(out: W) -> Self {
        Self { out, mean_dot: true, wrote_header: false }
    }
}

impl<W: Write> TraceSink for CsvSink<W> {
    fn record(&mut self, rec: &StepRecord) -> Result<()> {
        if !self.wrote_header {
            if self.mean_dot {
                writeln!(self.out, "{TRACE_HEADER},mean_dot")?;
            } else {
                writeln!(self.out, "{TRACE_HEADER}")?;
            }
            self.wrote_header = true;
        }
        write!(
            self.out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            rec.step,
            rec.train_loss,
            rec.pop_loss,
            rec.mean_norm,
            rec.min_norm,
            rec.max_norm,
            rec.mean_align,
            rec.min_align,
            rec.frac_escaped,
            rec.theta_err,
            rec.a_abs_max
        )?;
        if self.mean_dot {
            write!(self.out, ",{}", rec.mean_dot)?;
        }
        writeln!(self.out)?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// In-memory sink.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<StepRecord>,
}

impl TraceSink for MemorySink {
    fn record(&mut self, rec: &StepRecord) -> Result<()> {
        self.records.push(rec.clone());
        Ok(())
    }
}

/// One per-neuron dump row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuronRecord {
    pub step: u64,
    pub i: usize,
    pub w_norm: f64,
    pub align: f64,
    pub a_i: f64,
    /// `η² Σⱼ ΔWᵢ(j)` so far (0 when no tracker runs).
    pub cum_dw: f64,
    pub escaped: bool,
}

pub fn write_neuron_header<W: Write>(out: &mut W) -> Result<()> {
    writeln!(out, "{NEURON_HEADER}")?;
    Ok(())
}

pub fn write_neuron_record<W: Write>(out: &mut W, rec: &NeuronRecord) -> Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        rec.step, rec.i, rec.w_norm, rec.align, rec.a_i, rec.cum_dw, rec.escaped
    )?;
    Ok(())
}

/// Phase structure of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseReport {
    /// First recorded step at which each neuron's distance from its
    /// initialization exceeded `1/√m` (at trace resolution).
    pub escape_step_per_neuron: Vec<Option<u64>>,
    /// First recorded step at which all `‖wᵢ‖, |aᵢ| ≤ √η` (first segment
    /// learning rate).
    pub phase2_entry_step: Option<u64>,
    /// Escape-time formula evaluated at the first noisy segment, natural
    /// log (the base-10 value is in `RunSummary` notes where printed).
    pub t1_predicted: Option<f64>,
    pub alignment_at_end: f64,
    pub converged: bool,
    /// Fraction of neurons whose running `max_t |aᵢ(t)|` exceeded
    /// `m^{−1/4}` at any record point. Reported, never asserted.
    pub a_bound_violation_rate: f64,
}
