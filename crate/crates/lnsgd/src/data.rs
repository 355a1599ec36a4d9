//! Teacher problems, Gaussian input sampling, and the two noise models:
//! two-point ±σ regression noise and label flipping for classification
//! targets.
//!
//! Targets are always interpolable by construction: `y = θ*·x` exactly, so
//! the clean training loss of the teacher is zero and every observed drift
//! of the model away from small loss is attributable to the injected noise.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, scale};
use crate::rng::{domain, stream, Stream};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::sync::OnceLock;

/// Ground-truth linear problem: labels are `y = θ*·x` with `x ~ N(0, I)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherProblem {
    pub theta_star: Vec<f64>,
    /// Optional cap on `‖x‖`; when set, inputs are rejection-resampled
    /// until they satisfy it. Off by default: Gaussians already
    /// concentrate at `√d`.
    pub input_clip: Option<f64>,
    pub seed: u64,
}

/// Direction of the teacher vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TeacherDirection {
    /// The sparse axis direction `e₁` (the default).
    FirstAxis,
    /// A uniformly random unit vector drawn from the given seed.
    RandomUnit(u64),
}

/// How a clean target is corrupted before a gradient step sees it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    None,
    /// `y ± σ`, each sign with probability ½. Exactly two-point support.
    Rademacher { sigma: f64 },
    /// With probability `tau`, replace a class label in `1..=c` by a
    /// uniform draw from the other `c − 1` classes.
    LabelFlip { tau: f64, c: u32 },
}

/// A fixed training set. Immutable after construction.
#[derive(Debug)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    moments: OnceLock<DatasetMoments>,
}

/// Second-moment summaries of a dataset. For the linear model every
/// full-batch quantity is a function of these, so steppers precompute them
/// once and pay `O(d²)` per step instead of `O(nd)`.
#[derive(Debug, Clone)]
pub struct DatasetMoments {
    /// `(1/n) Σ xxᵀ`, `d × d` row-major.
    pub second: Vec<f64>,
    /// `(1/n) Σ y·x`.
    pub cross: Vec<f64>,
    /// `(1/n) Σ y²`.
    pub target_sq_mean: f64,
    pub d: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs vs {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(first) = inputs.first() {
            let d = first.len();
            if inputs.iter().any(|x| x.len() != d) {
                return Err(Error::DimensionMismatch(
                    "inputs have mixed dimensions".into(),
                ));
            }
        }
        Ok(Self { inputs, targets, moments: OnceLock::new() })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.len())
    }

    pub fn moments(&self) -> &DatasetMoments {
        self.moments.get_or_init(|| {
            let n = self.len() as f64;
            let d = self.dim();
            let mut second = vec![0.0; d * d];
            let mut cross = vec![0.0; d];
            let mut ysq = 0.0;
            for (x, y) in self.inputs.iter().zip(&self.targets) {
                for j in 0..d {
                    for k in 0..d {
                        second[j * d + k] += x[j] * x[k];
                    }
                    cross[j] += y * x[j];
                }
                ysq += y * y;
            }
            scale(&mut second, 1.0 / n);
            scale(&mut cross, 1.0 / n);
            DatasetMoments { second, cross, target_sq_mean: ysq / n, d }
        })
    }

    /// Full-batch gradient of the empirical loss with respect to the
    /// effective predictor: `Ĉθ − b̂ = (1/n) Σ (θ·xⱼ − yⱼ) xⱼ`.
    pub fn batch_residual(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.moments();
        let d = m.d;
        let mut g = vec![0.0; d];
        for j in 0..d {
            g[j] = dot(&m.second[j * d..(j + 1) * d], theta) - m.cross[j];
        }
        g
    }

    /// Writes the set as CSV with header `x_1,...,x_d,y`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let d = self.dim();
        let header: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
        writeln!(out, "{},y", header.join(","))?;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{},{}", row.join(","), y)?;
        }
        Ok(())
    }

    /// Reads a CSV produced by [`Dataset::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Snapshot("empty dataset csv".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.last() != Some(&"y") || cols.len() < 2 {
            return Err(Error::Snapshot(format!("bad dataset header: {header}")));
        }
        let d = cols.len() - 1;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(Error::Snapshot(format!("bad dataset row: {line}")));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Snapshot(format!("bad float {s:?}: {e}")))
            };
            let mut x = Vec::with_capacity(d);
            for f in &fields[..d] {
                x.push(parse(f)?);
            }
            inputs.push(x);
            targets.push(parse(fields[d])?);
        }
        Dataset::new(inputs, targets)
    }
}

/// Builds a teacher with `θ* = norm · (unit direction)`.
pub fn make_teacher(d: usize, norm_: f64, direction: TeacherDirection) -> Result<TeacherProblem> {
    if d < 1 {
        return Err(Error::InvalidArgument("teacher dimension must be ≥ 1".into()));
    }
    if norm_ <= 0.0 || !norm_.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "teacher norm must be positive and finite, got {norm_}"
        )));
    }
    let mut theta = vec![0.0; d];
    match direction {
        TeacherDirection::FirstAxis => theta[0] = norm_,
        TeacherDirection::RandomUnit(seed) => {
            let mut rng = stream(seed, domain::TEACHER);
            loop {
                for v in theta.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let n = norm(&theta);
                if n > 1e-12 {
                    scale(&mut theta, norm_ / n);
                    break;
                }
            }
        }
    }
    Ok(TeacherProblem { theta_star: theta, input_clip: None, seed: 0 })
}

impl TeacherProblem {
    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    /// Clean label for an input.
    pub fn label(&self, x: &[f64]) -> f64 {
        dot(&self.theta_star, x)
    }
}

/// Draws one input `x ~ N(0, I_d)`; with `input_clip` set, resamples until
/// `‖x‖ ≤ C`. Rejection rather than truncation keeps the conditional shape.
pub fn sample_input(tp: &TeacherProblem, rng: &mut Stream) -> Result<Vec<f64>> {
    let d = tp.dim();
    if let Some(clip) = tp.input_clip {
        if clip < 0.1 * (d as f64).sqrt() {
            return Err(Error::InvalidArgument(format!(
                "input_clip {clip} below 0.1·√d; rejection sampling would stall"
            )));
        }
    }
    let mut x = vec![0.0; d];
    loop {
        for v in x.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        match tp.input_clip {
            Some(clip) if norm(&x) > clip => continue,
            _ => return Ok(x),
        }
    }
}

/// Draws `n` i.i.d. inputs and labels them with the teacher.
pub fn make_dataset(tp: &TeacherProblem, n: usize, rng: &mut Stream) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::InvalidArgument("dataset size must be ≥ 1".into()));
    }
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sample_input(tp, rng)?;
        targets.push(tp.label(&x));
        inputs.push(x);
    }
    Dataset::new(inputs, targets)
}

/// Applies a regression noise model to a clean target. One uniform draw is
/// consumed for `Rademacher` (sign is `+σ` when `u < ½`); `None` consumes
/// nothing.
pub fn noisy_target(y: f64, nm: &NoiseModel, rng: &mut Stream) -> Result<f64> {
    match nm {
        NoiseModel::None => Ok(y),
        NoiseModel::Rademacher { sigma } => {
            if *sigma <= 0.0 || sigma.is_nan() {
                return Err(Error::InvalidArgument(format!(
                    "Rademacher sigma must be positive, got {sigma}"
                )));
            }
            Ok(y + rademacher_eps(*sigma, rng))
        }
        NoiseModel::LabelFlip { .. } => Err(Error::InvalidArgument(
            "label flipping applies to class labels, not regression targets".into(),
        )),
    }
}

/// The ±σ draw itself; `+σ` when the uniform draw is below ½.
pub fn rademacher_eps(sigma: f64, rng: &mut Stream) -> f64 {
    if rng.random::<f64>() < 0.5 {
        sigma
    } else {
        -sigma
    }
}

/// Class-label flipping: with probability `tau`, return a uniform label
/// from `1..=c` excluding `y`; otherwise return `y` unchanged. Draw order:
/// one uniform for the flip decision, then (only if it fires) one uniform
/// for the replacement.
pub fn flip_label(y: u32, tau: f64, c: u32, rng: &mut Stream) -> Result<u32> {
    if c < 2 {
        return Err(Error::InvalidArgument(format!(
            "label flipping needs at least 2 classes, got {c}"
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau must be in [0,1], got {tau}")));
    }
    if y < 1 || y > c {
        return Err(Error::InvalidArgument(format!("label {y} outside 1..={c}")));
    }
    if rng.random::<f64>() < tau {
        let j = rng.random_range(1..c); // uniform over 1..=c-1
        Ok(if j >= y { j + 1 } else { j })
    } else {
        Ok(y)
    }
}
