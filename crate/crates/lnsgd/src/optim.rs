//! The steppers.
//!
//! Five update rules share the coupled two-layer structure, differing only
//! in where the gradient comes from:
//!
//! * label-noise SGD — one sample per step, target corrupted by ±σ;
//! * full-batch GD — empirical (dataset average) or population (exact
//!   identity input covariance) gradient;
//! * SAM — a normalized adversarial perturbation of radius ρ before the
//!   gradient step;
//! * the oscillation chain — the second layer is replaced by a three-state
//!   Markov chain on `{−η^¼, 0, +η^¼}` while the first layer follows the
//!   full-batch gradient;
//! * linearized GD — full-batch GD on the first-order Taylor surrogate with
//!   frozen `(W0, a0)` factors.
//!
//! All rules update both layers from the pre-step values simultaneously.
//! Per-step draw order is part of the contract: the sample (or dataset
//! index) is drawn first, then the noise sign — and the noise draw is only
//! consumed when `sigma > 0`, so a σ = 0 run and a SAM run with ρ = 0,
//! σ = 0 consume identical streams.

use crate::data::{rademacher_eps, sample_input, Dataset, TeacherProblem};
use crate::diagnostics::TelescopeTracker;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, norm_sq};
use crate::model::NetworkParams;
use crate::rng::Stream;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Threshold below which SAM skips the perturbation and falls back to the
/// plain gradient.
pub const SAM_ZERO_GRAD_EPS: f64 = 1e-12;

/// Abort when the effective predictor norm crosses this.
pub const DIVERGENCE_NORM_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// A fresh Gaussian input every step (matches the independence
    /// assumptions of the oscillation analysis).
    Fresh,
    /// A uniformly random index into a fixed dataset.
    FixedDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Average over the fixed dataset.
    Empirical,
    /// Exact input covariance `E[xxᵀ] = I`: the batch residual is
    /// `θ − θ*`.
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    LabelNoiseSgd { sigma: f64, sampling: Sampling },
    Gd { gradient: GradientMode },
    Sam { rho: f64, sigma: f64 },
    MarkovOscillation { gradient: GradientMode },
    LinearizedGd { gradient: GradientMode },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub eta: f64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive and finite, got {}",
                self.eta
            )));
        }
        match self.kind {
            OptimizerKind::LabelNoiseSgd { sigma, .. } if sigma < 0.0 || sigma.is_nan() => Err(
                Error::InvalidArgument(format!("sigma must be nonnegative, got {sigma}")),
            ),
            OptimizerKind::Sam { rho, sigma } if rho < 0.0 || rho.is_nan() || sigma < 0.0 || sigma.is_nan() => {
                Err(Error::InvalidArgument(format!(
                    "SAM needs rho ≥ 0 and sigma ≥ 0, got rho={rho}, sigma={sigma}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn needs_dataset(&self) -> bool {
        match self.kind {
            OptimizerKind::LabelNoiseSgd { sampling, .. } => sampling == Sampling::FixedDataset,
            OptimizerKind::Gd { gradient }
            | OptimizerKind::MarkovOscillation { gradient }
            | OptimizerKind::LinearizedGd { gradient } => gradient == GradientMode::Empirical,
            OptimizerKind::Sam { .. } => false,
        }
    }
}

/// A contiguous run of steps under one optimizer configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSegment {
    pub config: OptimizerConfig,
    pub steps: u64,
    pub record_every: u64,
}

impl ScheduleSegment {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be positive".into()));
        }
        Ok(())
    }
}

/// What a single step reports back to the caller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Single-sample residual `f − y − ε`, or the batch residual norm for
    /// full-batch rules.
    pub residual: f64,
    /// The noise draw applied this step (0 when none).
    pub epsilon: f64,
}

/// Second-layer state of the oscillation chain. Levels are stored as
/// indices in `{−1, 0, +1}`; the written value `aᵢ = level · η^¼` is exact,
/// so membership of the three-point lattice never depends on float
/// comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovState {
    levels: Vec<i8>,
    /// δᵢ from the most recent step.
    pub prev_delta: Vec<f64>,
    lattice: f64,
}

impl MarkovState {
    pub fn lattice(&self) -> f64 {
        self.lattice
    }

    pub fn levels(&self) -> &[i8] {
        &self.levels
    }
}

/// Stationary initialization of the chain: each neuron independently takes
/// `−η^¼` with probability ¼, `0` with probability ½, `+η^¼` with
/// probability ¼. One uniform draw per neuron, mapped in that order.
pub fn init_markov_stationary(m: usize, eta: f64, rng: &mut Stream) -> Result<(Vec<f64>, MarkovState)> {
    if m < 1 {
        return Err(Error::InvalidArgument("m must be ≥ 1".into()));
    }
    if eta <= 0.0 || eta.is_nan() {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let lattice = eta.powf(0.25);
    let mut levels = vec![0i8; m];
    let mut a = vec![0.0; m];
    for i in 0..m {
        let u: f64 = rng.random();
        let level = if u < 0.25 {
            -1
        } else if u < 0.75 {
            0
        } else {
            1
        };
        levels[i] = level;
        a[i] = level as f64 * lattice;
    }
    let prev_delta = vec![0.0; m];
    Ok((a, MarkovState { levels, prev_delta, lattice }))
}

/// The coupled single-sample update at explicit `(x, target)`:
/// `r = f − target`, then `wᵢ ← wᵢ − η·aᵢ·r·x` and `aᵢ ← aᵢ − η·r·(xᵀwᵢ)`,
/// both from pre-step values. This is the shared core of label-noise SGD
/// and of SAM's fallback path.
pub fn coupled_sgd_update(
    p: &mut NetworkParams,
    x: &[f64],
    target: f64,
    eta: f64,
    telescope: Option<&mut TelescopeTracker>,
) -> Result<StepInfo> {
    let m = p.m();
    let z: Vec<f64> = (0..m).map(|i| dot(p.neuron(i), x)).collect();
    let f: f64 = z.iter().zip(p.a()).map(|(zi, ai)| ai * zi).sum();
    let r = f - target;
    if !r.is_finite() {
        return Err(Error::NonFinite("single-sample residual".into()));
    }
    if let Some(tracker) = telescope {
        tracker.accumulate(r, norm_sq(x), &z, p.a());
    }
    for i in 0..m {
        let ai = p.a[i];
        axpy(p.neuron_mut(i), -eta * ai * r, x);
    }
    for i in 0..m {
        p.a[i] -= eta * r * z[i];
    }
    Ok(StepInfo { residual: r, epsilon: 0.0 })
}

fn draw_sample<'a>(
    tp: &TeacherProblem,
    ds: Option<&'a Dataset>,
    sampling: Sampling,
    rng: &mut Stream,
    fresh_buf: &'a mut Vec<f64>,
) -> Result<(&'a [f64], f64)> {
    match sampling {
        Sampling::Fresh => {
            *fresh_buf = sample_input(tp, rng)?;
            let y = tp.label(fresh_buf);
            Ok((fresh_buf.as_slice(), y))
        }
        Sampling::FixedDataset => {
            let ds = ds.ok_or_else(|| {
                Error::InvalidArgument("fixed-dataset sampling needs a dataset".into())
            })?;
            let idx = rng.random_range(0..ds.len());
            Ok((&ds.inputs[idx], ds.targets[idx]))
        }
    }
}

/// One step of label-noise SGD. Draw order: sample first, then the noise
/// sign (consumed only when `sigma > 0`).
pub fn label_noise_sgd_step(
    p: &mut NetworkParams,
    tp: &TeacherProblem,
    ds: Option<&Dataset>,
    sigma: f64,
    sampling: Sampling,
    eta: f64,
    rng: &mut Stream,
    telescope: Option<&mut TelescopeTracker>,
) -> Result<StepInfo> {
    let mut buf = Vec::new();
    let (x, y) = draw_sample(tp, ds, sampling, rng, &mut buf)?;
    let eps = if sigma > 0.0 { rademacher_eps(sigma, rng) } else { 0.0 };
    let info = coupled_sgd_update(p, x, y + eps, eta, telescope)?;
    Ok(StepInfo { epsilon: eps, ..info })
}

/// The full-batch residual vector for the given mode: `θ − θ*` for the
/// population gradient, `(1/n) Σ (θ·xⱼ − yⱼ)xⱼ` for the empirical one.
pub fn batch_residual_vec(
    p: &NetworkParams,
    tp: &TeacherProblem,
    ds: Option<&Dataset>,
    gradient: GradientMode,
) -> Result<Vec<f64>> {
    let theta = p.effective_predictor();
    match gradient {
        GradientMode::Population => {
            Ok(theta.iter().zip(&tp.theta_star).map(|(t, s)| t - s).collect())
        }
        GradientMode::Empirical => {
            let ds = ds.ok_or_else(|| {
                Error::InvalidArgument("empirical gradient needs a dataset".into())
            })?;
            Ok(ds.batch_residual(&theta))
        }
    }
}

/// Applies the coupled full-batch update for a given residual vector ρ⃗:
/// `wᵢ ← wᵢ − η·aᵢ·ρ⃗` and `aᵢ ← aᵢ − η·(wᵢᵀρ⃗)`, both from pre-step values.
pub fn full_batch_update(p: &mut NetworkParams, rho: &[f64], eta: f64) -> Result<StepInfo> {
    let m = p.m();
    let z: Vec<f64> = (0..m).map(|i| dot(p.neuron(i), rho)).collect();
    for i in 0..m {
        let ai = p.a[i];
        axpy(p.neuron_mut(i), -eta * ai, rho);
    }
    for i in 0..m {
        p.a[i] -= eta * z[i];
    }
    let res = norm(rho);
    if !res.is_finite() {
        return Err(Error::NonFinite("batch residual".into()));
    }
    Ok(StepInfo { residual: res, epsilon: 0.0 })
}

/// One step of full-batch gradient descent.
pub fn gd_full_batch_step(
    p: &mut NetworkParams,
    tp: &TeacherProblem,
    ds: Option<&Dataset>,
    gradient: GradientMode,
    eta: f64,
) -> Result<StepInfo> {
    let rho = batch_residual_vec(p, tp, ds, gradient)?;
    full_batch_update(p, &rho, eta)
}

/// SAM at explicit `(x, target)`: normalize the per-sample gradient over
/// the flattened `(W, a)` vector, perturb by radius `rho`, take the
/// gradient there, and apply it to the unperturbed parameters. A gradient
/// norm below [`SAM_ZERO_GRAD_EPS`] skips the perturbation.
pub fn sam_update_with(
    p: &mut NetworkParams,
    x: &[f64],
    target: f64,
    rho: f64,
    eta: f64,
) -> Result<StepInfo> {
    let m = p.m();
    let z: Vec<f64> = (0..m).map(|i| dot(p.neuron(i), x)).collect();
    let f: f64 = z.iter().zip(p.a()).map(|(zi, ai)| ai * zi).sum();
    let r = f - target;
    if !r.is_finite() {
        return Err(Error::NonFinite("SAM residual".into()));
    }
    // ‖∇ℓ‖² over (W, a) jointly = r²(‖a‖²‖x‖² + ‖Wx‖²).
    let x_sq = norm_sq(x);
    let g_norm = (r * r * (norm_sq(p.a()) * x_sq + norm_sq(&z))).sqrt();
    if g_norm <= SAM_ZERO_GRAD_EPS || rho == 0.0 {
        return coupled_sgd_update(p, x, target, eta, None);
    }
    let t = rho / g_norm;
    // Perturbed second layer and perturbed first-layer projections; the
    // perturbed W itself is never materialized since only Wx enters.
    let a_pert: Vec<f64> = p.a().iter().zip(&z).map(|(ai, zi)| ai + t * r * zi).collect();
    let z_pert: Vec<f64> = z.iter().zip(p.a()).map(|(zi, ai)| zi + t * r * ai * x_sq).collect();
    let f_pert: f64 = a_pert.iter().zip(&z_pert).map(|(ai, zi)| ai * zi).sum();
    let r_pert = f_pert - target;
    if !r_pert.is_finite() {
        return Err(Error::NonFinite("SAM perturbed residual".into()));
    }
    for i in 0..m {
        let coeff = -eta * a_pert[i] * r_pert;
        axpy(p.neuron_mut(i), coeff, x);
    }
    for i in 0..m {
        p.a[i] -= eta * r_pert * z_pert[i];
    }
    Ok(StepInfo { residual: r, epsilon: 0.0 })
}

/// One SAM step with the same draw order as label-noise SGD.
pub fn sam_step(
    p: &mut NetworkParams,
    tp: &TeacherProblem,
    ds: Option<&Dataset>,
    rho: f64,
    sigma: f64,
    eta: f64,
    rng: &mut Stream,
) -> Result<StepInfo> {
    let sampling = if ds.is_some() { Sampling::FixedDataset } else { Sampling::Fresh };
    let mut buf = Vec::new();
    let (x, y) = draw_sample(tp, ds, sampling, rng, &mut buf)?;
    let eps = if sigma > 0.0 { rademacher_eps(sigma, rng) } else { 0.0 };
    let info = sam_update_with(p, x, y + eps, rho, eta)?;
    Ok(StepInfo { epsilon: eps, ..info })
}

/// One step of the oscillation chain: the first layer takes the full-batch
/// gradient step with the current lattice-valued `a`, then each `aᵢ` moves
/// by `δᵢ`: deterministically back to 0 from `±η^¼`, and from 0 to `±η^¼`
/// with probability ½ each (one uniform draw per zero-level neuron, in
/// index order; `+η^¼` when the draw is below ½).
pub fn markov_oscillation_step(
    p: &mut NetworkParams,
    tp: &TeacherProblem,
    ds: Option<&Dataset>,
    gradient: GradientMode,
    ms: &mut MarkovState,
    eta: f64,
    rng: &mut Stream,
) -> Result<StepInfo> {
    let m = p.m();
    if ms.levels.len() != m {
        return Err(Error::DimensionMismatch("markov state width".into()));
    }
    for i in 0..m {
        if p.a[i] != ms.levels[i] as f64 * ms.lattice {
            return Err(Error::InvalidArgument(format!(
                "a[{i}] left the three-point lattice; oscillation state corrupted"
            )));
        }
    }
    let rho = batch_residual_vec(p, tp, ds, gradient)?;
    let res = norm(&rho);
    if !res.is_finite() {
        return Err(Error::NonFinite("batch residual".into()));
    }
    for i in 0..m {
        let ai = p.a[i];
        if ai != 0.0 {
            axpy(p.neuron_mut(i), -eta * ai, &rho);
        }
    }
    for i in 0..m {
        let (delta_levels, next) = match ms.levels[i] {
            1 => (-1i8, 0i8),
            -1 => (1, 0),
            0 => {
                if rng.random::<f64>() < 0.5 {
                    (1, 1)
                } else {
                    (-1, -1)
                }
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "markov level {other} out of range"
                )))
            }
        };
        ms.prev_delta[i] = delta_levels as f64 * ms.lattice;
        ms.levels[i] = next;
        p.a[i] = next as f64 * ms.lattice;
    }
    Ok(StepInfo { residual: res, epsilon: 0.0 })
}

/// One full-batch GD step on the linearized surrogate: gradients use the
/// frozen `(W0, a0)` factors, so `wᵢ ← wᵢ − η·a0ᵢ·ρ⃗` and
/// `aᵢ ← aᵢ − η·(w0ᵢᵀρ⃗)` with ρ⃗ the batch residual of `θ_lin`.
pub fn linearized_gd_step(
    p: &mut NetworkParams,
    tp: &TeacherProblem,
    ds: Option<&Dataset>,
    gradient: GradientMode,
    eta: f64,
) -> Result<StepInfo> {
    let theta_lin = p.linearized_predictor();
    let rho: Vec<f64> = match gradient {
        GradientMode::Population => theta_lin
            .iter()
            .zip(&tp.theta_star)
            .map(|(t, s)| t - s)
            .collect(),
        GradientMode::Empirical => {
            let ds = ds.ok_or_else(|| {
                Error::InvalidArgument("empirical gradient needs a dataset".into())
            })?;
            ds.batch_residual(&theta_lin)
        }
    };
    let m = p.m();
    let z0: Vec<f64> = (0..m).map(|i| dot(p.neuron0(i), &rho)).collect();
    let a0: Vec<f64> = p.a0().to_vec();
    for i in 0..m {
        axpy(p.neuron_mut(i), -eta * a0[i], &rho);
    }
    for i in 0..m {
        p.a[i] -= eta * z0[i];
    }
    let res = norm(&rho);
    if !res.is_finite() {
        return Err(Error::NonFinite("linearized batch residual".into()));
    }
    Ok(StepInfo { residual: res, epsilon: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_dataset, make_teacher, sample_input, TeacherDirection};
    use crate::model::{init_ntk, InitConfig, NetworkParams};
    use crate::rng::{domain, stream};

    fn scalar_net(w: f64, a: f64) -> NetworkParams {
        NetworkParams::from_parts(1, 1, vec![w], vec![a]).unwrap()
    }

    #[test]
    fn coupled_update_hand_example() {
        // W = [[1]], a = [1], x = [1], y = 2, ε = 0, η = 0.1:
        // r = −1, W' = [[1.1]], a' = [1.1].
        let mut p = scalar_net(1.0, 1.0);
        let info = coupled_sgd_update(&mut p, &[1.0], 2.0, 0.1, None).unwrap();
        assert_eq!(info.residual, -1.0);
        assert_eq!(p.w_flat()[0], 1.1);
        assert_eq!(p.a()[0], 1.1);
    }

    #[test]
    fn zero_residual_is_stationary() {
        let mut p = scalar_net(1.5, -0.5);
        let f = p.forward(&[2.0]).unwrap();
        let before = p.clone();
        coupled_sgd_update(&mut p, &[2.0], f, 0.1, None).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn noiseless_sgd_at_teacher_is_stationary() {
        // θ(0) = θ* with σ = 0: every residual is exactly zero.
        let tp = make_teacher(1, 0.8, TeacherDirection::FirstAxis).unwrap();
        let mut p = scalar_net(0.8, 1.0);
        let before = p.clone();
        let mut rng = stream(21, domain::STEPS);
        for _ in 0..200 {
            label_noise_sgd_step(&mut p, &tp, None, 0.0, Sampling::Fresh, 0.1, &mut rng, None)
                .unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn coupled_update_consistency_identity() {
        // η·r·(xᵀwᵢ(t)) = aᵢ(t) − aᵢ(t+1) per step.
        let tp = make_teacher(4, 0.3, TeacherDirection::FirstAxis).unwrap();
        let mut p = init_ntk(InitConfig { m: 12, d: 4, seed: 2 }).unwrap();
        let mut rng = stream(22, domain::STEPS);
        let eta = 0.02;
        for _ in 0..200 {
            let before = p.clone();
            let x = sample_input(&tp, &mut rng).unwrap();
            let eps = rademacher_eps(1.0, &mut rng);
            let info =
                coupled_sgd_update(&mut p, &x, tp.label(&x) + eps, eta, None).unwrap();
            for i in 0..p.m() {
                let lhs = eta * info.residual * dot(before.neuron(i), &x);
                let rhs = before.a()[i] - p.a()[i];
                assert!(
                    (lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()),
                    "coupled-update identity violated: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn gd_population_hand_example() {
        // m = d = 1, W = [[2]], a = [1], θ* = [1], η = 0.1:
        // θ = 2, ρ⃗ = 1, W' = 1.9, a' = 0.8.
        let tp = make_teacher(1, 1.0, TeacherDirection::FirstAxis).unwrap();
        let mut p = scalar_net(2.0, 1.0);
        gd_full_batch_step(&mut p, &tp, None, GradientMode::Population, 0.1).unwrap();
        assert_eq!(p.w_flat()[0], 1.9);
        assert_eq!(p.a()[0], 0.8);
    }

    #[test]
    fn gd_population_zero_at_teacher() {
        let tp = make_teacher(1, 1.0, TeacherDirection::FirstAxis).unwrap();
        let mut p = scalar_net(1.0, 1.0);
        let before = p.clone();
        gd_full_batch_step(&mut p, &tp, None, GradientMode::Population, 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn empirical_tracks_population_at_large_n() {
        let tp = make_teacher(8, 0.5, TeacherDirection::RandomUnit(4)).unwrap();
        let mut rng = stream(23, domain::DATA);
        let n = 100_000;
        let ds = make_dataset(&tp, n, &mut rng).unwrap();
        let p0 = init_ntk(InitConfig { m: 32, d: 8, seed: 5 }).unwrap();
        let eta = 0.01;

        let mut p_emp = p0.clone();
        gd_full_batch_step(&mut p_emp, &tp, Some(&ds), GradientMode::Empirical, eta).unwrap();
        let mut p_pop = p0.clone();
        gd_full_batch_step(&mut p_pop, &tp, None, GradientMode::Population, eta).unwrap();

        let mut diff_sq = 0.0;
        for (u, v) in p_emp.w_flat().iter().zip(p_pop.w_flat()) {
            diff_sq += (u - v) * (u - v);
        }
        for (u, v) in p_emp.a().iter().zip(p_pop.a()) {
            diff_sq += (u - v) * (u - v);
        }
        let bound = 10.0 * eta / (n as f64).sqrt();
        assert!(
            diff_sq.sqrt() <= bound,
            "one-step empirical/population gap {} above {bound}",
            diff_sq.sqrt()
        );
    }

    #[test]
    fn sam_hand_example() {
        // m = d = 1, W = 1, a = 1, x = 1, y = 2, η = 0.1, ρ = 0.1.
        let mut p = scalar_net(1.0, 1.0);
        sam_update_with(&mut p, &[1.0], 2.0, 0.1, 0.1).unwrap();
        // Perturbed point (1 − 0.1/√2, 1 − 0.1/√2); perturbed residual
        // (1 − 0.1/√2)² − 2; outer gradient applied at the original params.
        let q = 1.0 - 0.1 / 2.0_f64.sqrt();
        let r_pert = q * q - 2.0;
        let expect = 1.0 - 0.1 * q * r_pert;
        assert!((p.w_flat()[0] - expect).abs() < 1e-12);
        assert!((p.a()[0] - expect).abs() < 1e-12);
        assert!((p.w_flat()[0] - 1.10561).abs() < 1e-4);
    }

    #[test]
    fn sam_zero_radius_equals_sgd() {
        let tp = make_teacher(6, 0.4, TeacherDirection::RandomUnit(9)).unwrap();
        let p0 = init_ntk(InitConfig { m: 10, d: 6, seed: 8 }).unwrap();

        // Stream-level: identical draws, identical parameters, σ > 0.
        let mut p_sam = p0.clone();
        let mut p_sgd = p0.clone();
        let mut rng_sam = stream(31, domain::STEPS);
        let mut rng_sgd = stream(31, domain::STEPS);
        for _ in 0..50 {
            sam_step(&mut p_sam, &tp, None, 0.0, 1.0, 0.01, &mut rng_sam).unwrap();
            label_noise_sgd_step(
                &mut p_sgd, &tp, None, 1.0, Sampling::Fresh, 0.01, &mut rng_sgd, None,
            )
            .unwrap();
        }
        assert_eq!(p_sam, p_sgd);

        // And with σ = 0 (no noise draw consumed on either side).
        let mut p_sam = p0.clone();
        let mut p_sgd = p0;
        let mut rng_sam = stream(32, domain::STEPS);
        let mut rng_sgd = stream(32, domain::STEPS);
        for _ in 0..50 {
            sam_step(&mut p_sam, &tp, None, 0.0, 0.0, 0.01, &mut rng_sam).unwrap();
            label_noise_sgd_step(
                &mut p_sgd, &tp, None, 0.0, Sampling::Fresh, 0.01, &mut rng_sgd, None,
            )
            .unwrap();
        }
        assert_eq!(p_sam, p_sgd);
    }

    #[test]
    fn sam_zero_gradient_fallback() {
        // At an interpolating point with ε = 0 the gradient vanishes and
        // the step is a no-op.
        let mut p = scalar_net(0.8, 1.0);
        let before = p.clone();
        sam_update_with(&mut p, &[1.0], 0.8, 0.1, 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn markov_stationary_init_statistics() {
        let m = 100_000;
        let eta = 0.01;
        let mut rng = stream(41, domain::STEPS);
        let (a, ms) = init_markov_stationary(m, eta, &mut rng).unwrap();
        let lattice = eta.powf(0.25);
        let mut counts = [0usize; 3];
        for (ai, level) in a.iter().zip(ms.levels()) {
            assert_eq!(*ai, *level as f64 * lattice, "exact three-point support");
            counts[(*level + 1) as usize] += 1;
        }
        let freq: Vec<f64> = counts.iter().map(|c| *c as f64 / m as f64).collect();
        assert!((freq[0] - 0.25).abs() < 0.01, "p(−) = {}", freq[0]);
        assert!((freq[1] - 0.50).abs() < 0.01, "p(0) = {}", freq[1]);
        assert!((freq[2] - 0.25).abs() < 0.01, "p(+) = {}", freq[2]);
        // E[aᵢ²] = η^½/2 under the stationary law; Var(a²) = 3L⁴/16... use
        // the exact two-point variance: a² is L² w.p. ½, 0 w.p. ½.
        let mean_sq: f64 = a.iter().map(|v| v * v).sum::<f64>() / m as f64;
        let l2 = lattice * lattice;
        let se = (l2 * l2 * 0.25 / m as f64).sqrt();
        assert!(
            (mean_sq - l2 / 2.0).abs() < 3.0 * se,
            "E[a²] = {mean_sq} vs {}",
            l2 / 2.0
        );
    }

    #[test]
    fn markov_transitions_and_orthogonality() {
        let tp = make_teacher(3, 0.2, TeacherDirection::FirstAxis).unwrap();
        let eta = 0.01;
        let mut rng = stream(42, domain::STEPS);
        let mut p = init_ntk(InitConfig { m: 50, d: 3, seed: 6 }).unwrap();
        let (a, mut ms) = init_markov_stationary(50, eta, &mut rng).unwrap();
        p.a.copy_from_slice(&a);
        let lattice = ms.lattice();
        for _ in 0..500 {
            let a_before = p.a().to_vec();
            markov_oscillation_step(
                &mut p, &tp, None, GradientMode::Population, &mut ms, eta, &mut rng,
            )
            .unwrap();
            for i in 0..50 {
                // Nonzero levels return to zero deterministically with the
                // opposite delta; consecutive values are never both nonzero.
                if a_before[i] == lattice {
                    assert_eq!(p.a()[i], 0.0);
                    assert_eq!(ms.prev_delta[i], -lattice);
                } else if a_before[i] == -lattice {
                    assert_eq!(p.a()[i], 0.0);
                    assert_eq!(ms.prev_delta[i], lattice);
                }
                assert_eq!(a_before[i] * p.a()[i], 0.0, "a(t+1)·a(t) must vanish");
                assert!(
                    p.a()[i] == 0.0 || p.a()[i] == lattice || p.a()[i] == -lattice,
                    "lattice membership"
                );
            }
        }
    }

    #[test]
    fn markov_zero_level_branches_half_half() {
        let eta = 0.04;
        let tp = make_teacher(2, 0.2, TeacherDirection::FirstAxis).unwrap();
        let mut rng = stream(43, domain::STEPS);
        let m = 2000;
        let mut p = init_ntk(InitConfig { m, d: 2, seed: 7 }).unwrap();
        let (a, mut ms) = init_markov_stationary(m, eta, &mut rng).unwrap();
        p.a.copy_from_slice(&a);
        let mut ups = 0usize;
        let mut zeros = 0usize;
        for _ in 0..100 {
            let before = p.a().to_vec();
            markov_oscillation_step(
                &mut p, &tp, None, GradientMode::Population, &mut ms, eta, &mut rng,
            )
            .unwrap();
            for i in 0..m {
                if before[i] == 0.0 {
                    zeros += 1;
                    if p.a()[i] > 0.0 {
                        ups += 1;
                    }
                }
            }
        }
        let frac = ups as f64 / zeros as f64;
        assert!((frac - 0.5).abs() < 0.01, "up-branch frequency {frac}");
    }

    #[test]
    fn markov_rejects_corrupted_state() {
        let tp = make_teacher(2, 0.2, TeacherDirection::FirstAxis).unwrap();
        let mut rng = stream(44, domain::STEPS);
        let mut p = init_ntk(InitConfig { m: 4, d: 2, seed: 7 }).unwrap();
        let (a, mut ms) = init_markov_stationary(4, 0.01, &mut rng).unwrap();
        p.a.copy_from_slice(&a);
        p.a[2] += 1e-3;
        let err = markov_oscillation_step(
            &mut p, &tp, None, GradientMode::Population, &mut ms, 0.01, &mut rng,
        );
        assert!(err.is_err());
    }

    #[test]
    fn theta_recursion_is_exact() {
        // θ(t+1) = θ(t) + δ(t)ᵀW(t) under the oscillation chain.
        let tp = make_teacher(5, 0.3, TeacherDirection::RandomUnit(2)).unwrap();
        let mut rng = stream(45, domain::STEPS);
        for gradient in [GradientMode::Population, GradientMode::Empirical] {
            let ds = match gradient {
                GradientMode::Empirical => {
                    Some(make_dataset(&tp, 500, &mut rng).unwrap())
                }
                GradientMode::Population => None,
            };
            let mut p = init_ntk(InitConfig { m: 24, d: 5, seed: 8 }).unwrap();
            let (a, mut ms) = init_markov_stationary(24, 0.01, &mut rng).unwrap();
            p.a.copy_from_slice(&a);
            for _ in 0..100 {
                let theta_before = p.effective_predictor();
                let w_before: Vec<Vec<f64>> =
                    (0..p.m()).map(|i| p.neuron(i).to_vec()).collect();
                markov_oscillation_step(
                    &mut p, &tp, ds.as_ref(), gradient, &mut ms, 0.01, &mut rng,
                )
                .unwrap();
                let theta_after = p.effective_predictor();
                for j in 0..5 {
                    let mut expect = theta_before[j];
                    for (i, w) in w_before.iter().enumerate() {
                        expect += ms.prev_delta[i] * w[j];
                    }
                    assert!(
                        (theta_after[j] - expect).abs() <= 1e-12,
                        "θ recursion off by {}",
                        (theta_after[j] - expect).abs()
                    );
                }
            }
        }
    }

    #[test]
    fn linearized_first_step_matches_gd_at_init() {
        let tp = make_teacher(4, 0.5, TeacherDirection::RandomUnit(3)).unwrap();
        let p0 = init_ntk(InitConfig { m: 8, d: 4, seed: 9 }).unwrap();
        let mut p_lin = p0.clone();
        let mut p_gd = p0;
        linearized_gd_step(&mut p_lin, &tp, None, GradientMode::Population, 0.05).unwrap();
        gd_full_batch_step(&mut p_gd, &tp, None, GradientMode::Population, 0.05).unwrap();
        assert_eq!(p_lin, p_gd, "tangent coincidence at the expansion point");
    }

    #[test]
    fn linearized_freezes_w_when_a0_zero() {
        let tp = make_teacher(2, 0.5, TeacherDirection::FirstAxis).unwrap();
        let mut p =
            NetworkParams::from_parts(2, 2, vec![0.4, -0.2, 0.1, 0.3], vec![0.0, 0.0])
                .unwrap();
        let w_before = p.w_flat().to_vec();
        for _ in 0..20 {
            linearized_gd_step(&mut p, &tp, None, GradientMode::Population, 0.1).unwrap();
        }
        assert_eq!(p.w_flat(), w_before.as_slice(), "a0 = 0 freezes the first layer");
    }

    #[test]
    fn linearized_population_gd_contracts() {
        // 2×2 instance: monotone decay of ‖θ_lin − θ*‖ for η below
        // 1/(‖a0‖² + λmax(W0ᵀW0)).
        let tp = make_teacher(2, 1.0, TeacherDirection::FirstAxis).unwrap();
        let p0 = NetworkParams::from_parts(
            2,
            2,
            vec![0.6, 0.2, -0.3, 0.5],
            vec![0.4, -0.7],
        )
        .unwrap();
        // W0ᵀW0 for the 2×2 case, eigenvalues by the trace/det formula.
        let w = p0.w_flat();
        let g = [
            w[0] * w[0] + w[2] * w[2],
            w[0] * w[1] + w[2] * w[3],
            w[1] * w[0] + w[3] * w[2],
            w[1] * w[1] + w[3] * w[3],
        ];
        let tr = g[0] + g[3];
        let det = g[0] * g[3] - g[1] * g[2];
        let lmax = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        let a0_sq = norm_sq(p0.a0());
        let eta = 0.9 / (a0_sq + lmax);

        let mut p = p0;
        let mut err_prev = f64::INFINITY;
        for _ in 0..400 {
            let theta = p.linearized_predictor();
            let err = theta
                .iter()
                .zip(&tp.theta_star)
                .map(|(t, s)| (t - s) * (t - s))
                .sum::<f64>()
                .sqrt();
            assert!(err <= err_prev + 1e-15, "‖θ_lin − θ*‖ must decay monotonically");
            err_prev = err;
            linearized_gd_step(&mut p, &tp, None, GradientMode::Population, eta).unwrap();
        }
        assert!(err_prev < 1e-6, "final linearized error {err_prev}");
    }

    #[test]
    fn config_validation() {
        let bad_eta = OptimizerConfig {
            kind: OptimizerKind::Gd { gradient: GradientMode::Population },
            eta: 0.0,
        };
        assert!(bad_eta.validate().is_err());
        let bad_sigma = OptimizerConfig {
            kind: OptimizerKind::LabelNoiseSgd { sigma: -1.0, sampling: Sampling::Fresh },
            eta: 0.1,
        };
        assert!(bad_sigma.validate().is_err());
        let ok = OptimizerConfig {
            kind: OptimizerKind::Sam { rho: 0.0, sigma: 0.0 },
            eta: 0.1,
        };
        assert!(ok.validate().is_ok(), "degenerate SAM must be allowed");
    }
}
