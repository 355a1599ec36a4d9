//! The two-layer linear network `f(x) = aᵀWx`.
//!
//! [`NetworkParams`] holds the trainable state `(W, a)` together with frozen
//! snapshots `(W0, a0)` of the state at construction. The snapshots are what
//! make lazy-regime distances and the linearized surrogate model available
//! at any point of a run without external bookkeeping; they are taken once,
//! at step 0 of the whole run, and never move again.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dot};
use crate::rng::{domain, stream, Stream};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Width, input dimension, and seed for [`init_ntk`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitConfig {
    pub m: usize,
    pub d: usize,
    pub seed: u64,
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.d < 1 {
            return Err(Error::InvalidArgument(format!(
                "width and input dimension must be at least 1, got m={}, d={}",
                self.m, self.d
            )));
        }
        Ok(())
    }
}

/// Trainable parameters of the network plus their frozen initial values.
///
/// `W` is `m × d` row-major; row `i` is the first-layer neuron `wᵢ`.
/// `a` is the length-`m` second layer. `(W0, a0)` are immutable after
/// construction; steppers mutate only `(W, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    m: usize,
    d: usize,
    pub(crate) w: Vec<f64>,
    pub(crate) a: Vec<f64>,
    w0: Vec<f64>,
    a0: Vec<f64>,
}

impl NetworkParams {
    /// Builds params from explicit matrices, snapshotting them as `(W0, a0)`.
    pub fn from_parts(m: usize, d: usize, w: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        if w.len() != m * d || a.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "expected W of {}x{} = {} entries and a of {} entries, got {} and {}",
                m,
                d,
                m * d,
                m,
                w.len(),
                a.len()
            )));
        }
        if !all_finite(&w) || !all_finite(&a) {
            return Err(Error::NonFinite("NetworkParams::from_parts".into()));
        }
        let w0 = w.clone();
        let a0 = a.clone();
        Ok(Self { m, d, w, a, w0, a0 })
    }

    pub(crate) fn from_raw(
        m: usize,
        d: usize,
        w: Vec<f64>,
        a: Vec<f64>,
        w0: Vec<f64>,
        a0: Vec<f64>,
    ) -> Result<Self> {
        if w.len() != m * d || a.len() != m || w0.len() != m * d || a0.len() != m {
            return Err(Error::DimensionMismatch(
                "raw snapshot has inconsistent lengths".into(),
            ));
        }
        Ok(Self { m, d, w, a, w0, a0 })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Neuron `i` of the first layer.
    pub fn neuron(&self, i: usize) -> &[f64] {
        &self.w[i * self.d..(i + 1) * self.d]
    }

    /// Neuron `i` at initialization.
    pub fn neuron0(&self, i: usize) -> &[f64] {
        &self.w0[i * self.d..(i + 1) * self.d]
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn a0(&self) -> &[f64] {
        &self.a0
    }

    pub fn w_flat(&self) -> &[f64] {
        &self.w
    }

    pub fn w0_flat(&self) -> &[f64] {
        &self.w0
    }

    pub(crate) fn neuron_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.w[i * self.d..(i + 1) * self.d]
    }

    /// Replaces the second layer, e.g. with the lattice initialization of
    /// the oscillation chain. The `(W0, a0)` snapshots stay frozen.
    pub fn set_second_layer(&mut self, a: &[f64]) -> Result<()> {
        if a.len() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "second layer has {} entries, model expects {}",
                a.len(),
                self.m
            )));
        }
        if !all_finite(a) {
            return Err(Error::NonFinite("set_second_layer".into()));
        }
        self.a.copy_from_slice(a);
        Ok(())
    }

    /// `f(x) = aᵀ(Wx)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok((0..self.m)
            .map(|i| self.a[i] * dot(self.neuron(i), x))
            .sum())
    }

    /// The effective linear predictor `θ = aᵀW`, so that `f(x) = θ·x`.
    pub fn effective_predictor(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.d];
        for i in 0..self.m {
            let row = &self.w[i * self.d..(i + 1) * self.d];
            let ai = self.a[i];
            for (t, wj) in theta.iter_mut().zip(row) {
                *t += ai * wj;
            }
        }
        theta
    }

    /// Effective predictor of the model linearized at `(W0, a0)`:
    /// `θ_lin = a0ᵀW + aᵀW0 − a0ᵀW0`.
    pub fn linearized_predictor(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.d];
        for i in 0..self.m {
            let row = &self.w[i * self.d..(i + 1) * self.d];
            let row0 = &self.w0[i * self.d..(i + 1) * self.d];
            let (ai, a0i) = (self.a[i], self.a0[i]);
            for j in 0..self.d {
                theta[j] += a0i * row[j] + ai * row0[j] - a0i * row0[j];
            }
        }
        theta
    }

    /// First-order Taylor expansion of `forward` around `(W0, a0)`:
    /// `a0ᵀW0x + a0ᵀ(W−W0)x + (a−a0)ᵀW0x`.
    pub fn linearized_forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(dot(&self.linearized_predictor(), x))
    }

    /// Gradients of the per-sample squared loss `½(f(x) − target)²`, both
    /// evaluated at the current `(W, a)` simultaneously. Returns
    /// `(grad_W, grad_a, residual)` with `grad_W` row `i` equal to
    /// `aᵢ·r·xᵀ` and `grad_a[i] = r·(xᵀwᵢ)`.
    pub fn per_sample_gradients(
        &self,
        x: &[f64],
        target: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        self.check_input(x)?;
        let r = self.forward(x)? - target;
        let mut grad_w = vec![0.0; self.m * self.d];
        let mut grad_a = vec![0.0; self.m];
        for i in 0..self.m {
            let ai = self.a[i];
            let row = self.neuron(i);
            grad_a[i] = r * dot(row, x);
            let g_row = &mut grad_w[i * self.d..(i + 1) * self.d];
            for (g, xj) in g_row.iter_mut().zip(x) {
                *g = ai * r * xj;
            }
        }
        Ok((grad_w, grad_a, r))
    }

    /// Hard check that every entry is finite.
    pub fn check_finite(&self) -> Result<()> {
        if all_finite(&self.w) && all_finite(&self.a) {
            Ok(())
        } else {
            Err(Error::NonFinite("network parameters".into()))
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "input has length {}, model expects {}",
                x.len(),
                self.d
            )));
        }
        Ok(())
    }
}

/// NTK initialization: `w_{i,j} ~ N(0, 1/d)` and `aᵢ ~ N(0, 1/m)`, all
/// i.i.d., drawn row-major over `W` first and then over `a` from a single
/// seeded stream. Identical configs give bit-identical parameters.
pub fn init_ntk(cfg: InitConfig) -> Result<NetworkParams> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, domain::INIT);
    let p = init_ntk_from(cfg.m, cfg.d, &mut rng)?;
    Ok(p)
}

/// Same as [`init_ntk`] but drawing from a caller-owned stream.
pub fn init_ntk_from(m: usize, d: usize, rng: &mut Stream) -> Result<NetworkParams> {
    InitConfig { m, d, seed: 0 }.validate()?;
    let w_scale = 1.0 / (d as f64).sqrt();
    let a_scale = 1.0 / (m as f64).sqrt();
    let w: Vec<f64> = (0..m * d)
        .map(|_| w_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let a: Vec<f64> = (0..m)
        .map(|_| a_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    NetworkParams::from_parts(m, d, w, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, norm_sq};
    use proptest::prelude::*;

    fn central_diff_grad<F: FnMut(&[f64]) -> f64>(
        mut f: F,
        point: &[f64],
        h: f64,
    ) -> Vec<f64> {
        let mut grads = Vec::with_capacity(point.len());
        let mut p = point.to_vec();
        for i in 0..point.len() {
            p[i] = point[i] + h;
            let up = f(&p);
            p[i] = point[i] - h;
            let down = f(&p);
            p[i] = point[i];
            grads.push((up - down) / (2.0 * h));
        }
        grads
    }

    #[test]
    fn init_rejects_zero_dims() {
        assert!(init_ntk(InitConfig { m: 0, d: 1, seed: 0 }).is_err());
        assert!(init_ntk(InitConfig { m: 1, d: 0, seed: 0 }).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = InitConfig { m: 17, d: 5, seed: 42 };
        let p = init_ntk(cfg).unwrap();
        let q = init_ntk(cfg).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn scalar_init_has_unit_second_moments() {
        // m = d = 1: E[w²] = 1 and E[a²] = 1 by the 1/√d, 1/√m scales.
        let n = 4000;
        let (mut w2, mut a2) = (0.0, 0.0);
        for seed in 0..n {
            let p = init_ntk(InitConfig { m: 1, d: 1, seed }).unwrap();
            w2 += p.w_flat()[0] * p.w_flat()[0];
            a2 += p.a()[0] * p.a()[0];
        }
        let n = n as f64;
        // Var(z²) = 2 for z ~ N(0,1), so 3 SE = 3·√(2/n).
        let tol = 3.0 * (2.0 / n).sqrt();
        assert!((w2 / n - 1.0).abs() < tol, "E[w²] = {}", w2 / n);
        assert!((a2 / n - 1.0).abs() < tol, "E[a²] = {}", a2 / n);
    }

    #[test]
    fn neuron_norms_concentrate_at_one() {
        let p = init_ntk(InitConfig { m: 4096, d: 64, seed: 3 }).unwrap();
        let mean_norm: f64 =
            (0..p.m()).map(|i| norm(p.neuron(i))).sum::<f64>() / p.m() as f64;
        assert!(
            (mean_norm - 1.0).abs() < 0.02,
            "mean neuron norm {mean_norm} not within 2% of 1"
        );
        // ‖wᵢ‖ concentrates: fluctuations are O(1/√d), so the max over
        // 4096 neurons stays well below 1.6 at d = 64.
        let max_norm = (0..p.m()).map(|i| norm(p.neuron(i))).fold(0.0, f64::max);
        assert!(max_norm < 1.6, "max neuron norm {max_norm}");
    }

    #[test]
    fn ntk_statistics_at_width_10k() {
        let m = 10_000;
        let p = init_ntk(InitConfig { m, d: 16, seed: 11 }).unwrap();
        // E‖wᵢ‖² = 1 with Var(‖wᵢ‖²) = 2/d per neuron.
        let mean_wsq: f64 =
            (0..m).map(|i| norm_sq(p.neuron(i))).sum::<f64>() / m as f64;
        let se_w = (2.0 / 16.0f64 / m as f64).sqrt();
        assert!(
            (mean_wsq - 1.0).abs() < 3.0 * se_w,
            "mean ‖wᵢ‖² = {mean_wsq}, 3SE = {}",
            3.0 * se_w
        );
        // E[m·aᵢ²] = 1 with Var(m·aᵢ²) = 2.
        let mean_masq: f64 =
            p.a().iter().map(|ai| m as f64 * ai * ai).sum::<f64>() / m as f64;
        let se_a = (2.0 / m as f64).sqrt();
        assert!(
            (mean_masq - 1.0).abs() < 3.0 * se_a,
            "mean m·aᵢ² = {mean_masq}, 3SE = {}",
            3.0 * se_a
        );
    }

    #[test]
    fn forward_matches_hand_values() {
        let p = NetworkParams::from_parts(1, 1, vec![3.0], vec![2.0]).unwrap();
        assert_eq!(p.forward(&[5.0]).unwrap(), 30.0);

        let zero_a = NetworkParams::from_parts(2, 2, vec![1.0; 4], vec![0.0, 0.0]).unwrap();
        assert_eq!(zero_a.forward(&[9.0, -4.0]).unwrap(), 0.0);

        let p = NetworkParams::from_parts(
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert_eq!(p.forward(&[3.0, 4.0]).unwrap(), 7.0);
    }

    #[test]
    fn forward_rejects_bad_input_length() {
        let p = init_ntk(InitConfig { m: 3, d: 4, seed: 0 }).unwrap();
        assert!(p.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn effective_predictor_hand_values() {
        let p = NetworkParams::from_parts(1, 2, vec![2.0, 3.0], vec![1.0]).unwrap();
        assert_eq!(p.effective_predictor(), vec![2.0, 3.0]);

        let cancel = NetworkParams::from_parts(
            2,
            2,
            vec![1.0, 0.0, 1.0, 0.0],
            vec![1.0, -1.0],
        )
        .unwrap();
        assert_eq!(cancel.effective_predictor(), vec![0.0, 0.0]);
    }

    #[test]
    fn gradients_match_hand_values() {
        let p = NetworkParams::from_parts(1, 1, vec![1.0], vec![1.0]).unwrap();
        let (gw, ga, r) = p.per_sample_gradients(&[1.0], 2.0).unwrap();
        assert_eq!(r, -1.0);
        assert_eq!(gw, vec![-1.0]);
        assert_eq!(ga, vec![-1.0]);

        // Zero residual means zero gradients.
        let f = p.forward(&[1.0]).unwrap();
        let (gw, ga, r) = p.per_sample_gradients(&[1.0], f).unwrap();
        assert_eq!(r, 0.0);
        assert!(gw.iter().all(|g| *g == 0.0));
        assert!(ga.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream(99, domain::INIT);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for trial in 0..100 {
            let m = 1 + (trial % 5);
            let d = 1 + (trial % 4);
            let p = init_ntk_from(m, d, &mut rng).unwrap();
            let x: Vec<f64> =
                (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let target: f64 = rng.sample(StandardNormal);
            let (gw, ga, _) = p.per_sample_gradients(&x, target).unwrap();

            let flat: Vec<f64> =
                p.w_flat().iter().chain(p.a().iter()).copied().collect();
            let loss = |v: &[f64]| {
                let (wf, af) = v.split_at(m * d);
                let q =
                    NetworkParams::from_parts(m, d, wf.to_vec(), af.to_vec()).unwrap();
                let r = q.forward(&x).unwrap() - target;
                0.5 * r * r
            };
            let fd = central_diff_grad(loss, &flat, h);
            let analytic: Vec<f64> = gw.iter().chain(ga.iter()).copied().collect();
            for (af, nf) in analytic.iter().zip(&fd) {
                let scale = af.abs().max(nf.abs()).max(1e-8);
                worst = worst.max((af - nf).abs() / scale);
            }
        }
        assert!(worst < 1e-5, "max relative gradient error {worst}");
    }

    #[test]
    fn linearized_equals_forward_at_expansion_point() {
        let p = init_ntk(InitConfig { m: 6, d: 3, seed: 5 }).unwrap();
        let x = [0.3, -1.2, 0.8];
        let f = p.forward(&x).unwrap();
        let lin = p.linearized_forward(&x).unwrap();
        // Exact up to summation order: the expansion point has no
        // first-order remainder at all.
        assert!((lin - f).abs() <= 1e-13 * (1.0 + f.abs()));
    }

    #[test]
    fn linearized_ignores_w_when_a0_is_zero() {
        let mut p = NetworkParams::from_parts(2, 2, vec![0.5; 4], vec![0.0, 0.0]).unwrap();
        // Move W arbitrarily; a0 = 0 kills the a0ᵀ(W−W0)x term.
        p.w.copy_from_slice(&[9.0, -3.0, 2.0, 7.0]);
        let x = [1.0, 2.0];
        let expect = dot(p.a(), &[0.5 + 2.0 * 0.5, 0.5 + 2.0 * 0.5]);
        assert_eq!(p.linearized_forward(&x).unwrap(), expect);
        assert_eq!(p.linearized_forward(&x).unwrap(), 0.0);
    }

    #[test]
    fn linearization_error_is_second_order() {
        let mut rng = stream(13, domain::INIT);
        for _ in 0..20 {
            let mut p = init_ntk_from(8, 4, &mut rng).unwrap();
            let eps = 1e-4;
            for v in p.w.iter_mut() {
                *v += eps * rng.sample::<f64, _>(StandardNormal) / 2.0;
            }
            for v in p.a.iter_mut() {
                *v += eps * rng.sample::<f64, _>(StandardNormal) / 2.0;
            }
            let x: Vec<f64> =
                (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let gap = (p.linearized_forward(&x).unwrap() - p.forward(&x).unwrap()).abs();
            assert!(
                gap <= 1e-7 * (1.0 + norm(&x)),
                "remainder {gap} too large for perturbation {eps}"
            );
        }
    }

    proptest! {
        #[test]
        fn forward_consistent_with_effective_predictor(
            m in 1usize..24,
            d in 1usize..6,
            seed in 0u64..1000,
        ) {
            let p = init_ntk(InitConfig { m, d, seed }).unwrap();
            let mut rng = stream(seed.wrapping_add(1), domain::DATA);
            let x: Vec<f64> =
                (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let f = p.forward(&x).unwrap();
            let via_theta = dot(&p.effective_predictor(), &x);
            prop_assert!((f - via_theta).abs() <= 1e-12 * (1.0 + f.abs()));
        }
    }
}
