//! Brute-force oracles, independent of the implementation paths they check.
//!
//! The sphere-marginal probability is computed by adaptive Gauss–Kronrod
//! quadrature of the exact one-dimensional marginal density of a uniform
//! point on the sphere, and the oscillation-chain autocovariance by exact
//! enumeration of all chain paths. Neither shares code with the Monte-Carlo
//! estimators they are compared against.

use crate::error::{Error, Result};

/// 15-point Kronrod nodes on [0, 1] side (symmetric), with the embedded
/// 7-point Gauss rule for the error estimate.
const XGK: [f64; 8] = [
    0.991_455_371_120_813,
    0.949_107_912_342_759,
    0.864_864_423_359_769,
    0.741_531_185_599_394,
    0.586_087_235_467_691,
    0.405_845_151_377_397,
    0.207_784_955_007_898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529,
    0.063_092_092_629_979,
    0.104_790_010_322_250,
    0.140_653_259_715_525,
    0.169_004_726_639_267,
    0.190_350_578_064_785,
    0.204_432_940_075_298,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_870,
    0.279_705_391_489_277,
    0.381_830_050_505_119,
    0.417_959_183_673_469,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let fsum = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * fsum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * fsum;
        }
    }
    kronrod *= half;
    gauss *= half;
    (kronrod, (kronrod - gauss).abs())
}

/// Adaptive bisection to an absolute tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let (value, err) = gk15(f, a, b);
        if err <= tol || b - a < 1e-14 {
            return Ok(value);
        }
        if depth > 48 {
            return Err(Error::InvalidArgument(
                "quadrature failed to converge".into(),
            ));
        }
        let mid = 0.5 * (a + b);
        Ok(recurse(f, a, mid, tol / 2.0, depth + 1)?
            + recurse(f, mid, b, tol / 2.0, depth + 1)?)
    }
    recurse(f, a, b, tol, 0)
}

/// Normalizing constant of the sphere marginal,
/// `c_d = Γ(d/2) / (√π · Γ((d−1)/2))`, by the exact half-integer
/// recurrence `c_{d+2} = c_d · d/(d−1)` from `c₂ = 1/π`, `c₃ = 1/2`.
pub fn sphere_marginal_constant(d: u32) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidArgument("sphere marginal needs d ≥ 2".into()));
    }
    let mut k = if d.is_multiple_of(2) { 2 } else { 3 };
    let mut c = if d.is_multiple_of(2) { 1.0 / std::f64::consts::PI } else { 0.5 };
    while k < d {
        c *= k as f64 / (k as f64 - 1.0);
        k += 2;
    }
    Ok(c)
}

/// `P[|x̂ᵀw| < a_abs]` for `x̂` uniform on the unit sphere in `R^d`.
///
/// The marginal of one coordinate has density
/// `c_d (1 − u²)^{(d−3)/2}` on [−1, 1]; by symmetry the probability is
/// `2 c_d ∫₀^T (1 − u²)^{(d−3)/2} du` with `T = min(a_abs/‖w‖, 1)`. The
/// substitution `u = sin v` removes the d = 2 endpoint singularity and
/// leaves the smooth integrand `cos^{d−2} v`, integrated adaptively to
/// 1e-10 absolute.
pub fn deltaw_positive_prob_oracle(w_norm: f64, a_abs: f64, d: u32) -> Result<f64> {
    if w_norm <= 0.0 || w_norm.is_nan() {
        return Err(Error::InvalidArgument("oracle needs ‖w‖ > 0".into()));
    }
    if d < 2 {
        return Err(Error::InvalidArgument("oracle needs d ≥ 2".into()));
    }
    if a_abs == 0.0 {
        return Ok(0.0);
    }
    let t = (a_abs / w_norm).min(1.0);
    if t >= 1.0 {
        return Ok(1.0);
    }
    let c = sphere_marginal_constant(d)?;
    let power = d as f64 - 2.0;
    let integral = integrate(&|v: f64| v.cos().powf(power), 0.0, t.asin(), 1e-10)?;
    Ok((2.0 * c * integral).min(1.0))
}

/// Exact `E[δ(t)·δ(t+k)]` of the stationary oscillation chain, by
/// enumerating every path of `k+2` states. States are `{−1, 0, +1}` in
/// lattice units; the result carries the `η^½` lattice-squared factor.
pub fn chain_autocov_exact(eta: f64, k: u32) -> f64 {
    let lattice_sq = eta.sqrt();
    // Stationary law and one-step transitions of the three-state chain.
    let pi = |s: i8| if s == 0 { 0.5 } else { 0.25 };
    let trans = |s: i8, s2: i8| -> f64 {
        match (s, s2) {
            (1, 0) | (-1, 0) => 1.0,
            (0, 1) | (0, -1) => 0.5,
            _ => 0.0,
        }
    };
    let states = [-1i8, 0, 1];
    let len = k as usize + 2;
    let mut total = 0.0;
    // Depth-first over all state paths with nonzero probability.
    let mut path = vec![0i8; len];
    fn dfs(
        path: &mut Vec<i8>,
        pos: usize,
        prob: f64,
        states: &[i8; 3],
        pi: &impl Fn(i8) -> f64,
        trans: &impl Fn(i8, i8) -> f64,
        k: usize,
        total: &mut f64,
    ) {
        if prob == 0.0 {
            return;
        }
        if pos == path.len() {
            let d0 = (path[1] - path[0]) as f64;
            let dk = (path[k + 1] - path[k]) as f64;
            *total += prob * d0 * dk;
            return;
        }
        for s in states {
            path[pos] = *s;
            let p = if pos == 0 { pi(*s) } else { trans(path[pos - 1], *s) };
            dfs(path, pos + 1, prob * p, states, pi, trans, k, total);
        }
    }
    dfs(&mut path, 0, 1.0, &states, &pi, &trans, k as usize, &mut total);
    total * lattice_sq
}
