//! Brute-force log marginal likelihoods for tiny instances with a
//! one-dimensional envelope. Every latent variance is integrated numerically
//! (trapezoid rule in log-variance), so these share no algebra with the
//! closed forms under test. Values are correct up to a `V`-independent
//! additive constant.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// `log ∫_lo^hi exp(f(t)) dt` by the trapezoid rule with step `h`.
pub fn log_integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, h: f64) -> f64 {
    let steps = ((hi - lo) / h).round() as usize;
    let vals: Vec<f64> = (0..=steps)
        .map(|i| {
            let w = if i == 0 || i == steps { 0.5f64.ln() } else { 0.0 };
            f(lo + i as f64 * h) + w
        })
        .collect();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + h.ln()
}

/// `log ∫_0^∞ exp(g(v)) dv` through `v = eᵗ`.
pub fn log_integrate_variance(g: impl Fn(f64) -> f64) -> f64 {
    log_integrate(|t| g(t.exp()) + t, -40.0, 40.0, 0.005)
}

/// Unnormalized inverse-Gamma log kernel.
fn ln_inv_gamma(v: f64, shape: f64, scale: f64) -> f64 {
    -(shape + 1.0) * v.ln() - scale / v
}

/// Sum of `log N(r; 0, v·I_d)` over residual blocks with total squared norm
/// `energy` and `count` scalar coordinates.
fn ln_isotropic(energy: f64, count: f64, v: f64) -> f64 {
    -0.5 * energy / v - 0.5 * count * v.ln()
}

/// Unit vector orthogonal to a unit vector in the plane.
pub fn perp2(v: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![-v[1], v[0]])
}

fn residual_energy(y: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let z = y * v;
    y.norm_squared() - z.norm_squared()
}

fn ln_known_part(z: &DVector<f64>, phi: &[f64], psi: &[f64]) -> f64 {
    (0..z.len()).map(|i| -0.5 * (z[i] - phi[i]).powi(2) / psi[i] - 0.5 * psi[i].ln()).sum()
}

/// `p = 2`: `y_i v ~ N(φ_i, ψ_i)` known; `y_i v⊥ ~ N(0, w)` with `w ~ IW(u0, ν0)`.
pub fn general(y: &DMatrix<f64>, v: &DVector<f64>, phi: &[f64], psi: &[f64], u0: f64, nu0: f64) -> f64 {
    assert_eq!(y.ncols(), 2);
    let n = y.nrows() as f64;
    let r = y * perp2(v);
    let energy = r.norm_squared();
    ln_known_part(&(y * v), phi, psi)
        + log_integrate_variance(|w| ln_isotropic(energy, n, w) + ln_inv_gamma(w, nu0 / 2.0, u0 / 2.0))
}

/// Any `p`: `y_i v ~ N(φ_i, ψ_i)` known; off-envelope coordinates are
/// `N(0, σ² I)` with `σ² ~ IG(α, κ)`.
pub fn spiked(y: &DMatrix<f64>, v: &DVector<f64>, phi: &[f64], psi: &[f64], alpha: f64, kappa: f64) -> f64 {
    let (n, p) = y.shape();
    let energy = residual_energy(y, v);
    let count = (n * (p - 1)) as f64;
    ln_known_part(&(y * v), phi, psi)
        + log_integrate_variance(|s2| ln_isotropic(energy, count, s2) + ln_inv_gamma(s2, alpha, kappa))
}

/// `p = 2`, `q = 1`: `y_i v ~ N(x_i η, ψ₁)`, `η | ψ₁ ~ N(0, ψ₁/λ0)`,
/// `ψ₁ ~ IW(u1, ν1 − 1)`, and `y_i v⊥ ~ N(0, w)` with `w ~ IW(u0, ν0)`.
/// `(η, ψ₁)` are integrated on a 2-D grid.
pub fn response_envelope(y: &DMatrix<f64>, x: &[f64], v: &DVector<f64>, lambda0: f64, u1: f64, nu1: f64, u0: f64, nu0: f64) -> f64 {
    assert_eq!(y.ncols(), 2);
    let n = y.nrows() as f64;
    let z = y * v;
    let sxx: f64 = x.iter().map(|a| a * a).sum::<f64>() + lambda0;
    let center = x.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>() / sxx;
    let material = log_integrate(
        |t| {
            let psi1 = t.exp();
            let half = 12.0 * (psi1 / sxx).sqrt();
            let inner = log_integrate(
                |eta| {
                    let rss: f64 = x.iter().zip(z.iter()).map(|(a, b)| (b - a * eta).powi(2)).sum();
                    -0.5 * rss / psi1 - 0.5 * n * psi1.ln() - 0.5 * lambda0 * eta * eta / psi1 - 0.5 * (psi1 / lambda0).ln()
                },
                center - half,
                center + half,
                half / 300.0,
            );
            inner + ln_inv_gamma(psi1, (nu1 - 1.0) / 2.0, u1 / 2.0) + t
        },
        -30.0,
        30.0,
        0.01,
    );
    let r = y * perp2(v);
    let energy = r.norm_squared();
    material + log_integrate_variance(|w| ln_isotropic(energy, n, w) + ln_inv_gamma(w, nu0 / 2.0, u0 / 2.0))
}

/// `p = 2`, zero-mean groups: `y_ki v ~ N(0, ψ_k)` with `ψ_k ~ IW(u_k, ν_k)`
/// and `y_ki v⊥ ~ N(0, σ_k²)` with `σ_k² ~ IG(α, κ)`.
pub fn shared_subspace(groups: &[DMatrix<f64>], v: &DVector<f64>, priors: &[(f64, f64)], alpha: f64, kappa: f64) -> f64 {
    groups
        .iter()
        .zip(priors)
        .map(|(yk, &(u, nu))| {
            let nk = yk.nrows() as f64;
            let captured = (yk * v).norm_squared();
            let energy = residual_energy(yk, v);
            log_integrate_variance(|w| ln_isotropic(captured, nk, w) + ln_inv_gamma(w, nu / 2.0, u / 2.0))
                + log_integrate_variance(|s2| ln_isotropic(energy, nk, s2) + ln_inv_gamma(s2, alpha, kappa))
        })
        .sum()
}

/// Largest deviation of `a − b` from its mean (the fitted additive constant).
pub fn spread_after_constant(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let c = d.iter().sum::<f64>() / d.len() as f64;
    d.iter().map(|x| (x - c).abs()).fold(0.0, f64::max)
}
