//! Simulation model, loss functions and the simulation experiments.
//!
//! Data follow
//!
//! ```text
//! y_i = x_i η Vᵀ + ε_i,   ε_i ~ N(0, V Ψ(x_i) Vᵀ + σ²(I − VVᵀ)),
//! Ψ(x) = Σ_k Γ_k x xᵀ Γ_kᵀ + σ² I
//! ```
//!
//! with `X`, `Γ_k` standard normal, `η` entries `N(0, τ²)` and `V` uniform on
//! the Stiefel manifold.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covreg::psi_of_x;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, standard_normal, symmetrize};
use crate::mcem::{fit, two_stage_fit, EnvelopeFit, FitConfig};
use crate::stiefel::StiefelBasis;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub q: usize,
    /// Standard deviation of the mean coefficients.
    pub tau: f64,
    pub sigma2: f64,
    /// Number of rank-one covariance terms.
    pub k: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 25,
            s: 4,
            q: 4,
            tau: 3.0,
            sigma2: 1.0,
            k: 4,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.s == 0 {
            return Err(Error::InvalidConfig("n, p and s must be positive".into()));
        }
        if self.s >= self.p {
            return Err(Error::InvalidConfig(format!("s must be < p (got s={}, p={})", self.s, self.p)));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidConfig(format!("tau must be nonnegative (got {})", self.tau)));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma2 must be positive (got {})", self.sigma2)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTruth {
    pub basis: StiefelBasis,
    /// Mean coefficients, `q × s`.
    pub eta: DMatrix<f64>,
    /// Covariance coefficients, each `s × q`.
    pub gamma: Vec<DMatrix<f64>>,
    pub sigma2: f64,
    /// `Ψ(x_i)` for every simulated observation.
    pub psi: Vec<DMatrix<f64>>,
}

impl SimTruth {
    /// `Ψ(x)` for an arbitrary covariate vector.
    pub fn psi_at(&self, x: &[f64]) -> DMatrix<f64> {
        let s = self.basis.s();
        psi_of_x(&self.gamma, &(DMatrix::identity(s, s) * self.sigma2), x)
    }

    /// Full response covariance `VΨ(x)Vᵀ + σ²(I − VVᵀ)`.
    pub fn covariance_at(&self, x: &[f64]) -> DMatrix<f64> {
        let v = self.basis.matrix();
        let p = v.nrows();
        symmetrize(&(v * self.psi_at(x) * v.transpose() + (DMatrix::identity(p, p) - v * v.transpose()) * self.sigma2))
    }

    /// One response row at `x`.
    pub fn sample_row<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<DVector<f64>> {
        let v = self.basis.matrix();
        let (p, s) = v.shape();
        let chol = cholesky(&self.psi_at(x), "Ψ(x)")?;
        let g_s = standard_normal(rng, s, 1).column(0).into_owned();
        let g_p = standard_normal(rng, p, 1).column(0).into_owned();
        let inside = v * (chol.l() * g_s);
        let outside = (&g_p - v * v.tr_mul(&g_p)) * self.sigma2.sqrt();
        let mean = v * self.eta.tr_mul(&DVector::from_column_slice(x));
        Ok(mean + inside + outside)
    }
}

/// Draws `(Y, X, truth)` from the simulation model.
pub fn simulate(cfg: &SimConfig) -> Result<(DMatrix<f64>, DMatrix<f64>, SimTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let basis = StiefelBasis::random(&mut rng, cfg.p, cfg.s)?;
    let eta = standard_normal(&mut rng, cfg.q, cfg.s) * cfg.tau;
    let gamma: Vec<DMatrix<f64>> = (0..cfg.k).map(|_| standard_normal(&mut rng, cfg.s, cfg.q)).collect();
    let x = standard_normal(&mut rng, cfg.n, cfg.q);
    let mut truth = SimTruth {
        basis,
        eta,
        gamma,
        sigma2: cfg.sigma2,
        psi: Vec::with_capacity(cfg.n),
    };
    let mut y = DMatrix::zeros(cfg.n, cfg.p);
    for i in 0..cfg.n {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        let row = truth.sample_row(&xi, &mut rng)?;
        y.row_mut(i).copy_from(&row.transpose());
        truth.psi.push(truth.psi_at(&xi));
    }
    Ok((y, x, truth))
}

/// Stein's loss `tr(Ψ⁻¹Ψ̂) − log|Ψ⁻¹Ψ̂| − d`.
pub fn steins_loss(psi: &DMatrix<f64>, psi_hat: &DMatrix<f64>) -> Result<f64> {
    if psi.shape() != psi_hat.shape() || !psi.is_square() {
        return Err(Error::dims(
            "steins_loss",
            format!("{:?}", psi.shape()),
            format!("{:?}", psi_hat.shape()),
        ));
    }
    let d = psi.nrows() as f64;
    let chol = cholesky(psi, "true covariance")?;
    let chol_hat = cholesky(psi_hat, "estimated covariance")?;
    let trace = chol.solve(psi_hat).trace();
    let logdet = chol_hat.ln_determinant() - chol.ln_determinant();
    Ok((trace - logdet - d).max(0.0))
}

/// Principal angles between `span(V1)` and `span(V2)`, ascending.
///
/// Large angles come from the cosines (singular values of `V1ᵀV2`), small
/// ones from the sines (singular values of `V2 − V1V1ᵀV2`), which keeps
/// full relative accuracy near zero.
pub fn principal_angles(v1: &StiefelBasis, v2: &StiefelBasis) -> Result<Vec<f64>> {
    if v1.p() != v2.p() || v1.s() != v2.s() {
        return Err(Error::dims(
            "principal_angles",
            format!("{}x{}", v1.p(), v1.s()),
            format!("{}x{}", v2.p(), v2.s()),
        ));
    }
    let (a, b) = (v1.matrix(), v2.matrix());
    let cross = a.tr_mul(b);
    let mut cosines: Vec<f64> = cross.singular_values().iter().map(|c| c.clamp(0.0, 1.0)).collect();
    cosines.sort_by(|x, y| y.total_cmp(x));
    let resid = b - a * &cross;
    let mut sines: Vec<f64> = resid.singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    sines.sort_by(|x, y| x.total_cmp(y));
    Ok(cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| if c * c >= 0.5 { s.asin() } else { c.acos() })
        .collect())
}

pub fn largest_principal_angle(v1: &StiefelBasis, v2: &StiefelBasis) -> Result<f64> {
    Ok(principal_angles(v1, v2)?.into_iter().fold(0.0, f64::max))
}

/// Stein's loss at every simulated observation, comparing `Ψ(x_i)` with the
/// fitted covariance expressed in the true basis, `VᵀΣ̂(x_i)V`.
pub fn losses_against_truth(fit: &EnvelopeFit, x: &DMatrix<f64>, truth: &SimTruth) -> Result<Vec<f64>> {
    if truth.psi.len() != x.nrows() {
        return Err(Error::dims("losses_against_truth", format!("{} truth matrices", x.nrows()), truth.psi.len()));
    }
    if truth.basis.p() != fit.p() {
        return Err(Error::dims("losses_against_truth", format!("truth basis with {} rows", fit.p()), truth.basis.p()));
    }
    (0..x.nrows())
        .map(|i| {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let est = fit.covariance_in_basis(&xi, truth.basis.matrix())?;
            steins_loss(&truth.psi[i], &est)
        })
        .collect()
}

/// Mean of [`losses_against_truth`].
pub fn mean_loss_against_truth(fit: &EnvelopeFit, x: &DMatrix<f64>, truth: &SimTruth) -> Result<f64> {
    let losses = losses_against_truth(fit, x, truth)?;
    Ok(crate::linalg::pairwise_sum(&losses) / losses.len() as f64)
}

/// Bootstrap summary of replicate-level values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Standard deviation of the bootstrap means.
    pub se: f64,
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Percentile bootstrap of the mean with [`BOOTSTRAP_RESAMPLES`] resamples
/// and a 95% interval.
pub fn bootstrap_mean(values: &[f64], seed: u64) -> Result<BootstrapSummary> {
    if values.is_empty() {
        return Err(Error::EmptySamples("bootstrap values"));
    }
    let m = values.len();
    let mean = values.iter().sum::<f64>() / m as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..m).map(|_| values[rng.random_range(0..m)]).sum::<f64>() / m as f64)
        .collect();
    means.sort_by(|a, b| a.total_cmp(b));
    let avg = means.iter().sum::<f64>() / means.len() as f64;
    let se = (means.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt();
    let quantile = |prob: f64| {
        let pos = prob * (means.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        means[lo] + (means[hi] - means[lo]) * (pos - lo as f64)
    };
    Ok(BootstrapSummary {
        mean,
        ci_lo: quantile(0.025),
        ci_hi: quantile(0.975),
        se,
    })
}

/// One row of an experiment table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub experiment: String,
    /// The varied setting (`s̃` or `q`).
    pub param: usize,
    /// Mean over replicates of the percentage increase in loss.
    pub mean_pct_increase: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub se: f64,
    pub replicates: usize,
    /// Replicate-level percentage increases, in replicate order.
    pub pct_increases: Vec<f64>,
}

pub const EXPERIMENT_CSV_HEADER: &str = "experiment,param,mean_pct_increase,ci_lo,ci_hi,M";

impl ExperimentRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{:.16e},{}",
            self.experiment, self.param, self.mean_pct_increase, self.ci_lo, self.ci_hi, self.replicates
        )
    }

    fn from_values(experiment: &str, param: usize, values: Vec<f64>, seed: u64) -> Result<Self> {
        let summary = bootstrap_mean(&values, seed)?;
        Ok(Self {
            experiment: experiment.to_string(),
            param,
            mean_pct_increase: summary.mean,
            ci_lo: summary.ci_lo,
            ci_hi: summary.ci_hi,
            se: summary.se,
            replicates: values.len(),
            pct_increases: values,
        })
    }
}

/// Seed for replicate `r` of an experiment seeded with `seed`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    // splitmix64 finalizer on seed + golden-ratio counter
    let mut z = seed.wrapping_add((r as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pct_increase(loss: f64, baseline: f64) -> f64 {
    100.0 * (loss - baseline) / baseline
}

/// Fits with each `s̃` on data simulated with `base.s`, reporting the mean
/// percentage increase of the mean Stein's loss relative to `s̃ = base.s`.
/// Fits use `K = q` covariance terms.
pub fn misspecification_experiment(
    base: &SimConfig,
    s_tilde: &[usize],
    replicates: usize,
    seed: u64,
    fit_template: &FitConfig,
) -> Result<Vec<ExperimentRow>> {
    base.validate()?;
    if !s_tilde.contains(&base.s) {
        return Err(Error::InvalidConfig(format!("s_tilde list must include the true s = {}", base.s)));
    }
    if replicates == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    let per_rep: Vec<Result<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let rs = replicate_seed(seed, r);
            let (y, x, truth) = simulate(&SimConfig { seed: rs, ..base.clone() })?;
            s_tilde
                .iter()
                .map(|&st| {
                    let cfg = FitConfig {
                        s: st,
                        k: base.q,
                        seed: rs ^ 0xA5A5_A5A5,
                        ..fit_template.clone()
                    };
                    let f = fit(&y, &x, &cfg)?;
                    mean_loss_against_truth(&f, &x, &truth)
                })
                .collect()
        })
        .collect();
    let losses: Vec<Vec<f64>> = per_rep.into_iter().collect::<Result<_>>()?;
    let baseline_idx = s_tilde.iter().position(|&st| st == base.s).expect("checked above");
    s_tilde
        .iter()
        .enumerate()
        .map(|(j, &st)| {
            let values = losses
                .iter()
                .map(|l| if j == baseline_idx { 0.0 } else { pct_increase(l[j], l[baseline_idx]) })
                .collect();
            ExperimentRow::from_values("misspecification", st, values, replicate_seed(seed, usize::MAX - j))
        })
        .collect()
}

/// Compares the two-stage estimate (residual singular vectors, then
/// covariance regression) against the joint MCEM fit for each `q`,
/// reporting the mean percentage increase of the two-stage loss.
pub fn two_stage_experiment(
    base: &SimConfig,
    q_list: &[usize],
    replicates: usize,
    seed: u64,
    fit_template: &FitConfig,
) -> Result<Vec<ExperimentRow>> {
    base.validate()?;
    if replicates == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    q_list
        .iter()
        .enumerate()
        .map(|(j, &q)| {
            let values: Vec<Result<f64>> = (0..replicates)
                .into_par_iter()
                .map(|r| {
                    let rs = replicate_seed(seed, r);
                    let sim = SimConfig { seed: rs, q, k: q, ..base.clone() };
                    let (y, x, truth) = simulate(&sim)?;
                    let cfg = FitConfig {
                        s: base.s,
                        k: q,
                        seed: rs ^ 0xA5A5_A5A5,
                        ..fit_template.clone()
                    };
                    let joint = fit(&y, &x, &cfg)?;
                    let two = two_stage_fit(&y, &x, base.s, &cfg)?;
                    let l_joint = mean_loss_against_truth(&joint, &x, &truth)?;
                    let l_two = mean_loss_against_truth(&two, &x, &truth)?;
                    Ok(pct_increase(l_two, l_joint))
                })
                .collect();
            let values = values.into_iter().collect::<Result<Vec<_>>>()?;
            ExperimentRow::from_values("two_stage", q, values, replicate_seed(seed, usize::MAX - j))
        })
        .collect()
}
