//! Monte Carlo EM estimation of the envelope basis.
//!
//! Each iteration samples the covariance regression on the projected data
//! `Y V_{t−1}` (E-step), averages the posterior precisions and
//! precision-weighted means per observation, then maximizes the resulting
//! spiked marginal likelihood over the Stiefel manifold (M-step). The loop
//! stops when successive subspaces are within `em_tol` in projector distance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covreg::{
    mean_covariance, mean_precision, posterior_moments, sample_chains_round, CovRegHyper, CovRegSamples, CovRegState,
    McmcConfig,
};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, complete_orthonormal, inv_spd, symmetrize, top_right_singular_vectors};
use crate::objectives::{MStepObjective, PriorConfig};
use crate::stiefel::{maximize_on_stiefel, orthonormalize, OptimizerConfig, StiefelBasis};

const RIDGE: f64 = 1e-8;
const SINGULAR_TOL: f64 = 1e-10;

/// Optimal hard-threshold coefficient for unknown noise level,
/// `ω(β) ≈ 0.56β³ − 0.95β² + 1.82β + 1.43`.
pub fn threshold_coefficient(beta: f64) -> f64 {
    0.56 * beta.powi(3) - 0.95 * beta.powi(2) + 1.82 * beta + 1.43
}

/// Number of singular values of `Y` above `ω(β)·median(σ)`, with
/// `β = min(n, p)/max(n, p)`; capped below `min(n, p)`.
pub fn select_rank(y: &DMatrix<f64>) -> usize {
    let (n, p) = y.shape();
    let m = n.min(p);
    if m == 0 {
        return 0;
    }
    let mut sv: Vec<f64> = y.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let median = if m % 2 == 1 {
        sv[m / 2]
    } else {
        0.5 * (sv[m / 2 - 1] + sv[m / 2])
    };
    if !(sv[0] > 0.0) {
        return 0;
    }
    let beta = m as f64 / n.max(p) as f64;
    let cutoff = threshold_coefficient(beta) * median;
    sv.iter().filter(|&&v| v > cutoff).count().min(m - 1)
}

/// Least-squares coefficients `(XᵀX)⁻¹XᵀY`, falling back to a `1e-8` ridge
/// when `XᵀX` is singular.
pub fn ols_coefficients(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::dims("ols_coefficients", format!("X with {} rows", y.nrows()), x.nrows()));
    }
    let q = x.ncols();
    let gram = x.tr_mul(x);
    let scale = gram.diagonal().max().max(1.0);
    let eig_min = crate::linalg::min_eigenvalue(&gram);
    let chol = if eig_min > SINGULAR_TOL * scale {
        cholesky(&gram, "XᵀX")
    } else {
        Err(Error::NotPositiveDefinite("XᵀX"))
    };
    let chol = match chol {
        Ok(c) => c,
        Err(_) => {
            log::warn!("XᵀX is singular; using a {RIDGE:e} ridge for the least-squares start");
            cholesky(&(gram + DMatrix::identity(q, q) * RIDGE), "XᵀX + ridge")?
        }
    };
    Ok(chol.solve(&x.tr_mul(y)))
}

/// Starting basis: the span of the least-squares coefficient rows (up to
/// their numerical rank), completed by the leading right singular vectors
/// of the residual after projecting that span out.
pub fn init_basis(y: &DMatrix<f64>, x: &DMatrix<f64>, s: usize) -> Result<StiefelBasis> {
    let (n, p) = y.shape();
    if s == 0 || s > p {
        return Err(Error::InvalidConfig(format!("envelope dimension must satisfy 1 <= s <= p, got s={s}, p={p}")));
    }
    if x.nrows() != n {
        return Err(Error::dims("init_basis", format!("X with {n} rows"), x.nrows()));
    }
    let no_covariates = x.ncols() == 0 || x.iter().all(|v| *v == 0.0);
    let (mean_span, resid) = if no_covariates {
        (DMatrix::zeros(p, 0), y.clone())
    } else {
        let beta = ols_coefficients(y, x)?;
        let (dirs, sv) = top_right_singular_vectors(&beta, s.min(x.ncols()));
        let rank = sv.iter().filter(|&&v| v > SINGULAR_TOL * sv[0].max(f64::MIN_POSITIVE)).count();
        let keep = rank.min(dirs.ncols());
        (dirs.columns(0, keep).into_owned(), y - x * beta)
    };
    let missing = s - mean_span.ncols();
    let mut cols = mean_span.clone();
    if missing > 0 {
        let projected = if mean_span.ncols() > 0 {
            &resid - (&resid * &mean_span) * mean_span.transpose()
        } else {
            resid
        };
        let (extra, sv) = top_right_singular_vectors(&projected, missing);
        let top = sv.get(0).copied().unwrap_or(0.0);
        let useful = sv.iter().take(extra.ncols()).filter(|&&v| v > SINGULAR_TOL * top.max(f64::MIN_POSITIVE)).count();
        let mut joined = DMatrix::zeros(p, mean_span.ncols() + useful);
        joined.columns_mut(0, mean_span.ncols()).copy_from(&mean_span);
        joined.columns_mut(mean_span.ncols(), useful).copy_from(&extra.columns(0, useful));
        cols = joined;
    }
    let basis = if cols.ncols() > 0 {
        orthonormalize(&cols)?.into_matrix()
    } else {
        cols
    };
    let full = if basis.ncols() < s {
        complete_orthonormal(&basis, s)
    } else {
        basis
    };
    StiefelBasis::new(full)
}

/// Posterior mean of the isotropic noise variance given `V`:
/// `(½‖Y‖² − ½‖YV‖² + κ) / (n(p − s)/2 + α − 1)`.
pub fn estimate_sigma2(y: &DMatrix<f64>, v: &StiefelBasis, alpha: f64, kappa: f64) -> Result<f64> {
    let (n, p) = y.shape();
    if v.p() != p {
        return Err(Error::dims("estimate_sigma2", format!("basis with {p} rows"), v.p()));
    }
    let denom = (n * (p - v.s())) as f64 / 2.0 + alpha - 1.0;
    if !(denom > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "n(p - s)/2 + alpha must exceed 1 for a finite posterior mean (got {})",
            denom + 1.0
        )));
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidConfig(format!("kappa must be positive (got {kappa})")));
    }
    let resid = 0.5 * y.norm_squared() - 0.5 * (y * v.matrix()).norm_squared() + kappa;
    Ok(resid / denom)
}

/// Configuration of [`fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Envelope dimension; 0 selects it with [`select_rank`].
    pub s: usize,
    /// Number of rank-one covariance regression terms.
    pub k: usize,
    pub em_max_iters: usize,
    /// Projector-distance threshold between successive subspaces.
    pub em_tol: f64,
    /// Schedule of the first E-step.
    pub mcmc: McmcConfig,
    /// Schedule of warm-started E-steps after the first.
    pub warm_mcmc: McmcConfig,
    pub optimizer: OptimizerConfig,
    pub priors: PriorConfig,
    pub covreg: CovRegHyper,
    pub center: bool,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            s: 0,
            k: 1,
            em_max_iters: 50,
            em_tol: 1e-3,
            mcmc: McmcConfig::default(),
            warm_mcmc: McmcConfig {
                n_iter: 500,
                burn: 100,
                thin: 1,
                chains: 1,
            },
            optimizer: OptimizerConfig::default(),
            priors: PriorConfig::default(),
            covreg: CovRegHyper::default(),
            center: true,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.em_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("em_tol must be positive (got {})", self.em_tol)));
        }
        if self.warm_mcmc.chains != self.mcmc.chains {
            return Err(Error::InvalidConfig("warm_mcmc.chains must equal mcmc.chains".into()));
        }
        self.mcmc.validate()?;
        self.warm_mcmc.validate()?;
        self.optimizer.validate()?;
        self.priors.validate()
    }
}

/// One EM iteration as recorded in [`EnvelopeFit::trace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmStep {
    pub iteration: usize,
    /// M-step objective after every accepted optimizer step.
    pub objective: Vec<f64>,
    /// Projector distance between the subspaces before and after the M-step.
    pub step: f64,
    pub sigma2: f64,
    pub mstep_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct EnvelopeFit {
    pub basis: StiefelBasis,
    pub sigma2: f64,
    /// Posterior draws of the final E-step, taken at `basis`.
    pub samples: CovRegSamples,
    pub trace: Vec<EmStep>,
    pub converged: bool,
    pub config: FitConfig,
    /// Column means subtracted from `Y` (zeros when centering is off).
    pub y_offset: DVector<f64>,
}

impl EnvelopeFit {
    pub fn p(&self) -> usize {
        self.basis.p()
    }

    pub fn s(&self) -> usize {
        self.basis.s()
    }

    /// `Ψ̂(x) = (E[Ψ(x)⁻¹])⁻¹`, the Stein-loss Bayes estimate on the envelope.
    pub fn projected_covariance(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let prec = mean_precision(&self.samples, x)?;
        inv_spd(&prec, "posterior mean precision").map_err(|_| Error::Numerical("posterior mean precision is singular".into()))
    }

    /// Posterior mean of `Ψ(x)`.
    pub fn projected_mean_covariance(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        mean_covariance(&self.samples, x)
    }

    /// `Σ̂(x) = V̂ Ψ̂(x) V̂ᵀ + σ̂²(I − V̂V̂ᵀ)`.
    pub fn full_covariance(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let v = self.basis.matrix();
        let psi = self.projected_covariance(x)?;
        let p = self.p();
        let proj = v * v.transpose();
        Ok(symmetrize(&(v * psi * v.transpose() + (DMatrix::identity(p, p) - proj) * self.sigma2)))
    }

    /// `Wᵀ Σ̂(x) W` computed without forming `Σ̂(x)`; used to compare against
    /// the true covariance expressed in a reference basis `W`.
    pub fn covariance_in_basis(&self, x: &[f64], w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.nrows() != self.p() {
            return Err(Error::dims("covariance_in_basis", format!("{} rows", self.p()), w.nrows()));
        }
        let psi = self.projected_covariance(x)?;
        let c = w.tr_mul(self.basis.matrix());
        let wtw = w.tr_mul(w);
        Ok(symmetrize(&(&c * psi * c.transpose() + (wtw - &c * c.transpose()) * self.sigma2)))
    }

    /// Posterior mean response at `x`, including the centering offset.
    pub fn fitted_mean(&self, x: &[f64]) -> Result<DVector<f64>> {
        if self.samples.is_empty() {
            return Err(Error::EmptySamples("posterior samples"));
        }
        let mut phi = DVector::zeros(self.s());
        for d in &self.samples.draws {
            phi += d.mean(x);
        }
        phi /= self.samples.len() as f64;
        Ok(self.basis.matrix() * phi + &self.y_offset)
    }
}

/// `Ψ̂(x)` (`projected_only`) or `Σ̂(x)`.
pub fn fitted_covariance(fit: &EnvelopeFit, x: &[f64], projected_only: bool) -> Result<DMatrix<f64>> {
    if projected_only {
        fit.projected_covariance(x)
    } else {
        fit.full_covariance(x)
    }
}

fn column_means(y: &DMatrix<f64>) -> DVector<f64> {
    let n = y.nrows() as f64;
    DVector::from_iterator(y.ncols(), y.column_iter().map(|c| c.sum() / n))
}

fn center_columns(y: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = y.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Centered copy of `Y` and the offsets used (zeros when `center` is off).
pub fn prepare_response(y: &DMatrix<f64>, center: bool) -> (DMatrix<f64>, DVector<f64>) {
    if center {
        let means = column_means(y);
        (center_columns(y, &means), means)
    } else {
        (y.clone(), DVector::zeros(y.ncols()))
    }
}

/// Envelope dimension implied by `cfg.s` (auto-selected when 0).
pub fn resolve_dimension(y_centered: &DMatrix<f64>, s: usize) -> Result<usize> {
    let (n, p) = y_centered.shape();
    let s = if s == 0 { select_rank(y_centered) } else { s };
    if s == 0 {
        return Err(Error::InvalidConfig("selected envelope dimension is 0; nothing to fit".into()));
    }
    if s >= p {
        return Err(Error::InvalidConfig(format!("s must be < p (got s={s}, p={p})")));
    }
    if s >= n {
        return Err(Error::InvalidConfig(format!("s must be < n (got s={s}, n={n})")));
    }
    Ok(s)
}

/// Random-stream round reserved for the final E-step.
const FINAL_ROUND: u32 = u32::MAX;

/// Posterior draws at the final basis: a fresh chain from the default
/// starting state with the first-E-step schedule, so the returned samples do
/// not depend on how many EM iterations preceded them.
fn final_estep(yc: &DMatrix<f64>, x: &DMatrix<f64>, v: &StiefelBasis, cfg: &FitConfig) -> Result<CovRegSamples> {
    let z = yc * v.matrix();
    let init = CovRegState::initial(&z, x, cfg.k, cfg.covreg.clone())?;
    sample_chains_round(&z, x, &[init], &cfg.mcmc, cfg.seed, FINAL_ROUND)
}

/// Runs the MCEM loop from [`init_basis`].
pub fn fit(y: &DMatrix<f64>, x: &DMatrix<f64>, cfg: &FitConfig) -> Result<EnvelopeFit> {
    let (yc, _) = prepare_response(y, cfg.center);
    let s = resolve_dimension(&yc, cfg.s)?;
    let v0 = init_basis(&yc, x, s)?;
    fit_from(y, x, cfg, &v0)
}

/// Runs the MCEM loop from a given starting basis (its column count fixes `s`).
pub fn fit_from(y: &DMatrix<f64>, x: &DMatrix<f64>, cfg: &FitConfig, v0: &StiefelBasis) -> Result<EnvelopeFit> {
    cfg.validate()?;
    let (n, p) = y.shape();
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 observations (got {n})")));
    }
    if x.nrows() != n {
        return Err(Error::dims("fit", format!("X with {n} rows"), x.nrows()));
    }
    if v0.p() != p {
        return Err(Error::dims("fit starting basis", format!("{p} rows"), v0.p()));
    }
    let s = v0.s();
    if s >= p.min(n) {
        return Err(Error::InvalidConfig(format!("s must be < min(n, p) (got s={s}, n={n}, p={p})")));
    }
    let (yc, offset) = prepare_response(y, cfg.center);
    let alpha = cfg.priors.alpha;
    let kappa = cfg.priors.kappa;

    let mut v = v0.clone();
    let mut warm: Option<Vec<CovRegState>> = None;
    let mut trace = Vec::new();
    let mut converged = false;

    for t in 1..=cfg.em_max_iters {
        let z = &yc * v.matrix();
        let samples = match &warm {
            None => {
                let init = CovRegState::initial(&z, x, cfg.k, cfg.covreg.clone())?;
                sample_chains_round(&z, x, &[init], &cfg.mcmc, cfg.seed, 0)?
            }
            Some(states) => sample_chains_round(&z, x, states, &cfg.warm_mcmc, cfg.seed, t as u32 - 1)?,
        };
        let moments = posterior_moments(&samples, x)?;
        warm = Some(samples.last_states);
        let objective = MStepObjective::new(&yc, moments, alpha, kappa)?;
        let result = maximize_on_stiefel(&objective, &v, &cfg.optimizer)?;
        let step = v.projector_distance(&result.basis);
        let sigma2 = estimate_sigma2(&yc, &result.basis, alpha, kappa)?;
        log::debug!(
            "EM iteration {t}: objective {:.6} -> {:.6}, step {step:.3e}",
            result.trace[0],
            result.trace.last().copied().unwrap_or(f64::NAN)
        );
        trace.push(EmStep {
            iteration: t,
            objective: result.trace,
            step,
            sigma2,
            mstep_iterations: result.iterations,
        });
        v = result.basis;
        if step < cfg.em_tol {
            converged = true;
            break;
        }
    }
    if !converged && cfg.em_max_iters > 0 {
        log::warn!("EM did not reach tolerance {:e} in {} iterations", cfg.em_tol, cfg.em_max_iters);
    }

    let samples = final_estep(&yc, x, &v, cfg)?;
    let sigma2 = estimate_sigma2(&yc, &v, alpha, kappa)?;
    Ok(EnvelopeFit {
        basis: v,
        sigma2,
        samples,
        trace,
        converged,
        config: FitConfig { s, ..cfg.clone() },
        y_offset: offset,
    })
}

/// The basis whose span is `span(V)` and whose columns are the leading
/// right singular vectors of the residual of `Y` on `X`; the estimate used by
/// the two-stage comparison.
pub fn residual_basis(y: &DMatrix<f64>, x: &DMatrix<f64>, s: usize) -> Result<StiefelBasis> {
    let (yc, _) = prepare_response(y, true);
    let resid = if x.ncols() == 0 {
        yc
    } else {
        &yc - x * ols_coefficients(&yc, x)?
    };
    let (dirs, _) = top_right_singular_vectors(&resid, s);
    let full = if dirs.ncols() < s { complete_orthonormal(&dirs, s) } else { dirs };
    StiefelBasis::new(orthonormalize(&full)?.into_matrix())
}

/// Two-stage estimate: the basis from [`residual_basis`], then the same
/// final E-step that [`fit`] performs. No EM iterations are run.
pub fn two_stage_fit(y: &DMatrix<f64>, x: &DMatrix<f64>, s: usize, cfg: &FitConfig) -> Result<EnvelopeFit> {
    cfg.validate()?;
    let (yc, offset) = prepare_response(y, cfg.center);
    let v = residual_basis(y, x, s)?;
    let samples = final_estep(&yc, x, &v, cfg)?;
    let sigma2 = estimate_sigma2(&yc, &v, cfg.priors.alpha, cfg.priors.kappa)?;
    Ok(EnvelopeFit {
        basis: v,
        sigma2,
        samples,
        trace: Vec::new(),
        converged: true,
        config: FitConfig { s, em_max_iters: 0, ..cfg.clone() },
        y_offset: offset,
    })
}
