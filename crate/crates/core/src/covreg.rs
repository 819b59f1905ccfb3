//! Bayesian linear covariance regression on projected data.
//!
//! Each projected observation `z_i` (a row of `Z`, length `s`) follows
//!
//! ```text
//! z_i = x_i η + Σ_k γ_ik (B_k x_i)ᵀ + e_i,   γ_ik ~ N(0, 1),   e_i ~ N(0, A)
//! ```
//!
//! so that, marginally over the latent factors, `z_i ~ N(x_i η, Ψ(x_i))` with
//! `Ψ(x) = Σ_k (B_k x)(B_k x)ᵀ + A`. The sampler cycles through the latent
//! factors, the stacked regression coefficients `(η, B_1, …, B_K)` and the
//! baseline covariance `A`, each from its conjugate full conditional.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, inv_spd, logdet_spd, standard_normal, symmetrize};
use crate::objectives::{PosteriorMoments, PriorScale};

const JITTER: f64 = 1e-8;

/// Prior hyperparameters of the covariance regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovRegHyper {
    /// Prior variance of each entry of the mean coefficients.
    pub tau_eta2: f64,
    /// Prior variance of each entry of the covariance coefficients.
    pub tau_b2: f64,
    /// Inverse-Wishart scale of the baseline covariance (`s × s`).
    pub a_scale: PriorScale,
    /// Inverse-Wishart degrees of freedom; `None` means `s + 2`.
    pub a_dof: Option<f64>,
    /// When false the mean coefficients are held at zero.
    pub estimate_mean: bool,
}

impl Default for CovRegHyper {
    fn default() -> Self {
        Self {
            tau_eta2: 100.0,
            tau_b2: 100.0,
            a_scale: PriorScale::Isotropic(1.0),
            a_dof: None,
            estimate_mean: true,
        }
    }
}

impl CovRegHyper {
    pub fn a_dof_for(&self, s: usize) -> f64 {
        self.a_dof.unwrap_or(s as f64 + 2.0)
    }

    pub fn validate(&self, s: usize) -> Result<()> {
        if !(self.tau_eta2 > 0.0 && self.tau_b2 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "prior variances must be positive (got {}, {})",
                self.tau_eta2, self.tau_b2
            )));
        }
        let dof = self.a_dof_for(s);
        if !(dof > s as f64 - 1.0) {
            return Err(Error::InvalidConfig(format!(
                "inverse-Wishart degrees of freedom must exceed s - 1 = {} (got {dof})",
                s as f64 - 1.0
            )));
        }
        let scale = self.a_scale.to_matrix(s)?;
        cholesky(&scale, "baseline covariance prior scale").map(|_| ())
    }
}

/// One state of the sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovRegState {
    /// Mean coefficients, `q × s`.
    pub eta: DMatrix<f64>,
    /// Covariance coefficients, each `s × q`.
    pub b: Vec<DMatrix<f64>>,
    /// Baseline covariance, `s × s`.
    pub a: DMatrix<f64>,
    /// Latent factors, `n × K`.
    pub gamma: DMatrix<f64>,
    pub hyper: CovRegHyper,
}

impl CovRegState {
    /// A deterministic starting state: least-squares mean (ridge-stabilized),
    /// zero covariance coefficients and `A` equal to the residual covariance.
    pub fn initial(z: &DMatrix<f64>, x: &DMatrix<f64>, k: usize, hyper: CovRegHyper) -> Result<Self> {
        let (n, s) = z.shape();
        let q = x.ncols();
        if x.nrows() != n {
            return Err(Error::dims("CovRegState::initial", format!("X with {n} rows"), x.nrows()));
        }
        if s == 0 {
            return Err(Error::InvalidConfig("projected dimension must be positive".into()));
        }
        hyper.validate(s)?;
        let eta = if hyper.estimate_mean && q > 0 {
            let gram = x.tr_mul(x) + DMatrix::identity(q, q) / hyper.tau_eta2;
            cholesky(&gram, "XᵀX + ridge")?.solve(&x.tr_mul(z))
        } else {
            DMatrix::zeros(q, s)
        };
        let resid = z - x * &eta;
        let scale = hyper.a_scale.to_matrix(s)?;
        let a = symmetrize(&((resid.tr_mul(&resid) + scale) / (n as f64 + 1.0)));
        Ok(Self {
            eta,
            b: vec![DMatrix::zeros(s, q); k],
            a,
            gamma: DMatrix::zeros(n, k),
            hyper,
        })
    }

    pub fn s(&self) -> usize {
        self.a.nrows()
    }

    pub fn q(&self) -> usize {
        self.eta.nrows()
    }

    pub fn k(&self) -> usize {
        self.b.len()
    }

    fn check(&self, z: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<()> {
        let (n, s) = z.shape();
        let q = x.ncols();
        if x.nrows() != n {
            return Err(Error::dims("covariance regression X", format!("{n} rows"), x.nrows()));
        }
        let k = self.k();
        let ok = self.eta.shape() == (q, s)
            && self.a.shape() == (s, s)
            && self.gamma.shape() == (n, k)
            && self.b.iter().all(|b| b.shape() == (s, q));
        if !ok {
            return Err(Error::dims(
                "covariance regression state",
                format!("(n, q, s, K) = ({n}, {q}, {s}, {k})"),
                format!(
                    "eta {:?}, A {:?}, gamma {:?}",
                    self.eta.shape(),
                    self.a.shape(),
                    self.gamma.shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn psi(&self, x: &[f64]) -> DMatrix<f64> {
        psi_of_x(&self.b, &self.a, x)
    }
}

/// `Ψ(x) = Σ_k (B_k x)(B_k x)ᵀ + A`.
pub fn psi_of_x(b: &[DMatrix<f64>], a: &DMatrix<f64>, x: &[f64]) -> DMatrix<f64> {
    let xv = DVector::from_column_slice(x);
    let mut psi = a.clone();
    for bk in b {
        let bx = bk * &xv;
        psi.ger(1.0, &bx, &bx, 1.0);
    }
    symmetrize(&psi)
}

fn chol_with_jitter(m: &DMatrix<f64>, what: &'static str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    match cholesky(m, what) {
        Ok(c) => Ok(c),
        Err(_) => {
            let d = m.nrows();
            cholesky(&(m + DMatrix::identity(d, d) * JITTER), what)
                .map_err(|_| Error::Numerical(format!("{what} is not positive definite even after jitter")))
        }
    }
}

/// Draw from `N(P⁻¹ b, P⁻¹)` given the precision `P` and linear term `b`.
fn draw_gaussian_canonical<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    what: &'static str,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = chol_with_jitter(precision, what)?;
    let mean = chol.solve(linear);
    let g = standard_normal(rng, linear.len(), 1).column(0).into_owned();
    // L Lᵀ = P, so L⁻ᵀ g has covariance P⁻¹
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&g)
        .ok_or_else(|| Error::Numerical(format!("{what}: triangular solve failed")))?;
    Ok(mean + noise)
}

/// Draw `W ~ Wishart(Σ, ν)` (mean `νΣ`) via the Bartlett decomposition,
/// given the lower Cholesky factor of `Σ`.
pub fn sample_wishart_from_chol<R: Rng + ?Sized>(sigma_chol: &DMatrix<f64>, dof: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let d = sigma_chol.nrows();
    if !(dof > d as f64 - 1.0) {
        return Err(Error::InvalidConfig(format!("Wishart degrees of freedom {dof} must exceed {}", d as f64 - 1.0)));
    }
    let mut t = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(dof - i as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        t[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            t[(i, j)] = rng.sample(rand_distr::StandardNormal);
        }
    }
    let lt = sigma_chol * t;
    Ok(symmetrize(&(&lt * lt.transpose())))
}

/// Draw `W ~ IW(S, ν)`, the inverse-Wishart with density proportional to
/// `|W|^{-(ν+d+1)/2} etr(−½ S W⁻¹)` and mean `S/(ν − d − 1)`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(scale: &DMatrix<f64>, dof: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let scale_inv = inv_spd(scale, "inverse-Wishart scale")?;
    let l = chol_with_jitter(&scale_inv, "inverse-Wishart scale inverse")?.l();
    let w = sample_wishart_from_chol(&l, dof, rng)?;
    inv_spd(&w, "Wishart draw").map_err(|_| Error::Numerical("Wishart draw is singular".into()))
}

/// Design row `u_i = [x_i; γ_i1 x_i; …; γ_iK x_i]` (the `x_i` block is
/// dropped when the mean is fixed at zero).
fn design_matrix(x: &DMatrix<f64>, gamma: &DMatrix<f64>, with_mean: bool) -> DMatrix<f64> {
    let (n, q) = x.shape();
    let k = gamma.ncols();
    let offset = if with_mean { q } else { 0 };
    let mut u = DMatrix::zeros(n, offset + k * q);
    if with_mean {
        u.columns_mut(0, q).copy_from(x);
    }
    for kk in 0..k {
        for j in 0..q {
            for i in 0..n {
                u[(i, offset + kk * q + j)] = gamma[(i, kk)] * x[(i, j)];
            }
        }
    }
    u
}

/// Draw `W` (`m × s`) with `vec(W) ~ N(P⁻¹ vec(UᵀZA⁻¹), P⁻¹)`,
/// `P = A⁻¹ ⊗ UᵀU + I ⊗ I/d`. Rotating by the eigenvectors `Q` of `A`
/// decouples the columns of `WQ`, each with precision `UᵀU/λ_j + I/d`.
fn draw_coefficients_rotated<R: Rng + ?Sized>(
    utu: &DMatrix<f64>,
    utz: &DMatrix<f64>,
    a: &DMatrix<f64>,
    prior_var: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (m, s) = utz.shape();
    let (lambda, q) = crate::linalg::sym_eigen_desc(a);
    if !(lambda[s - 1] > 0.0) {
        return Err(Error::NotPositiveDefinite("baseline covariance"));
    }
    let utz_q = utz * &q;
    let mut rotated = DMatrix::zeros(m, s);
    for j in 0..s {
        let precision = utu / lambda[j] + DMatrix::identity(m, m) / prior_var;
        let linear = utz_q.column(j) / lambda[j];
        let draw = draw_gaussian_canonical(&precision, &linear, "coefficient precision", rng)?;
        rotated.set_column(j, &draw);
    }
    Ok(rotated * q.transpose())
}

/// One full sweep of the Gibbs sampler.
pub fn gibbs_step<R: Rng + ?Sized>(state: &CovRegState, z: &DMatrix<f64>, x: &DMatrix<f64>, rng: &mut R) -> Result<CovRegState> {
    state.check(z, x)?;
    let (n, s) = z.shape();
    let q = x.ncols();
    let k = state.k();
    let hyper = &state.hyper;
    let mut next = state.clone();

    // latent factors
    let a_inv = inv_spd(&state.a, "baseline covariance")?;
    if k > 0 {
        let mean_part = x * &state.eta;
        for i in 0..n {
            let xi = x.row(i).transpose();
            let mut w = DMatrix::zeros(s, k);
            for (kk, bk) in state.b.iter().enumerate() {
                w.set_column(kk, &(bk * &xi));
            }
            let r = (z.row(i) - mean_part.row(i)).transpose();
            let wt_ainv = w.tr_mul(&a_inv);
            let precision = symmetrize(&(DMatrix::identity(k, k) + &wt_ainv * &w));
            let linear = wt_ainv * r;
            let draw = draw_gaussian_canonical(&precision, &linear, "latent factor precision", rng)?;
            next.gamma.row_mut(i).copy_from(&draw.transpose());
        }
    }

    // stacked coefficients Θᵀ = [η; B_1ᵀ; …; B_Kᵀ]
    let with_mean = hyper.estimate_mean;
    let u = design_matrix(x, &next.gamma, with_mean);
    let m = u.ncols();
    let theta_t = if m > 0 {
        let utu = u.tr_mul(&u);
        let prior_var: Vec<f64> = (0..m)
            .map(|j| if with_mean && j < q { hyper.tau_eta2 } else { hyper.tau_b2 })
            .collect();
        if prior_var.iter().all(|&v| v == prior_var[0]) {
            draw_coefficients_rotated(&utu, &u.tr_mul(z), &state.a, prior_var[0], rng)?
        } else {
            let prior_prec = DMatrix::from_diagonal(&DVector::from_iterator(m, prior_var.iter().map(|v| 1.0 / v)));
            let precision = symmetrize(&(a_inv.kronecker(&utu) + DMatrix::identity(s, s).kronecker(&prior_prec)));
            let rhs = u.tr_mul(z) * &a_inv;
            let linear = DVector::from_column_slice(rhs.as_slice());
            let draw = draw_gaussian_canonical(&precision, &linear, "coefficient precision", rng)?;
            DMatrix::from_column_slice(m, s, draw.as_slice())
        }
    } else {
        DMatrix::zeros(0, s)
    };
    let offset = if with_mean { q } else { 0 };
    next.eta = if with_mean { theta_t.rows(0, q).into_owned() } else { DMatrix::zeros(q, s) };
    for (kk, bk) in next.b.iter_mut().enumerate() {
        *bk = theta_t.rows(offset + kk * q, q).transpose();
    }

    // baseline covariance
    let resid = if m > 0 { z - &u * &theta_t } else { z.clone() };
    let scale = hyper.a_scale.to_matrix(s)? + resid.tr_mul(&resid);
    next.a = sample_inverse_wishart(&symmetrize(&scale), hyper.a_dof_for(s) + n as f64, rng)?;
    Ok(next)
}

/// One retained draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovRegDraw {
    pub eta: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub a: DMatrix<f64>,
    /// Sweep index (1-based) within the chain that produced the draw.
    pub iteration: usize,
    pub chain: usize,
    /// Log posterior density up to a constant, with latent factors integrated out.
    pub log_posterior: f64,
}

impl CovRegDraw {
    pub fn psi(&self, x: &[f64]) -> DMatrix<f64> {
        psi_of_x(&self.b, &self.a, x)
    }

    /// Mean `x η` of the projected observation at `x`.
    pub fn mean(&self, x: &[f64]) -> DVector<f64> {
        self.eta.tr_mul(&DVector::from_column_slice(x))
    }
}

/// Posterior draws pooled over chains, plus each chain's final state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CovRegSamples {
    pub draws: Vec<CovRegDraw>,
    pub last_states: Vec<CovRegState>,
}

impl CovRegSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Concatenate chains in order.
    pub fn pooled(chains: Vec<CovRegSamples>) -> Self {
        let mut out = CovRegSamples::default();
        for c in chains {
            out.draws.extend(c.draws);
            out.last_states.extend(c.last_states);
        }
        out
    }

    pub fn s(&self) -> Option<usize> {
        self.draws.first().map(|d| d.a.nrows())
    }
}

/// Log density of the data with latent factors integrated out.
pub fn log_likelihood(eta: &DMatrix<f64>, b: &[DMatrix<f64>], a: &DMatrix<f64>, z: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<f64> {
    let (n, s) = z.shape();
    let k = b.len();
    let mean = x * eta;
    let a_chol = cholesky(a, "baseline covariance")?;
    let a_logdet = a_chol.ln_determinant();
    let norm_const = s as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut total = Vec::with_capacity(n);
    for i in 0..n {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        let r = (z.row(i) - mean.row(i)).transpose();
        let (quad, logdet) = if k < s {
            // matrix determinant lemma and Woodbury on Ψ = A + WWᵀ
            let w = factor_loadings(b, &xi, s);
            let c = a_chol.solve(&w);
            let inner = cholesky(&(DMatrix::identity(k, k) + w.tr_mul(&c)), "Woodbury capacitance")?;
            let ctr = c.tr_mul(&r);
            let quad = r.dot(&a_chol.solve(&r)) - ctr.dot(&inner.solve(&ctr));
            (quad, a_logdet + inner.ln_determinant())
        } else {
            let chol = cholesky(&psi_of_x(b, a, &xi), "Ψ(x)")?;
            (r.dot(&chol.solve(&r)), chol.ln_determinant())
        };
        total.push(-0.5 * (quad + logdet + norm_const));
    }
    Ok(crate::linalg::pairwise_sum(&total))
}

fn log_posterior(state: &CovRegState, z: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<f64> {
    let hyper = &state.hyper;
    let s = state.s();
    let mut lp = log_likelihood(&state.eta, &state.b, &state.a, z, x)?;
    if hyper.estimate_mean {
        lp -= 0.5 * state.eta.norm_squared() / hyper.tau_eta2;
    }
    lp -= 0.5 * state.b.iter().map(|b| b.norm_squared()).sum::<f64>() / hyper.tau_b2;
    let scale = hyper.a_scale.to_matrix(s)?;
    let a_inv = inv_spd(&state.a, "baseline covariance")?;
    lp -= 0.5 * (hyper.a_dof_for(s) + s as f64 + 1.0) * logdet_spd(&state.a, "baseline covariance")?;
    lp -= 0.5 * (scale.component_mul(&a_inv)).sum();
    Ok(lp)
}

/// Number of draws retained by `sample_posterior` for the given schedule.
pub fn retained_draws(n_iter: usize, burn: usize, thin: usize) -> Result<usize> {
    if thin == 0 {
        return Err(Error::InvalidConfig("thin must be at least 1".into()));
    }
    if n_iter <= burn {
        return Err(Error::EmptySamples("n_iter must exceed burn"));
    }
    Ok((n_iter - burn).div_ceil(thin))
}

/// Run one chain for `n_iter` sweeps, discarding the first `burn` and
/// keeping every `thin`-th sweep after that.
pub fn sample_posterior<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    init: &CovRegState,
    n_iter: usize,
    burn: usize,
    thin: usize,
    rng: &mut R,
) -> Result<CovRegSamples> {
    sample_chain(z, x, init, n_iter, burn, thin, 0, rng)
}

#[allow(clippy::too_many_arguments)]
fn sample_chain<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    init: &CovRegState,
    n_iter: usize,
    burn: usize,
    thin: usize,
    chain: usize,
    rng: &mut R,
) -> Result<CovRegSamples> {
    let capacity = retained_draws(n_iter, burn, thin)?;
    init.check(z, x)?;
    let mut state = init.clone();
    let mut draws = Vec::with_capacity(capacity);
    for it in 0..n_iter {
        state = gibbs_step(&state, z, x, rng)?;
        if it >= burn && (it - burn) % thin == 0 {
            draws.push(CovRegDraw {
                eta: state.eta.clone(),
                b: state.b.clone(),
                a: state.a.clone(),
                iteration: it + 1,
                chain,
                log_posterior: log_posterior(&state, z, x)?,
            });
        }
    }
    Ok(CovRegSamples {
        draws,
        last_states: vec![state],
    })
}

/// MCMC schedule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn: usize,
    pub thin: usize,
    pub chains: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 2000,
            burn: 1000,
            thin: 1,
            chains: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidConfig("chains must be at least 1".into()));
        }
        retained_draws(self.n_iter, self.burn, self.thin).map(|_| ())
    }
}

/// Random stream for chain `chain` of sampling round `round` under `seed`.
pub fn chain_rng(seed: u64, round: u32, chain: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((round as u64) << 32) | chain as u64);
    rng
}

/// Run `mcmc.chains` independent chains (in parallel) and pool them.
/// `inits` holds one starting state per chain, or a single state shared by all.
pub fn sample_chains(z: &DMatrix<f64>, x: &DMatrix<f64>, inits: &[CovRegState], mcmc: &McmcConfig, seed: u64) -> Result<CovRegSamples> {
    sample_chains_round(z, x, inits, mcmc, seed, 0)
}

/// As [`sample_chains`], drawing from the streams reserved for `round`.
pub fn sample_chains_round(
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    inits: &[CovRegState],
    mcmc: &McmcConfig,
    seed: u64,
    round: u32,
) -> Result<CovRegSamples> {
    mcmc.validate()?;
    if inits.is_empty() || (inits.len() != 1 && inits.len() != mcmc.chains) {
        return Err(Error::dims("sample_chains initial states", format!("1 or {}", mcmc.chains), inits.len()));
    }
    let runs: Vec<Result<CovRegSamples>> = (0..mcmc.chains)
        .into_par_iter()
        .map(|c| {
            let init = if inits.len() == 1 { &inits[0] } else { &inits[c] };
            let mut rng = chain_rng(seed, round, c as u32);
            sample_chain(z, x, init, mcmc.n_iter, mcmc.burn, mcmc.thin, c, &mut rng)
        })
        .collect();
    Ok(CovRegSamples::pooled(runs.into_iter().collect::<Result<Vec<_>>>()?))
}

/// `Ψ(x)⁻¹`. When `K < s` this uses the Woodbury identity
/// `A⁻¹ − C(I + WᵀC)⁻¹Cᵀ` with `W = [B_1x, …, B_Kx]` and `C = A⁻¹W`;
/// otherwise it inverts `Ψ(x)` directly.
pub fn precision_of_x(b: &[DMatrix<f64>], a: &DMatrix<f64>, a_inv: &DMatrix<f64>, x: &[f64]) -> Result<DMatrix<f64>> {
    let k = b.len();
    let s = a_inv.nrows();
    if k == 0 {
        return Ok(a_inv.clone());
    }
    if k >= s {
        return inv_spd(&psi_of_x(b, a, x), "Ψ(x) draw");
    }
    let w = factor_loadings(b, x, s);
    let c = a_inv * &w;
    let inner = DMatrix::identity(k, k) + w.tr_mul(&c);
    let inner_inv = inv_spd(&inner, "Woodbury capacitance")?;
    Ok(symmetrize(&(a_inv - &c * inner_inv * c.transpose())))
}

/// `[B_1x, …, B_Kx]` as an `s × K` matrix.
fn factor_loadings(b: &[DMatrix<f64>], x: &[f64], s: usize) -> DMatrix<f64> {
    let xv = DVector::from_column_slice(x);
    let mut w = DMatrix::zeros(s, b.len());
    for (kk, bk) in b.iter().enumerate() {
        w.set_column(kk, &(bk * &xv));
    }
    w
}

fn draw_precisions(samples: &CovRegSamples) -> Result<Vec<DMatrix<f64>>> {
    samples.draws.iter().map(|d| inv_spd(&d.a, "baseline covariance draw")).collect()
}

/// Posterior mean of `Ψ(x)⁻¹` over the draws.
pub fn mean_precision(samples: &CovRegSamples, x: &[f64]) -> Result<DMatrix<f64>> {
    let a_inv = draw_precisions(samples)?;
    mean_precision_with(samples, &a_inv, x)
}

fn mean_precision_with(samples: &CovRegSamples, a_inv: &[DMatrix<f64>], x: &[f64]) -> Result<DMatrix<f64>> {
    let s = samples.s().ok_or(Error::EmptySamples("posterior samples"))?;
    let mut acc = DMatrix::zeros(s, s);
    for (d, ai) in samples.draws.iter().zip(a_inv) {
        acc += precision_of_x(&d.b, &d.a, ai, x)?;
    }
    Ok(symmetrize(&(acc / samples.len() as f64)))
}

/// [`mean_precision`] at each row of `x`, sharing the per-draw work.
pub fn mean_precisions(samples: &CovRegSamples, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    samples.s().ok_or(Error::EmptySamples("posterior samples"))?;
    let a_inv = draw_precisions(samples)?;
    (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            mean_precision_with(samples, &a_inv, &xi)
        })
        .collect()
}

/// Posterior mean of `Ψ(x)` over the draws.
pub fn mean_covariance(samples: &CovRegSamples, x: &[f64]) -> Result<DMatrix<f64>> {
    let s = samples.s().ok_or(Error::EmptySamples("posterior samples"))?;
    let mut acc = DMatrix::zeros(s, s);
    for d in &samples.draws {
        acc += d.psi(x);
    }
    Ok(symmetrize(&(acc / samples.len() as f64)))
}

/// Per-observation moments `M_i = mean(x_i η Ψ(x_i)⁻¹)` and `K_i = mean(Ψ(x_i)⁻¹)`.
pub fn posterior_moments(samples: &CovRegSamples, x: &DMatrix<f64>) -> Result<PosteriorMoments> {
    let s = samples.s().ok_or(Error::EmptySamples("posterior samples"))?;
    let n = x.nrows();
    let count = samples.len() as f64;
    let a_inv = draw_precisions(samples)?;
    let rows: Vec<Result<(DVector<f64>, DMatrix<f64>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let mut m = DVector::zeros(s);
            let mut k = DMatrix::zeros(s, s);
            for (d, ai) in samples.draws.iter().zip(&a_inv) {
                let prec = precision_of_x(&d.b, &d.a, ai, &xi)?;
                m += prec.tr_mul(&d.mean(&xi));
                k += prec;
            }
            Ok((m / count, symmetrize(&(k / count))))
        })
        .collect();
    let mut m = DMatrix::zeros(n, s);
    let mut k = Vec::with_capacity(n);
    for (i, r) in rows.into_iter().enumerate() {
        let (mi, ki) = r?;
        m.row_mut(i).copy_from(&mi.transpose());
        k.push(ki);
    }
    Ok(PosteriorMoments { m, k })
}
