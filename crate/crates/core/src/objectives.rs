//! Marginal log-likelihoods for the envelope basis `V` and their Euclidean
//! gradients.
//!
//! Every objective returns exactly the `V`-dependent terms written in its
//! doc comment; additive constants that do not depend on `V` are dropped.
//! The log-determinant and log-residual coefficients follow from the
//! normalizing constants of the conjugate inverse-Wishart / inverse-Gamma
//! integrals:
//!
//! | objective | coefficient |
//! |---|---|
//! | known projected parameters, `Ψ₀ ~ IW(U₀, ν₀)` | `c₀ = (n + ν₀)/2` |
//! | known projected parameters, `σ² ~ IG(α, κ)` | `c_r = n(p − s)/2 + α` |
//! | response envelope, material part | `c₁ = (n − q + ν₁)/2` |
//! | response envelope, immaterial part | `c₂ = (n + ν₀)/2` |
//! | shared subspace, group `k` | `c_k = (n_k + ν_k)/2` |
//!
//! For the response envelope, `ν₁` parameterizes the joint normal-inverse-
//! Wishart kernel `|Ψ₁|^{-(ν₁+s+1)/2}·etr(−½ηᵀΛ₀ηΨ₁⁻¹)`, i.e. the marginal
//! prior on `Ψ₁` is `IW(U₁, ν₁ − q)` and `η | Ψ₁ ~ MN(0, Λ₀⁻¹, Ψ₁)`.
//! Integrating `η` removes `q` degrees of freedom, which gives `c₁`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inv_spd, logdet_spd, pairwise_sum};
use crate::stiefel::{Objective, StiefelBasis};

/// Scale matrix of an inverse-Wishart (or matrix normal) prior.
///
/// Scales enter the objectives through congruences such as `Vᵀ U V`, so a
/// full matrix is given in ambient (`p × p`) coordinates; the isotropic
/// shorthand `u·I` is the same in every coordinate system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorScale {
    Isotropic(f64),
    Ambient(DMatrix<f64>),
}

impl Default for PriorScale {
    fn default() -> Self {
        PriorScale::Isotropic(1.0)
    }
}

impl PriorScale {
    /// `Bᵀ U B` for a basis `B` (`p × d`).
    pub fn project(&self, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            PriorScale::Isotropic(u) => Ok(basis.tr_mul(basis) * *u),
            PriorScale::Ambient(m) => {
                if m.nrows() != basis.nrows() || m.ncols() != basis.nrows() {
                    return Err(Error::dims(
                        "PriorScale::project",
                        format!("{0}x{0}", basis.nrows()),
                        format!("{}x{}", m.nrows(), m.ncols()),
                    ));
                }
                Ok(basis.tr_mul(&(m * basis)))
            }
        }
    }

    /// The scale as an explicit `dim × dim` matrix.
    pub fn to_matrix(&self, dim: usize) -> Result<DMatrix<f64>> {
        match self {
            PriorScale::Isotropic(u) => Ok(DMatrix::identity(dim, dim) * *u),
            PriorScale::Ambient(m) if m.shape() == (dim, dim) => Ok(m.clone()),
            PriorScale::Ambient(m) => Err(Error::dims(
                "PriorScale::to_matrix",
                format!("{dim}x{dim}"),
                format!("{}x{}", m.nrows(), m.ncols()),
            )),
        }
    }

    fn validate(&self, name: &str, allow_zero: bool) -> Result<()> {
        match self {
            PriorScale::Isotropic(u) if *u > 0.0 || (allow_zero && *u == 0.0) => Ok(()),
            PriorScale::Isotropic(u) => Err(Error::InvalidConfig(format!(
                "{name} must be {} (got {u})",
                if allow_zero { "nonnegative" } else { "positive" }
            ))),
            PriorScale::Ambient(m) => {
                let min = crate::linalg::min_eigenvalue(m);
                if min > 0.0 || (allow_zero && min >= -1e-12) {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "{name} is not positive {}definite",
                        if allow_zero { "semi-" } else { "" }
                    )))
                }
            }
        }
    }
}

/// Hyperparameters of the conjugate priors used by the closed-form objectives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub u0: PriorScale,
    pub nu0: f64,
    pub u1: PriorScale,
    pub nu1: f64,
    /// Prior precision (`q × q`) of the rows of the mean coefficients.
    pub lambda0: PriorScale,
    /// Shape of the inverse-Gamma prior on the isotropic noise variance.
    pub alpha: f64,
    /// Scale of the inverse-Gamma prior on the isotropic noise variance.
    pub kappa: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            u0: PriorScale::Isotropic(1.0),
            nu0: 1.0,
            u1: PriorScale::Isotropic(1.0),
            nu1: 1.0,
            lambda0: PriorScale::Isotropic(1e-2),
            alpha: 1.0,
            kappa: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        self.u0.validate("U0", false)?;
        self.u1.validate("U1", false)?;
        self.lambda0.validate("Lambda0", true)?;
        for (name, v) in [("nu0", self.nu0), ("nu1", self.nu1), ("alpha", self.alpha), ("kappa", self.kappa)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive (got {v})")));
            }
        }
        Ok(())
    }
}

/// Projected-data parameters `φ_{x_i}` (rows of `phi`) and `Ψ_{x_i}⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedParams {
    pub phi: DMatrix<f64>,
    pub psi_inv: Vec<DMatrix<f64>>,
}

/// Posterior moments feeding the M-step: rows `M_i = E[φ_{x_i} Ψ_{x_i}⁻¹]`
/// and `K_i = E[Ψ_{x_i}⁻¹]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorMoments {
    pub m: DMatrix<f64>,
    pub k: Vec<DMatrix<f64>>,
}

impl PosteriorMoments {
    /// Moments of a point mass at the given parameters.
    pub fn from_params(params: &ProjectedParams) -> Self {
        let mut m = DMatrix::zeros(params.phi.nrows(), params.phi.ncols());
        for (i, psi_inv) in params.psi_inv.iter().enumerate() {
            let row = params.phi.row(i) * psi_inv;
            m.row_mut(i).copy_from(&row);
        }
        Self {
            m,
            k: params.psi_inv.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.k.len()
    }

    pub fn s(&self) -> usize {
        self.m.ncols()
    }

    fn check(&self, n: usize, s: usize) -> Result<()> {
        if self.m.shape() != (n, s) || self.k.len() != n {
            return Err(Error::dims(
                "posterior moments",
                format!("{n} rows of width {s}"),
                format!("{} rows of width {} ({} K matrices)", self.m.nrows(), self.m.ncols(), self.k.len()),
            ));
        }
        if let Some(bad) = self.k.iter().find(|k| k.shape() != (s, s)) {
            return Err(Error::dims("posterior moments K_i", format!("{s}x{s}"), format!("{}x{}", bad.nrows(), bad.ncols())));
        }
        Ok(())
    }
}

fn check_basis(y: &DMatrix<f64>, v: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if v.nrows() != y.ncols() {
        return Err(Error::dims(context, format!("basis with {} rows", y.ncols()), format!("{} rows", v.nrows())));
    }
    if v.ncols() == 0 || v.ncols() >= y.ncols() {
        return Err(Error::InvalidConfig(format!(
            "{context}: need 1 <= s < p, got s={}, p={}",
            v.ncols(),
            y.ncols()
        )));
    }
    Ok(())
}

/// `Σ_i [−½ z_i K_i z_iᵀ + M_i z_iᵀ]` with `z_i` the rows of `Z = YV`.
fn projected_quadratic(z: &DMatrix<f64>, moments: &PosteriorMoments) -> f64 {
    let terms: Vec<f64> = (0..z.nrows())
        .map(|i| {
            let zi = z.row(i);
            let quad = (zi * &moments.k[i]).dot(&zi);
            -0.5 * quad + moments.m.row(i).dot(&zi)
        })
        .collect();
    pairwise_sum(&terms)
}

/// Gradient of [`projected_quadratic`]: `−Yᵀ W + Yᵀ M`, where row `i` of `W` is `z_i K_i`.
fn projected_quadratic_gradient(y: &DMatrix<f64>, z: &DMatrix<f64>, moments: &PosteriorMoments) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(z.nrows(), z.ncols());
    for i in 0..z.nrows() {
        let row = z.row(i) * &moments.k[i];
        w.row_mut(i).copy_from(&row);
    }
    y.tr_mul(&(&moments.m - w))
}

/// `½‖Y‖_F² − ½‖YV‖_F² + κ` given precomputed `‖Y‖_F²` and `Z = YV`.
fn residual_energy(y_norm_sq: f64, z: &DMatrix<f64>, kappa: f64) -> f64 {
    0.5 * y_norm_sq - 0.5 * z.norm_squared() + kappa
}

fn residual_coefficient(n: usize, p: usize, s: usize, alpha: f64) -> f64 {
    (n * (p - s)) as f64 / 2.0 + alpha
}

/// Marginal log-likelihood with known projected parameters and
/// `Ψ₀ ~ IW(U₀, ν₀)` integrated out:
///
/// `−½ Σ_i [y_i V Ψ_i⁻¹ Vᵀ y_iᵀ − 2 φ_i Ψ_i⁻¹ Vᵀ y_iᵀ] − (n + ν₀)/2 · log|V⊥ᵀ(YᵀY + U₀)V⊥|`.
pub fn general_marginal_loglik(
    y: &DMatrix<f64>,
    v: &StiefelBasis,
    vperp: &StiefelBasis,
    params: &ProjectedParams,
    u0: &PriorScale,
    nu0: f64,
) -> Result<f64> {
    let (n, p) = y.shape();
    check_basis(y, v.matrix(), "general_marginal_loglik")?;
    if vperp.p() != p || vperp.s() != p - v.s() {
        return Err(Error::dims("general_marginal_loglik V⊥", format!("{}x{}", p, p - v.s()), format!("{}x{}", vperp.p(), vperp.s())));
    }
    let cross = crate::linalg::max_abs(&v.matrix().tr_mul(vperp.matrix()));
    if cross > 1e-8 {
        return Err(Error::InvalidConfig(format!("V and V⊥ are not orthogonal (max |VᵀV⊥| = {cross:e})")));
    }
    let moments = PosteriorMoments::from_params(params);
    moments.check(n, v.s())?;
    let z = y * v.matrix();
    let yv = y * vperp.matrix();
    let scatter = yv.tr_mul(&yv) + u0.project(vperp.matrix())?;
    let logdet = logdet_spd(&scatter, "V⊥ᵀ(YᵀY + U0)V⊥")?;
    Ok(projected_quadratic(&z, &moments) - 0.5 * (n as f64 + nu0) * logdet)
}

/// [`general_marginal_loglik`] as a function of `V` alone, using
/// `log|V⊥ᵀ S V⊥| = log|S| + log|Vᵀ S⁻¹ V|` for `S = YᵀY + U₀`.
/// Materializes the `p × p` matrix `S`.
#[derive(Clone, Debug)]
pub struct GeneralObjective {
    y: DMatrix<f64>,
    moments: PosteriorMoments,
    s_inv: DMatrix<f64>,
    logdet_s: f64,
    c0: f64,
}

impl GeneralObjective {
    pub fn new(y: &DMatrix<f64>, params: &ProjectedParams, u0: &PriorScale, nu0: f64) -> Result<Self> {
        let (n, p) = y.shape();
        let moments = PosteriorMoments::from_params(params);
        moments.check(n, params.phi.ncols())?;
        let s_mat = y.tr_mul(y) + u0.to_matrix(p)?;
        let logdet_s = logdet_spd(&s_mat, "YᵀY + U0")?;
        Ok(Self {
            y: y.clone(),
            moments,
            s_inv: inv_spd(&s_mat, "YᵀY + U0")?,
            logdet_s,
            c0: (n as f64 + nu0) / 2.0,
        })
    }

    fn value_checked(&self, v: &DMatrix<f64>) -> Result<f64> {
        let z = &self.y * v;
        let inner = v.tr_mul(&(&self.s_inv * v));
        let logdet = logdet_spd(&inner, "VᵀS⁻¹V")?;
        Ok(projected_quadratic(&z, &self.moments) - self.c0 * (self.logdet_s + logdet))
    }

    fn gradient_checked(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let z = &self.y * v;
        let siv = &self.s_inv * v;
        let inner_inv = inv_spd(&v.tr_mul(&siv), "VᵀS⁻¹V")?;
        Ok(projected_quadratic_gradient(&self.y, &z, &self.moments) - (siv * inner_inv) * (2.0 * self.c0))
    }
}

impl Objective for GeneralObjective {
    fn value(&self, v: &DMatrix<f64>) -> f64 {
        self.value_checked(v).unwrap_or(f64::NAN)
    }
    fn gradient(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.gradient_checked(v).unwrap_or_else(|_| DMatrix::from_element(v.nrows(), v.ncols(), f64::NAN))
    }
}

/// Spiked-model marginal log-likelihood with known projected parameters and
/// `σ² ~ IG(α, κ)` integrated out:
///
/// `−½ Σ_i [y_i V Ψ_i⁻¹ Vᵀ y_iᵀ − 2 φ_i Ψ_i⁻¹ Vᵀ y_iᵀ] − (n(p−s)/2 + α) · log(½‖Y‖² − ½‖YV‖² + κ)`.
pub fn spiked_marginal_loglik(y: &DMatrix<f64>, v: &StiefelBasis, params: &ProjectedParams, alpha: f64, kappa: f64) -> Result<f64> {
    mstep_objective(y, v, &PosteriorMoments::from_params(params), alpha, kappa)
}

/// The M-step objective: the spiked marginal log-likelihood with
/// `(φ_i Ψ_i⁻¹, Ψ_i⁻¹)` replaced by posterior means `(M_i, K_i)`.
pub fn mstep_objective(y: &DMatrix<f64>, v: &StiefelBasis, moments: &PosteriorMoments, alpha: f64, kappa: f64) -> Result<f64> {
    MStepObjective::new(y, moments.clone(), alpha, kappa)?.value_checked(v.matrix())
}

/// Euclidean gradient of [`mstep_objective`]:
/// `−Σ_i y_iᵀ y_i V K_i + Σ_i y_iᵀ M_i + c_r YᵀYV / D`.
pub fn mstep_gradient(y: &DMatrix<f64>, v: &StiefelBasis, moments: &PosteriorMoments, alpha: f64, kappa: f64) -> Result<DMatrix<f64>> {
    MStepObjective::new(y, moments.clone(), alpha, kappa)?.gradient_checked(v.matrix())
}

/// [`mstep_objective`] packaged for the Stiefel optimizer. Never forms a
/// `p × p` matrix; each evaluation costs `O(nps + ns²)`.
#[derive(Clone, Debug)]
pub struct MStepObjective {
    y: DMatrix<f64>,
    y_norm_sq: f64,
    moments: PosteriorMoments,
    alpha: f64,
    kappa: f64,
}

impl MStepObjective {
    pub fn new(y: &DMatrix<f64>, moments: PosteriorMoments, alpha: f64, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha and kappa must be positive (got {alpha}, {kappa})")));
        }
        if moments.n() != y.nrows() {
            return Err(Error::dims("MStepObjective", format!("{} observations", y.nrows()), format!("{}", moments.n())));
        }
        Ok(Self {
            y: y.clone(),
            y_norm_sq: y.norm_squared(),
            moments,
            alpha,
            kappa,
        })
    }

    fn coefficient(&self, s: usize) -> f64 {
        residual_coefficient(self.y.nrows(), self.y.ncols(), s, self.alpha)
    }

    fn value_checked(&self, v: &DMatrix<f64>) -> Result<f64> {
        check_basis(&self.y, v, "mstep_objective")?;
        self.moments.check(self.y.nrows(), v.ncols())?;
        let z = &self.y * v;
        let d = residual_energy(self.y_norm_sq, &z, self.kappa);
        if !(d > 0.0) {
            return Err(Error::Numerical(format!("residual energy is not positive ({d})")));
        }
        Ok(projected_quadratic(&z, &self.moments) - self.coefficient(v.ncols()) * d.ln())
    }

    fn gradient_checked(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_basis(&self.y, v, "mstep_gradient")?;
        self.moments.check(self.y.nrows(), v.ncols())?;
        let z = &self.y * v;
        let d = residual_energy(self.y_norm_sq, &z, self.kappa);
        let ytz = self.y.tr_mul(&z);
        Ok(projected_quadratic_gradient(&self.y, &z, &self.moments) + ytz * (self.coefficient(v.ncols()) / d))
    }
}

impl Objective for MStepObjective {
    fn value(&self, v: &DMatrix<f64>) -> f64 {
        self.value_checked(v).unwrap_or(f64::NAN)
    }
    fn gradient(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.gradient_checked(v).unwrap_or_else(|_| DMatrix::from_element(v.nrows(), v.ncols(), f64::NAN))
    }
}

/// Ridge-regression scatter `A = (Y − XB_n)ᵀ(Y − XB_n) + B_nᵀΛ₀B_n` with
/// `B_n = (XᵀX + Λ₀)⁻¹XᵀY`.
pub fn response_envelope_scatter(y: &DMatrix<f64>, x: &DMatrix<f64>, lambda0: &PriorScale) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::dims("response envelope", format!("X with {} rows", y.nrows()), format!("{} rows", x.nrows())));
    }
    let q = x.ncols();
    if q == 0 {
        return Ok(y.tr_mul(y));
    }
    let lam = lambda0.to_matrix(q)?;
    let gram = x.tr_mul(x) + &lam;
    let chol = crate::linalg::cholesky(&gram, "XᵀX + Λ0").map_err(|_| {
        Error::Numerical("XᵀX + Λ0 is singular; use a positive definite Λ0".into())
    })?;
    let b_n = chol.solve(&x.tr_mul(y));
    let resid = y - x * &b_n;
    Ok(crate::linalg::symmetrize(&(resid.tr_mul(&resid) + b_n.tr_mul(&(lam * &b_n)))))
}

/// Response envelope marginal log-likelihood with `(Ψ₁, Ψ₀, η)` integrated out:
///
/// `−(n − q + ν₁)/2 · log|Vᵀ(A + U₁)V| − (n + ν₀)/2 · log|V⊥ᵀ(YᵀY + U₀)V⊥|`.
pub fn response_envelope_loglik(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    v: &StiefelBasis,
    vperp: &StiefelBasis,
    priors: &PriorConfig,
) -> Result<f64> {
    let (n, p) = y.shape();
    check_basis(y, v.matrix(), "response_envelope_loglik")?;
    if vperp.p() != p || vperp.s() != p - v.s() {
        return Err(Error::dims("response_envelope_loglik V⊥", format!("{}x{}", p, p - v.s()), format!("{}x{}", vperp.p(), vperp.s())));
    }
    let a = response_envelope_scatter(y, x, &priors.lambda0)?;
    let (c1, c2) = response_envelope_coefficients(n, x.ncols(), priors);
    let material = v.matrix().tr_mul(&(&a * v.matrix())) + priors.u1.project(v.matrix())?;
    let yv = y * vperp.matrix();
    let immaterial = yv.tr_mul(&yv) + priors.u0.project(vperp.matrix())?;
    Ok(-c1 * logdet_spd(&material, "Vᵀ(A + U1)V")? - c2 * logdet_spd(&immaterial, "V⊥ᵀ(YᵀY + U0)V⊥")?)
}

/// `(c₁, c₂) = ((n − q + ν₁)/2, (n + ν₀)/2)`.
pub fn response_envelope_coefficients(n: usize, q: usize, priors: &PriorConfig) -> (f64, f64) {
    (
        (n as f64 - q as f64 + priors.nu1) / 2.0,
        (n as f64 + priors.nu0) / 2.0,
    )
}

/// [`response_envelope_loglik`] as a function of `V` alone (the `V⊥` term is
/// rewritten through `S = YᵀY + U₀` as in [`GeneralObjective`]).
#[derive(Clone, Debug)]
pub struct ResponseEnvelopeObjective {
    a_plus_u1: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    logdet_s: f64,
    c1: f64,
    c2: f64,
}

impl ResponseEnvelopeObjective {
    pub fn new(y: &DMatrix<f64>, x: &DMatrix<f64>, priors: &PriorConfig) -> Result<Self> {
        let (n, p) = y.shape();
        let a = response_envelope_scatter(y, x, &priors.lambda0)?;
        let s_mat = y.tr_mul(y) + priors.u0.to_matrix(p)?;
        let (c1, c2) = response_envelope_coefficients(n, x.ncols(), priors);
        Ok(Self {
            a_plus_u1: a + priors.u1.to_matrix(p)?,
            logdet_s: logdet_spd(&s_mat, "YᵀY + U0")?,
            s_inv: inv_spd(&s_mat, "YᵀY + U0")?,
            c1,
            c2,
        })
    }

    fn value_checked(&self, v: &DMatrix<f64>) -> Result<f64> {
        let material = v.tr_mul(&(&self.a_plus_u1 * v));
        let inner = v.tr_mul(&(&self.s_inv * v));
        Ok(-self.c1 * logdet_spd(&material, "Vᵀ(A + U1)V")? - self.c2 * (self.logdet_s + logdet_spd(&inner, "VᵀS⁻¹V")?))
    }

    fn gradient_checked(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let av = &self.a_plus_u1 * v;
        let siv = &self.s_inv * v;
        let m_inv = inv_spd(&v.tr_mul(&av), "Vᵀ(A + U1)V")?;
        let i_inv = inv_spd(&v.tr_mul(&siv), "VᵀS⁻¹V")?;
        Ok((av * m_inv) * (-2.0 * self.c1) - (siv * i_inv) * (2.0 * self.c2))
    }
}

impl Objective for ResponseEnvelopeObjective {
    fn value(&self, v: &DMatrix<f64>) -> f64 {
        self.value_checked(v).unwrap_or(f64::NAN)
    }
    fn gradient(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.gradient_checked(v).unwrap_or_else(|_| DMatrix::from_element(v.nrows(), v.ncols(), f64::NAN))
    }
}

/// Inverse-Wishart prior `Ψ_k ~ IW(U_k, ν_k)` for one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPrior {
    pub u: PriorScale,
    pub nu: f64,
}

/// Shared-subspace (multi-group spiked covariance) marginal log-likelihood
/// with every `Ψ_k` and group noise variance `σ_k² ~ IG(α, κ)` integrated out:
///
/// `Σ_k [−(n_k + ν_k)/2 · log|Vᵀ(Y_kᵀY_k + U_k)V| − (n_k(p−s)/2 + α) · log(tr[(I − VVᵀ)Y_kᵀY_k]/2 + κ)]`.
pub fn shared_subspace_loglik(groups: &[DMatrix<f64>], v: &StiefelBasis, priors: &[GroupPrior], alpha: f64, kappa: f64) -> Result<f64> {
    SharedSubspaceObjective::new(groups, priors, alpha, kappa)?.value_checked(v.matrix())
}

#[derive(Clone, Debug)]
pub struct SharedSubspaceObjective {
    groups: Vec<SharedGroup>,
    p: usize,
    alpha: f64,
    kappa: f64,
}

#[derive(Clone, Debug)]
struct SharedGroup {
    scatter_plus_u: DMatrix<f64>,
    scatter: DMatrix<f64>,
    trace: f64,
    n: usize,
    nu: f64,
}

impl SharedSubspaceObjective {
    pub fn new(groups: &[DMatrix<f64>], priors: &[GroupPrior], alpha: f64, kappa: f64) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidConfig("shared subspace objective needs at least one group".into()));
        }
        if priors.len() != groups.len() {
            return Err(Error::dims("shared_subspace_loglik priors", groups.len(), priors.len()));
        }
        if !(kappa > 0.0) || !(alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha and kappa must be positive (got {alpha}, {kappa})")));
        }
        let p = groups[0].ncols();
        let mut out = Vec::with_capacity(groups.len());
        for (yk, prior) in groups.iter().zip(priors) {
            if yk.ncols() != p {
                return Err(Error::dims("shared_subspace_loglik group", format!("{p} columns"), yk.ncols()));
            }
            let scatter = yk.tr_mul(yk);
            out.push(SharedGroup {
                scatter_plus_u: &scatter + prior.u.to_matrix(p)?,
                trace: scatter.trace(),
                scatter,
                n: yk.nrows(),
                nu: prior.nu,
            });
        }
        Ok(Self { groups: out, p, alpha, kappa })
    }

    fn check(&self, v: &DMatrix<f64>) -> Result<()> {
        if v.nrows() != self.p || v.ncols() == 0 || v.ncols() >= self.p {
            return Err(Error::dims("shared_subspace_loglik basis", format!("{} x s with 1 <= s < {}", self.p, self.p), format!("{}x{}", v.nrows(), v.ncols())));
        }
        Ok(())
    }

    fn value_checked(&self, v: &DMatrix<f64>) -> Result<f64> {
        self.check(v)?;
        let s = v.ncols();
        let mut terms = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let c_k = (g.n as f64 + g.nu) / 2.0;
            let c_r = residual_coefficient(g.n, self.p, s, self.alpha);
            let sv = &g.scatter * v;
            let captured = v.dot(&sv);
            let d = (g.trace - captured) / 2.0 + self.kappa;
            let inner = v.tr_mul(&(&g.scatter_plus_u * v));
            terms.push(-c_k * logdet_spd(&inner, "Vᵀ(Y_kᵀY_k + U_k)V")? - c_r * d.ln());
        }
        Ok(pairwise_sum(&terms))
    }

    fn gradient_checked(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(v)?;
        let s = v.ncols();
        let mut grad = DMatrix::zeros(v.nrows(), s);
        for g in &self.groups {
            let c_k = (g.n as f64 + g.nu) / 2.0;
            let c_r = residual_coefficient(g.n, self.p, s, self.alpha);
            let sv = &g.scatter * v;
            let d = (g.trace - v.dot(&sv)) / 2.0 + self.kappa;
            let suv = &g.scatter_plus_u * v;
            let inner_inv = inv_spd(&v.tr_mul(&suv), "Vᵀ(Y_kᵀY_k + U_k)V")?;
            grad += (suv * inner_inv) * (-2.0 * c_k) + sv * (c_r / d);
        }
        Ok(grad)
    }
}

impl Objective for SharedSubspaceObjective {
    fn value(&self, v: &DMatrix<f64>) -> f64 {
        self.value_checked(v).unwrap_or(f64::NAN)
    }
    fn gradient(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.gradient_checked(v).unwrap_or_else(|_| DMatrix::from_element(v.nrows(), v.ncols(), f64::NAN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e1() -> StiefelBasis {
        StiefelBasis::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap()
    }

    fn unit_params(n: usize, s: usize) -> ProjectedParams {
        ProjectedParams {
            phi: DMatrix::zeros(n, s),
            psi_inv: vec![DMatrix::identity(s, s); n],
        }
    }

    #[test]
    fn spiked_no_residual() {
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let val = spiked_marginal_loglik(&y, &e1(), &unit_params(1, 1), 2.0, 1.0).unwrap();
        assert!((val + 0.5).abs() < 1e-15);
    }

    #[test]
    fn spiked_pure_residual() {
        let y = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let val = spiked_marginal_loglik(&y, &e1(), &unit_params(1, 1), 2.0, 1.0).unwrap();
        let expected = -(0.5 + 2.0) * 1.5f64.ln();
        assert!((val - expected).abs() < 1e-14);
        assert!((val + 1.01366).abs() < 1e-5);
    }

    #[test]
    fn general_first_term_collapses_to_projected_norm() {
        let y = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0, 0.7, 0.1, -0.4]);
        let v = StiefelBasis::identity(3, 1).unwrap();
        let vperp = v.complement().unwrap();
        let full = general_marginal_loglik(&y, &v, &vperp, &unit_params(3, 1), &PriorScale::Isotropic(1.0), 2.0).unwrap();
        let yv = &y * vperp.matrix();
        let logdet = (yv.tr_mul(&yv) + DMatrix::identity(2, 2)).determinant().ln();
        let first = full + (3.0 + 2.0) / 2.0 * logdet;
        let proj = (&y * v.matrix()).norm_squared();
        assert!((first + 0.5 * proj).abs() < 1e-12);
    }

    #[test]
    fn mstep_equals_spiked_for_point_mass() {
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0]);
        let v = StiefelBasis::identity(3, 1).unwrap();
        let params = ProjectedParams {
            phi: DMatrix::from_row_slice(2, 1, &[0.4, -0.2]),
            psi_inv: vec![DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 0.5)],
        };
        let a = spiked_marginal_loglik(&y, &v, &params, 1.5, 0.7).unwrap();
        let b = mstep_objective(&y, &v, &PosteriorMoments::from_params(&params), 1.5, 0.7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mstep_gradient_unit_moments_collapse() {
        let y = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0, 0.2, 0.2, 0.9]);
        let v = StiefelBasis::identity(3, 2).unwrap();
        let moments = PosteriorMoments {
            m: DMatrix::zeros(3, 2),
            k: vec![DMatrix::identity(2, 2); 3],
        };
        let (alpha, kappa) = (2.0, 1.0);
        let g = mstep_gradient(&y, &v, &moments, alpha, kappa).unwrap();
        let yty_v = y.tr_mul(&y) * v.matrix();
        let c_r = 3.0 * 1.0 / 2.0 + alpha;
        let d = 0.5 * y.norm_squared() - 0.5 * (&y * v.matrix()).norm_squared() + kappa;
        let expected = -&yty_v + &yty_v * (c_r / d);
        assert!(crate::linalg::max_abs(&(g - expected)) < 1e-12);
    }

    #[test]
    fn response_envelope_without_covariates_uses_gram() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.3, 0.7, 0.1]);
        let x = DMatrix::zeros(3, 1);
        let a = response_envelope_scatter(&y, &x, &PriorScale::Isotropic(1.0)).unwrap();
        assert!(crate::linalg::max_abs(&(a - y.tr_mul(&y))) < 1e-14);
    }

    #[test]
    fn response_envelope_singular_design_suggests_ridge() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.3, 0.7, 0.1]);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let err = response_envelope_scatter(&y, &x, &PriorScale::Isotropic(0.0)).unwrap_err();
        assert!(err.to_string().contains("Λ0"));
    }

    #[test]
    fn limit_coefficients_match_classic_ratio() {
        let priors = PriorConfig { nu0: 1e-12, nu1: 1e-12, ..Default::default() };
        let (c1, c2) = response_envelope_coefficients(50, 3, &priors);
        assert!((c1 / c2 - 47.0 / 50.0).abs() < 1e-12);
    }

    #[test]
    fn shared_subspace_requires_groups() {
        let v = StiefelBasis::identity(3, 1).unwrap();
        assert!(shared_subspace_loglik(&[], &v, &[], 1.0, 1.0).is_err());
    }

    #[test]
    fn shared_subspace_is_additive() {
        let y = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0, 0.2, 0.2, 0.9]);
        let v = StiefelBasis::identity(3, 1).unwrap();
        let prior = GroupPrior { u: PriorScale::Isotropic(1.0), nu: 3.0 };
        let one = shared_subspace_loglik(std::slice::from_ref(&y), &v, std::slice::from_ref(&prior), 2.0, 1.0).unwrap();
        let two = shared_subspace_loglik(&[y.clone(), y], &v, &[prior.clone(), prior], 2.0, 1.0).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn prior_config_validation() {
        assert!(PriorConfig::default().validate().is_ok());
        let bad = PriorConfig { kappa: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PriorConfig { u0: PriorScale::Isotropic(-1.0), ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
