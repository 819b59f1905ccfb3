//! Feasible optimization over the Stiefel manifold `{V ∈ ℝ^{p×s} : VᵀV = I}`.
//!
//! Iterates move along the Cayley curve
//!
//! ```text
//! Y(τ) = (I + τ/2·A)⁻¹ (I − τ/2·A) V,   A = G Vᵀ − V Gᵀ
//! ```
//!
//! which stays on the manifold for every τ. The `p × p` inverse is never
//! formed: writing `A = U Wᵀ` with `U = [G, V]`, `W = [V, −G]` the
//! Sherman-Morrison-Woodbury identity reduces each step to one `2s × 2s`
//! solve, so a step costs `O(ps² + s³)`.
//!
//! Step sizes come from Barzilai-Borwein proposals safeguarded by Armijo
//! backtracking (monotone unless a nonmonotone window is configured).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complete_orthonormal, max_abs, projector_distance};

/// Orthonormality tolerance enforced on every stored basis.
pub const FEASIBILITY_TOL: f64 = 1e-10;
/// Cayley iterates drifting further than this from orthonormal get re-orthonormalized.
const RETRACTION_DRIFT_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;
const MAX_TAU_HALVINGS: usize = 30;
const MAX_BACKTRACKS: usize = 60;

/// A `p × s` matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelBasis {
    matrix: DMatrix<f64>,
}

impl StiefelBasis {
    /// Wraps `matrix` after checking `1 ≤ s ≤ p` and `‖VᵀV − I‖_max < 1e-10`.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (p, s) = matrix.shape();
        if s == 0 || s > p {
            return Err(Error::InvalidConfig(format!(
                "Stiefel basis needs 1 <= s <= p, got p={p}, s={s}"
            )));
        }
        let resid = orthonormality_residual(&matrix);
        if !(resid < FEASIBILITY_TOL) {
            return Err(Error::Numerical(format!(
                "columns are not orthonormal (max |VᵀV − I| = {resid:e})"
            )));
        }
        Ok(Self { matrix })
    }

    /// The first `s` columns of the `p × p` identity.
    pub fn identity(p: usize, s: usize) -> Result<Self> {
        Self::new(DMatrix::identity(p, s))
    }

    /// A basis drawn uniformly from the Stiefel manifold (orthonormalized Gaussian).
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, p: usize, s: usize) -> Result<Self> {
        orthonormalize(&crate::linalg::standard_normal(rng, p, s))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn s(&self) -> usize {
        self.matrix.ncols()
    }

    /// Orthonormal basis of the orthogonal complement, `p × (p − s)`.
    pub fn complement(&self) -> Result<StiefelBasis> {
        let (p, s) = self.matrix.shape();
        if s == p {
            return Err(Error::InvalidConfig(
                "basis spans the whole space; complement is empty".into(),
            ));
        }
        let full = complete_orthonormal(&self.matrix, p);
        StiefelBasis::new(full.columns(s, p - s).into_owned())
    }

    /// `V R` for an orthogonal `s × s` matrix `R`; the span is unchanged.
    pub fn rotate(&self, r: &DMatrix<f64>) -> Result<StiefelBasis> {
        if r.shape() != (self.s(), self.s()) {
            return Err(Error::dims(
                "StiefelBasis::rotate",
                format!("{0}x{0}", self.s()),
                format!("{}x{}", r.nrows(), r.ncols()),
            ));
        }
        StiefelBasis::new(&self.matrix * r)
    }

    /// `‖V Vᵀ − W Wᵀ‖_F`.
    pub fn projector_distance(&self, other: &StiefelBasis) -> f64 {
        projector_distance(&self.matrix, &other.matrix)
    }
}

/// `max |VᵀV − I|`.
pub fn orthonormality_residual(v: &DMatrix<f64>) -> f64 {
    let s = v.ncols();
    max_abs(&(v.transpose() * v - DMatrix::<f64>::identity(s, s)))
}

/// Thin QR orthonormalization with the sign convention `diag(R) ≥ 0`.
///
/// Fails when the numerical rank (singular values above `1e-10·σ_max`) is
/// below the column count.
pub fn orthonormalize(m: &DMatrix<f64>) -> Result<StiefelBasis> {
    let (p, s) = m.shape();
    if s == 0 || s > p {
        return Err(Error::InvalidConfig(format!(
            "cannot orthonormalize a {p}x{s} matrix (need 1 <= s <= p)"
        )));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0f64, f64::max);
    let rank = sv.iter().filter(|&&x| smax > 0.0 && x > RANK_TOL * smax).count();
    if rank < s {
        return Err(Error::RankDeficient {
            rank,
            required: s,
            deficient: s - rank,
        });
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..s {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    StiefelBasis::new(q)
}

fn check_tangent_shape(v: &StiefelBasis, g: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if g.shape() != v.matrix.shape() {
        return Err(Error::dims(
            context,
            format!("{}x{}", v.p(), v.s()),
            format!("{}x{}", g.nrows(), g.ncols()),
        ));
    }
    Ok(())
}

/// `A V` with `A = G Vᵀ − V Gᵀ`; equal to `G − V GᵀV` since `VᵀV = I`.
pub fn riemannian_gradient(v: &StiefelBasis, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_tangent_shape(v, g, "riemannian_gradient")?;
    let vm = &v.matrix;
    Ok(g - vm * (g.transpose() * vm))
}

/// Point `Y(τ)` on the Cayley curve through `V` with direction matrix
/// `A = G Vᵀ − V Gᵀ`. `Y'(0) = −A V`, so `G` should be the Euclidean gradient
/// of a function being *minimized*.
pub fn cayley_retract(v: &StiefelBasis, g: &DMatrix<f64>, tau: f64) -> Result<StiefelBasis> {
    cayley_curve(v, g, tau).map(|(y, _)| y)
}

/// Like [`cayley_retract`] but also reports the step actually taken after
/// any halvings forced by a singular inner system.
pub fn cayley_curve(v: &StiefelBasis, g: &DMatrix<f64>, tau: f64) -> Result<(StiefelBasis, f64)> {
    check_tangent_shape(v, g, "cayley_retract")?;
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!("step size must be finite and >= 0, got {tau}")));
    }
    if tau == 0.0 {
        return Ok((v.clone(), 0.0));
    }
    let vm = &v.matrix;
    let s = v.s();
    let u = concat_columns(g, vm);
    let w = concat_columns(vm, &(-g));
    let wtu = w.transpose() * &u;
    let wtv = w.transpose() * vm;
    let eye = DMatrix::<f64>::identity(2 * s, 2 * s);

    let mut tau = tau;
    for _ in 0..=MAX_TAU_HALVINGS {
        let inner = &eye + &wtu * (0.5 * tau);
        if let Some(sol) = inner.lu().solve(&wtv) {
            if sol.iter().all(|x| x.is_finite()) {
                let y = vm - (&u * sol) * tau;
                let y = if orthonormality_residual(&y) > RETRACTION_DRIFT_TOL {
                    orthonormalize(&y)?.into_matrix()
                } else {
                    y
                };
                return Ok((StiefelBasis::new(y)?, tau));
            }
        }
        tau *= 0.5;
    }
    Err(Error::Numerical(format!(
        "Cayley inner system stayed singular after {MAX_TAU_HALVINGS} step halvings"
    )))
}

fn concat_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop once the Riemannian gradient norm `‖AV‖_F` drops below this.
    pub grad_tol: f64,
    /// First trial step, divided by `max(1, ‖AV‖_F)` on the first iteration.
    pub step_init: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    /// 0 = monotone Armijo; `m > 0` compares against the worst of the last `m + 1` values.
    pub nonmonotone_window: usize,
    pub barzilai_borwein: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-6,
            step_init: 1.0,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            nonmonotone_window: 0,
            barzilai_borwein: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.max_iters == 0 {
            return bad("optimizer max_iters must be positive");
        }
        if !(self.grad_tol > 0.0) {
            return bad("optimizer grad_tol must be positive");
        }
        if !(self.step_init > 0.0) || !self.step_init.is_finite() {
            return bad("optimizer step_init must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("optimizer armijo_c must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("optimizer backtrack_factor must lie in (0, 1)");
        }
        Ok(())
    }
}

/// A smooth function on `p × s` matrices together with its Euclidean gradient.
pub trait Objective: Sync {
    fn value(&self, v: &DMatrix<f64>) -> f64;
    fn gradient(&self, v: &DMatrix<f64>) -> DMatrix<f64>;
}

/// Adapts a pair of closures to [`Objective`].
pub struct FnObjective<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&DMatrix<f64>) -> f64 + Sync,
    G: Fn(&DMatrix<f64>) -> DMatrix<f64> + Sync,
{
    fn value(&self, v: &DMatrix<f64>) -> f64 {
        (self.value)(v)
    }
    fn gradient(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        (self.gradient)(v)
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub basis: StiefelBasis,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

impl OptimizeResult {
    pub fn value(&self) -> f64 {
        *self.trace.last().expect("trace always holds the starting value")
    }
}

/// Maximizes `objective` over the Stiefel manifold starting from `v0`.
pub fn maximize_on_stiefel<O: Objective + ?Sized>(
    objective: &O,
    v0: &StiefelBasis,
    cfg: &OptimizerConfig,
) -> Result<OptimizeResult> {
    cfg.validate()?;
    let mut x = v0.clone();
    let mut fx = objective.value(x.matrix());
    if !fx.is_finite() {
        return Err(Error::Numerical(format!("objective is not finite at the starting point ({fx})")));
    }
    // descent on F = −f
    let mut g = -objective.gradient(x.matrix());
    let mut rg = riemannian_gradient(&x, &g)?;
    let mut trace = vec![fx];
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let gnorm = rg.norm();
        if !gnorm.is_finite() {
            return Err(Error::Numerical("gradient is not finite".into()));
        }
        if gnorm < cfg.grad_tol {
            converged = true;
            break;
        }

        let mut tau = match (&prev, cfg.barzilai_borwein) {
            (Some((dx, dg)), true) => bb_step(dx, dg, it).unwrap_or(cfg.step_init),
            _ => cfg.step_init / gnorm.max(1.0),
        };

        let window_start = trace.len().saturating_sub(cfg.nonmonotone_window + 1);
        let f_ref = trace[window_start..].iter().copied().fold(f64::INFINITY, f64::min);
        // −dF/dτ at τ = 0 equals ½‖A‖_F² = ‖G‖² − tr((VᵀG)²)
        let vtg = x.matrix().transpose() * &g;
        let slope = (g.norm_squared() - (&vtg * &vtg).trace()).max(0.0);

        let mut nonfinite = 0;
        let mut backtracks = 0;
        let accepted = loop {
            let (y, tau_used) = cayley_curve(&x, &g, tau)?;
            let fy = objective.value(y.matrix());
            if !fy.is_finite() {
                nonfinite += 1;
                if nonfinite > MAX_TAU_HALVINGS {
                    return Err(Error::Numerical(
                        "objective stayed non-finite along the search curve".into(),
                    ));
                }
                tau = tau_used * cfg.backtrack_factor;
                continue;
            }
            if fy >= f_ref + cfg.armijo_c * tau_used * slope {
                break Some((y, fy));
            }
            backtracks += 1;
            if backtracks > MAX_BACKTRACKS {
                break None;
            }
            tau = tau_used * cfg.backtrack_factor;
        };

        let Some((y, fy)) = accepted else {
            log::debug!("line search stalled at iteration {it} (|grad| = {gnorm:e})");
            break;
        };
        let g_new = -objective.gradient(y.matrix());
        let rg_new = riemannian_gradient(&y, &g_new)?;
        prev = Some((y.matrix() - x.matrix(), &rg_new - &rg));
        x = y;
        fx = fy;
        g = g_new;
        rg = rg_new;
        trace.push(fx);
    }

    let grad_norm = rg.norm();
    if grad_norm < cfg.grad_tol {
        converged = true;
    }
    Ok(OptimizeResult {
        basis: x,
        trace,
        iterations,
        converged,
        grad_norm,
    })
}

/// Alternating Barzilai-Borwein step lengths.
fn bb_step(dx: &DMatrix<f64>, dg: &DMatrix<f64>, it: usize) -> Option<f64> {
    let sy = dx.dot(dg).abs();
    let tau = if it % 2 == 1 {
        dx.norm_squared() / sy
    } else {
        sy / dg.norm_squared()
    };
    (tau.is_finite() && tau > 0.0).then(|| tau.clamp(1e-20, 1e20))
}
