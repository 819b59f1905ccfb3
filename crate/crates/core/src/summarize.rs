//! Posterior summaries of a fitted envelope: a basis rotated to contrast two
//! covariate settings, per-draw leading eigenvalue and orientation on a pair
//! of rotated coordinates, and biplot loadings.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, sym_eigen_desc};
use crate::mcem::EnvelopeFit;
use crate::stiefel::StiefelBasis;

const ZERO_TOL: f64 = 1e-12;

/// Eigenvectors of `Ψ_a − Ψ_b` as columns, by descending eigenvalue, each
/// with its first nonzero entry positive.
pub fn contrast_rotation(psi_a: &DMatrix<f64>, psi_b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if psi_a.shape() != psi_b.shape() || !psi_a.is_square() {
        return Err(Error::dims("contrast_rotation", format!("{:?}", psi_a.shape()), format!("{:?}", psi_b.shape())));
    }
    let diff = psi_a - psi_b;
    let scale = max_abs(psi_a).max(max_abs(psi_b)).max(1.0);
    if max_abs(&diff) <= ZERO_TOL * scale {
        return Err(Error::InvalidConfig("contrast has no covariance signal".into()));
    }
    let (_, mut r) = sym_eigen_desc(&diff);
    for mut col in r.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|v| v.abs() > ZERO_TOL) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    Ok(r)
}

/// `(Ṽ, R)` with `R` from [`contrast_rotation`] on the posterior mean
/// projected covariances at `x_a` and `x_b`, and `Ṽ = V̂R`.
pub fn rotate_to_contrast(fit: &EnvelopeFit, x_a: &[f64], x_b: &[f64]) -> Result<(StiefelBasis, DMatrix<f64>)> {
    if x_a == x_b {
        return Err(Error::InvalidConfig("contrast has no covariance signal (identical covariate vectors)".into()));
    }
    let psi_a = fit.projected_mean_covariance(x_a)?;
    let psi_b = fit.projected_mean_covariance(x_b)?;
    let r = contrast_rotation(&psi_a, &psi_b)?;
    Ok((fit.basis.rotate(&r)?, r))
}

/// Leading eigenvalue and eigenvector orientation of a symmetric `2 × 2`
/// matrix. The angle is measured from the first axis and lies in `[−π/2, π/2)`.
pub fn leading_eigen_2x2(m: &DMatrix<f64>) -> (f64, f64) {
    let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let half_gap = 0.5 * (a - c);
    let lambda1 = 0.5 * (a + c) + half_gap.hypot(b);
    let mut angle = 0.5 * (2.0 * b).atan2(a - c);
    if angle >= FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    }
    (lambda1, angle)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSample {
    pub draw: usize,
    pub lambda1: f64,
    pub angle: f64,
}

fn check_dims(s: usize, dims: (usize, usize)) -> Result<()> {
    if dims.0 >= s || dims.1 >= s || dims.0 == dims.1 {
        return Err(Error::InvalidConfig(format!(
            "dims must be two distinct column indices below {s} (got {}, {})",
            dims.0, dims.1
        )));
    }
    Ok(())
}

fn restrict(m: &DMatrix<f64>, dims: (usize, usize)) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        2,
        2,
        &[m[(dims.0, dims.0)], m[(dims.0, dims.1)], m[(dims.1, dims.0)], m[(dims.1, dims.1)]],
    )
}

/// For every posterior draw, the leading eigenvalue and orientation of
/// `RᵀΨ(x)R` restricted to the coordinate pair `dims` (0-based).
pub fn eigen_summary(fit: &EnvelopeFit, rotation: &DMatrix<f64>, x: &[f64], dims: (usize, usize)) -> Result<Vec<EigenSample>> {
    let s = fit.s();
    if rotation.shape() != (s, s) {
        return Err(Error::dims("eigen_summary rotation", format!("{s}x{s}"), format!("{:?}", rotation.shape())));
    }
    check_dims(s, dims)?;
    if fit.samples.is_empty() {
        return Err(Error::EmptySamples("posterior samples"));
    }
    Ok(fit
        .samples
        .draws
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let rotated = rotation.tr_mul(&(d.psi(x) * rotation));
            let (lambda1, angle) = leading_eigen_2x2(&restrict(&rotated, dims));
            EigenSample { draw: i, lambda1, angle }
        })
        .collect())
}

/// Posterior mean `RᵀΨ(x)R` restricted to `dims`, as `(c11, c12, c22)`.
pub fn contour(fit: &EnvelopeFit, rotation: &DMatrix<f64>, x: &[f64], dims: (usize, usize)) -> Result<(f64, f64, f64)> {
    check_dims(fit.s(), dims)?;
    let mean = fit.projected_mean_covariance(x)?;
    let m = restrict(&rotation.tr_mul(&(mean * rotation)), dims);
    Ok((m[(0, 0)], m[(0, 1)], m[(1, 1)]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loading {
    /// 0-based feature (row) index.
    pub feature: usize,
    pub dim1: f64,
    pub dim2: f64,
    pub norm: f64,
}

/// The `top_m` rows of `basis` restricted to `dims`, by descending norm with
/// ties broken by feature index.
pub fn biplot_loadings(basis: &StiefelBasis, dims: (usize, usize), top_m: usize) -> Result<Vec<Loading>> {
    check_dims(basis.s(), dims)?;
    let v = basis.matrix();
    let mut rows: Vec<Loading> = (0..v.nrows())
        .map(|i| {
            let (a, b) = (v[(i, dims.0)], v[(i, dims.1)]);
            Loading {
                feature: i,
                dim1: a,
                dim2: b,
                norm: a.hypot(b),
            }
        })
        .collect();
    rows.sort_by(|x, y| y.norm.total_cmp(&x.norm).then(x.feature.cmp(&y.feature)));
    rows.truncate(top_m.min(v.nrows()));
    Ok(rows)
}
