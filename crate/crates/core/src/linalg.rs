//! Small dense linear-algebra helpers shared by the estimation modules.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite(what));
    }
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite(what))
}

/// log-determinant of a symmetric positive definite matrix.
pub fn logdet_spd(m: &DMatrix<f64>, what: &'static str) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(cholesky(m, what)?.ln_determinant())
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn inv_spd(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(m, what)?.inverse()))
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (columns of the returned matrix follow the same order).
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Leading `k` right singular vectors of `m` as the columns of a `ncols × k`
/// matrix, together with all singular values in descending order.
///
/// When `m` has fewer than `k` singular directions the remaining columns are
/// left empty; callers complete them with [`complete_orthonormal`].
pub fn top_right_singular_vectors(m: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let p = m.ncols();
    if m.nrows() == 0 || p == 0 {
        return (DMatrix::zeros(p, 0), DVector::zeros(0));
    }
    let svd = SVD::new(m.clone(), false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let take = k.min(v_t.nrows());
    (v_t.rows(0, take).transpose(), svd.singular_values)
}

/// Extend the orthonormal columns of `q` to `target` orthonormal columns by
/// Gram-Schmidt against the standard basis vectors, in index order.
pub fn complete_orthonormal(q: &DMatrix<f64>, target: usize) -> DMatrix<f64> {
    let p = q.nrows();
    let mut cols: Vec<DVector<f64>> = q.column_iter().map(|c| c.into_owned()).collect();
    let mut j = 0;
    while cols.len() < target && j < p {
        let mut e = DVector::zeros(p);
        e[j] = 1.0;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&e);
                e.axpy(-proj, c, 1.0);
            }
        }
        let norm = e.norm();
        if norm > 1e-8 {
            cols.push(e / norm);
        }
        j += 1;
    }
    DMatrix::from_columns(&cols)
}

/// Matrix with iid standard normal entries.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // column-major fill order keeps draws reproducible across nalgebra versions
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Grassmann projector distance `‖V₁V₁ᵀ − V₂V₂ᵀ‖_F`, computed without
/// materialising the `p × p` projectors.
pub fn projector_distance(v1: &DMatrix<f64>, v2: &DMatrix<f64>) -> f64 {
    // ‖P1 − P2‖² = s1 + s2 − 2‖V1ᵀV2‖²
    let cross = v1.transpose() * v2;
    let sq = v1.ncols() as f64 + v2.ncols() as f64 - 2.0 * cross.norm_squared();
    sq.max(0.0).sqrt()
}

/// Pairwise (cascade) summation: bit-stable and more accurate than a fold.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
