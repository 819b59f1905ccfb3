//! Sampler correctness checks shared by the module tests and the acceptance
//! suite.

#![allow(dead_code)]

use envreg::covreg::{gibbs_step, sample_inverse_wishart, sample_posterior, CovRegHyper, CovRegState};
use envreg::linalg::standard_normal;
use envreg::objectives::PriorScale;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn batch_means_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let len = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (grand, (var / batches as f64).sqrt())
}

/// Relative Frobenius error of the posterior mean of `A` over 20k draws of a
/// chain with no covariance terms and no mean, against the inverse-Wishart
/// posterior mean.
pub fn conjugate_mean_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, s) = (40, 3);
    let z = standard_normal(&mut rng, n, s) * 1.5;
    let x = DMatrix::zeros(n, 1);
    let hyper = CovRegHyper {
        estimate_mean: false,
        ..Default::default()
    };
    let init = CovRegState::initial(&z, &x, 0, hyper.clone()).unwrap();
    let samples = sample_posterior(&z, &x, &init, 20_000, 0, 1, &mut rng).unwrap();
    assert_eq!(samples.len(), 20_000);
    let mut mean = DMatrix::zeros(s, s);
    for d in &samples.draws {
        mean += &d.a;
    }
    mean /= samples.len() as f64;
    let nu = hyper.a_dof_for(s);
    let expected = (DMatrix::identity(s, s) + z.tr_mul(&z)) / (nu + n as f64 - s as f64 - 1.0);
    (&mean - &expected).norm() / expected.norm()
}

#[derive(Clone, Debug)]
pub struct MomentCheck {
    pub name: &'static str,
    pub mean: f64,
    pub target: f64,
    pub se: f64,
}

impl MomentCheck {
    pub fn z(&self) -> f64 {
        (self.mean - self.target) / self.se
    }
}

/// Successive-conditional simulator at `(s, q, K, n) = (2, 1, 1, 30)`:
/// alternate (latent, data) | parameters from the model with a parameter
/// sweep given the data. The parameter marginal must then equal the prior.
pub fn joint_distribution_moments(iters: usize) -> Vec<MomentCheck> {
    let (n, s, q, k) = (30, 2, 1, 1);
    let nu = 12.0;
    let hyper = CovRegHyper {
        tau_eta2: 1.0,
        tau_b2: 1.0,
        a_scale: PriorScale::Isotropic(1.0),
        a_dof: Some(nu),
        estimate_mean: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = standard_normal(&mut rng, n, q);

    let mut state = CovRegState {
        eta: standard_normal(&mut rng, q, s),
        b: vec![standard_normal(&mut rng, s, q)],
        a: sample_inverse_wishart(&DMatrix::identity(s, s), nu, &mut rng).unwrap(),
        gamma: DMatrix::zeros(n, k),
        hyper,
    };
    let mut a11 = Vec::with_capacity(iters);
    let mut a11_sq = Vec::with_capacity(iters);
    let mut eta_sq = Vec::with_capacity(iters);
    let mut b_sq = Vec::with_capacity(iters);
    for _ in 0..iters {
        let gamma = standard_normal(&mut rng, n, k);
        let chol = state.a.clone().cholesky().unwrap();
        let e = standard_normal(&mut rng, n, s) * chol.l().transpose();
        let mut z = &x * &state.eta + e;
        for i in 0..n {
            let bx = &state.b[0] * x.row(i).transpose();
            let mut row = z.row_mut(i);
            row += bx.transpose() * gamma[(i, 0)];
        }
        state.gamma = gamma;
        state = gibbs_step(&state, &z, &x, &mut rng).unwrap();
        a11.push(state.a[(0, 0)]);
        a11_sq.push(state.a[(0, 0)].powi(2));
        eta_sq.push(state.eta[(0, 0)].powi(2));
        b_sq.push(state.b[0][(1, 0)].powi(2));
    }
    let d = s as f64;
    let mean_a11 = 1.0 / (nu - d - 1.0);
    let var_a11 = 2.0 / ((nu - d - 1.0).powi(2) * (nu - d - 3.0));
    [
        ("E[A11]", &a11, mean_a11),
        ("E[A11^2]", &a11_sq, var_a11 + mean_a11 * mean_a11),
        ("E[eta^2]", &eta_sq, 1.0),
        ("E[B^2]", &b_sq, 1.0),
    ]
    .into_iter()
    .map(|(name, xs, target)| {
        let (mean, se) = batch_means_se(xs, 50);
        MomentCheck { name, mean, target, se }
    })
    .collect()
}
