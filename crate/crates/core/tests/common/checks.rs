//! Objective checks shared by the module tests and the acceptance suite:
//! oracle agreement, finite-difference gradients and rotation invariance.

#![allow(dead_code)]

use envreg::objectives::{
    general_marginal_loglik, mstep_gradient, mstep_objective, response_envelope_loglik, shared_subspace_loglik,
    spiked_marginal_loglik, GeneralObjective, GroupPrior, MStepObjective, PosteriorMoments, PriorConfig, PriorScale,
    ProjectedParams, ResponseEnvelopeObjective, SharedSubspaceObjective,
};
use envreg::stiefel::{Objective, StiefelBasis};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::oracles;

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = normal_matrix(rng, d, d);
    &g * g.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    StiefelBasis::random(rng, d, d).unwrap().into_matrix()
}

fn unit_vectors(rng: &mut ChaCha8Rng, p: usize, count: usize) -> Vec<DVector<f64>> {
    (0..count)
        .map(|j| {
            if p == 2 {
                let t = j as f64 * std::f64::consts::PI / count as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            } else {
                let g = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
                g.normalize()
            }
        })
        .collect()
}

fn basis_pair(v: &DVector<f64>) -> (StiefelBasis, StiefelBasis) {
    let b = StiefelBasis::new(DMatrix::from_column_slice(v.len(), 1, v.as_slice())).unwrap();
    let c = b.complement().unwrap();
    (b, c)
}

fn scalar_params(phi: &[f64], psi: &[f64]) -> ProjectedParams {
    ProjectedParams {
        phi: DMatrix::from_column_slice(phi.len(), 1, phi),
        psi_inv: psi.iter().map(|p| DMatrix::from_element(1, 1, 1.0 / p)).collect(),
    }
}

#[derive(Clone, Debug)]
pub struct OracleReport {
    pub objective: &'static str,
    pub instance: usize,
    /// Largest deviation after fitting one additive constant.
    pub spread: f64,
    /// Largest gap between the explicit-complement and the `V`-only form.
    pub form_gap: f64,
}

const DIRECTIONS: usize = 12;

/// Every objective against its numerical marginalization on three fixed
/// instances with `s = 1` and `n ≤ 5`.
pub fn oracle_reports() -> Vec<OracleReport> {
    let mut out = Vec::new();
    let general_instances = [(3usize, 1.0, 3.0, 11u64), (4, 0.5, 1.0, 12), (5, 2.0, 5.0, 13)];
    for (idx, &(n, u0, nu0, seed)) in general_instances.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = normal_matrix(&mut rng, n, 2) * 1.5;
        let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let psi: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let params = scalar_params(&phi, &psi);
        let closed = GeneralObjective::new(&y, &params, &PriorScale::Isotropic(u0), nu0).unwrap();
        let (mut got, mut want, mut gap) = (vec![], vec![], 0.0f64);
        for v in unit_vectors(&mut rng, 2, DIRECTIONS) {
            let (b, c) = basis_pair(&v);
            let val = general_marginal_loglik(&y, &b, &c, &params, &PriorScale::Isotropic(u0), nu0).unwrap();
            gap = gap.max((val - closed.value(b.matrix())).abs());
            got.push(val);
            want.push(oracles::general(&y, &v, &phi, &psi, u0, nu0));
        }
        out.push(OracleReport { objective: "general", instance: idx, spread: oracles::spread_after_constant(&got, &want), form_gap: gap });
    }

    let spiked_instances = [(3usize, 2usize, 2.0, 1.0, 21u64), (4, 3, 1.5, 0.5, 22), (5, 3, 3.0, 2.0, 23)];
    for (idx, &(n, p, alpha, kappa, seed)) in spiked_instances.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = normal_matrix(&mut rng, n, p);
        let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let psi: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let params = scalar_params(&phi, &psi);
        let moments = PosteriorMoments::from_params(&params);
        let (mut got, mut want, mut gap) = (vec![], vec![], 0.0f64);
        for v in unit_vectors(&mut rng, p, DIRECTIONS) {
            let (b, _) = basis_pair(&v);
            let val = spiked_marginal_loglik(&y, &b, &params, alpha, kappa).unwrap();
            gap = gap.max((val - mstep_objective(&y, &b, &moments, alpha, kappa).unwrap()).abs());
            got.push(val);
            want.push(oracles::spiked(&y, &v, &phi, &psi, alpha, kappa));
        }
        out.push(OracleReport { objective: "spiked", instance: idx, spread: oracles::spread_after_constant(&got, &want), form_gap: gap });
    }

    let response_instances = [(4usize, 0.5, 1.0, 3.0, 1.0, 2.0, 31u64), (5, 1.0, 2.0, 4.0, 0.5, 3.0, 32), (4, 2.0, 0.5, 2.5, 2.0, 1.0, 33)];
    for (idx, &(n, lambda0, u1, nu1, u0, nu0, seed)) in response_instances.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let slope = DMatrix::from_row_slice(1, 2, &[1.0, -0.5]);
        let xm = DMatrix::from_column_slice(n, 1, &x);
        let y = &xm * slope + normal_matrix(&mut rng, n, 2);
        let priors = PriorConfig {
            u0: PriorScale::Isotropic(u0),
            nu0,
            u1: PriorScale::Isotropic(u1),
            nu1,
            lambda0: PriorScale::Isotropic(lambda0),
            ..PriorConfig::default()
        };
        let closed = ResponseEnvelopeObjective::new(&y, &xm, &priors).unwrap();
        let (mut got, mut want, mut gap) = (vec![], vec![], 0.0f64);
        for v in unit_vectors(&mut rng, 2, DIRECTIONS) {
            let (b, c) = basis_pair(&v);
            let val = response_envelope_loglik(&y, &xm, &b, &c, &priors).unwrap();
            gap = gap.max((val - closed.value(b.matrix())).abs());
            got.push(val);
            want.push(oracles::response_envelope(&y, &x, &v, lambda0, u1, nu1, u0, nu0));
        }
        out.push(OracleReport { objective: "response_envelope", instance: idx, spread: oracles::spread_after_constant(&got, &want), form_gap: gap });
    }

    let shared_instances: [(&[usize], &[(f64, f64)], f64, f64, u64); 3] = [
        (&[3], &[(1.0, 2.0)], 2.0, 1.0, 41),
        (&[3, 4], &[(0.5, 3.0), (2.0, 1.0)], 1.0, 0.5, 42),
        (&[5], &[(1.5, 4.0)], 3.0, 2.0, 43),
    ];
    for (idx, &(sizes, pri, alpha, kappa, seed)) in shared_instances.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups: Vec<DMatrix<f64>> = sizes
            .iter()
            .map(|&n| normal_matrix(&mut rng, n, 2) * DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.5, 0.7]))
            .collect();
        let gp: Vec<GroupPrior> = pri.iter().map(|&(u, nu)| GroupPrior { u: PriorScale::Isotropic(u), nu }).collect();
        let closed = SharedSubspaceObjective::new(&groups, &gp, alpha, kappa).unwrap();
        let (mut got, mut want, mut gap) = (vec![], vec![], 0.0f64);
        for v in unit_vectors(&mut rng, 2, DIRECTIONS) {
            let (b, _) = basis_pair(&v);
            let val = shared_subspace_loglik(&groups, &b, &gp, alpha, kappa).unwrap();
            gap = gap.max((val - closed.value(b.matrix())).abs());
            got.push(val);
            want.push(oracles::shared_subspace(&groups, &v, pri, alpha, kappa));
        }
        out.push(OracleReport { objective: "shared_subspace", instance: idx, spread: oracles::spread_after_constant(&got, &want), form_gap: gap });
    }
    out
}

/// `‖G − G_fd‖_F / ‖G_fd‖_F` with central differences of step `1e-6`.
pub fn fd_relative_error(f: &dyn Fn(&DMatrix<f64>) -> f64, grad: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let h = 1e-6;
    let mut fd = DMatrix::zeros(v.nrows(), v.ncols());
    for i in 0..v.nrows() {
        for j in 0..v.ncols() {
            let mut plus = v.clone();
            plus[(i, j)] += h;
            let mut minus = v.clone();
            minus[(i, j)] -= h;
            fd[(i, j)] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    (grad - &fd).norm() / fd.norm().max(1e-12)
}

pub fn random_moments(rng: &mut ChaCha8Rng, n: usize, s: usize) -> PosteriorMoments {
    PosteriorMoments {
        m: normal_matrix(rng, n, s),
        k: (0..n).map(|_| random_spd(rng, s)).collect(),
    }
}

/// Worst relative finite-difference error over ten random feasible points
/// for each objective gradient.
pub fn gradient_reports(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, p, s, q) = (20, 8, 2, 3);
    let y = normal_matrix(&mut rng, n, p);
    let x = normal_matrix(&mut rng, n, q);
    let moments = random_moments(&mut rng, n, s);
    let params = ProjectedParams {
        phi: normal_matrix(&mut rng, n, s),
        psi_inv: (0..n).map(|_| random_spd(&mut rng, s)).collect(),
    };
    let priors = PriorConfig {
        u0: PriorScale::Ambient(random_spd(&mut rng, p)),
        nu0: 3.0,
        u1: PriorScale::Isotropic(0.7),
        nu1: 4.0,
        ..PriorConfig::default()
    };
    let groups = vec![normal_matrix(&mut rng, 6, p), normal_matrix(&mut rng, 9, p)];
    let gp = vec![
        GroupPrior { u: PriorScale::Isotropic(1.0), nu: 2.0 },
        GroupPrior { u: PriorScale::Ambient(random_spd(&mut rng, p)), nu: 5.0 },
    ];

    let mstep = MStepObjective::new(&y, moments.clone(), 2.0, 1.5).unwrap();
    let general = GeneralObjective::new(&y, &params, &priors.u0, priors.nu0).unwrap();
    let response = ResponseEnvelopeObjective::new(&y, &x, &priors).unwrap();
    let shared = SharedSubspaceObjective::new(&groups, &gp, 1.0, 0.5).unwrap();
    let objectives: [(&'static str, &dyn Objective); 4] = [
        ("mstep", &mstep),
        ("general", &general),
        ("response_envelope", &response),
        ("shared_subspace", &shared),
    ];

    let points: Vec<StiefelBasis> = (0..10).map(|_| StiefelBasis::random(&mut rng, p, s).unwrap()).collect();
    let mut out: Vec<(&'static str, f64)> = objectives
        .iter()
        .map(|(name, obj)| {
            let worst = points
                .iter()
                .map(|v| fd_relative_error(&|m| obj.value(m), &obj.gradient(v.matrix()), v.matrix()))
                .fold(0.0, f64::max);
            (*name, worst)
        })
        .collect();
    let worst = points
        .iter()
        .map(|v| {
            let g = mstep_gradient(&y, v, &moments, 2.0, 1.5).unwrap();
            fd_relative_error(&|m| mstep.value(m), &g, v.matrix())
        })
        .fold(0.0, f64::max);
    out.push(("mstep_gradient", worst));
    out
}

/// Largest change of each objective under `V → VR` (with covariant
/// parameter rotation) over `trials` random instances.
pub fn rotation_reports(seed: u64, trials: usize) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 5];
    for _ in 0..trials {
        let d = rotation_trial(&mut rng);
        for (w, x) in worst.iter_mut().zip(d) {
            *w = w.max(x);
        }
    }
    vec![
        ("general", worst[0]),
        ("spiked", worst[1]),
        ("mstep", worst[2]),
        ("response_envelope", worst[3]),
        ("shared_subspace", worst[4]),
    ]
}

/// One random instance: absolute changes of the five objective values.
pub fn rotation_trial(rng: &mut ChaCha8Rng) -> [f64; 5] {
    let n = rng.random_range(4..12);
    let p = rng.random_range(3..8);
    let s = rng.random_range(1..p);
    let q = rng.random_range(1..4);
    let y = normal_matrix(rng, n, p);
    let x = normal_matrix(rng, n, q);
    let v = StiefelBasis::random(rng, p, s).unwrap();
    let vp = v.complement().unwrap();
    let r = random_orthogonal(rng, s);
    let rp = random_orthogonal(rng, p - s);
    let vr = v.rotate(&r).unwrap();
    let vpr = vp.rotate(&rp).unwrap();

    let params = ProjectedParams {
        phi: normal_matrix(rng, n, s),
        psi_inv: (0..n).map(|_| random_spd(rng, s)).collect(),
    };
    let params_r = ProjectedParams {
        phi: &params.phi * &r,
        psi_inv: params.psi_inv.iter().map(|k| r.transpose() * k * &r).collect(),
    };
    let moments = random_moments(rng, n, s);
    let moments_r = PosteriorMoments {
        m: &moments.m * &r,
        k: moments.k.iter().map(|k| r.transpose() * k * &r).collect(),
    };
    let priors = PriorConfig {
        u0: PriorScale::Ambient(random_spd(rng, p)),
        nu0: 2.5,
        u1: PriorScale::Ambient(random_spd(rng, p)),
        nu1: 3.5,
        ..PriorConfig::default()
    };
    let groups = vec![normal_matrix(rng, n, p), normal_matrix(rng, n + 2, p)];
    let gp = vec![
        GroupPrior { u: PriorScale::Ambient(random_spd(rng, p)), nu: 2.0 },
        GroupPrior { u: PriorScale::Isotropic(0.8), nu: 3.0 },
    ];

    let general = |b: &StiefelBasis, c: &StiefelBasis, pr: &ProjectedParams| general_marginal_loglik(&y, b, c, pr, &priors.u0, priors.nu0).unwrap();
    let spiked = |b: &StiefelBasis, pr: &ProjectedParams| spiked_marginal_loglik(&y, b, pr, 1.5, 0.7).unwrap();
    let mstep = |b: &StiefelBasis, m: &PosteriorMoments| mstep_objective(&y, b, m, 1.5, 0.7).unwrap();
    let response = |b: &StiefelBasis, c: &StiefelBasis| response_envelope_loglik(&y, &x, b, c, &priors).unwrap();
    let shared = |b: &StiefelBasis| shared_subspace_loglik(&groups, b, &gp, 1.0, 0.5).unwrap();
    [
        (general(&v, &vp, &params) - general(&vr, &vpr, &params_r)).abs(),
        (spiked(&v, &params) - spiked(&vr, &params_r)).abs(),
        (mstep(&v, &moments) - mstep(&vr, &moments_r)).abs(),
        (response(&v, &vp) - response(&vr, &vpr)).abs(),
        (shared(&v) - shared(&vr)).abs(),
    ]
}

/// Largest principal angle between the optimizer's maximizer of `tr(VᵀCV)`
/// and the top-`s` eigenspace of a random symmetric `C`, with iteration count.
pub fn eigenspace_recovery(p: usize, s: usize, seed: u64) -> (f64, usize) {
    use envreg::eval::largest_principal_angle;
    use envreg::linalg::sym_eigen_desc;
    use envreg::stiefel::{maximize_on_stiefel, FnObjective, OptimizerConfig};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = normal_matrix(&mut rng, p, p);
    let c = (&g + g.transpose()) / (2.0 * p as f64).sqrt();
    let c2 = c.clone();
    let obj = FnObjective {
        value: move |v: &DMatrix<f64>| v.dot(&(&c * v)),
        gradient: move |v: &DMatrix<f64>| (&c2 * v) * 2.0,
    };
    let (_, vecs) = sym_eigen_desc(&(&g + g.transpose()));
    let truth = StiefelBasis::new(vecs.columns(0, s).into_owned()).unwrap();
    let v0 = StiefelBasis::random(&mut rng, p, s).unwrap();
    let cfg = OptimizerConfig { grad_tol: 1e-10, max_iters: 20_000, ..OptimizerConfig::default() };
    let res = maximize_on_stiefel(&obj, &v0, &cfg).unwrap();
    (largest_principal_angle(&res.basis, &truth).unwrap(), res.iterations)
}
