//! JSON artifacts: the fit, its posterior draws, and the simulation truth.

use std::path::{Path, PathBuf};

use envreg::covreg::CovRegSamples;
use envreg::eval::{SimConfig, SimTruth};
use envreg::mcem::{EmStep, EnvelopeFit, FitConfig};
use envreg::stiefel::StiefelBasis;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{matrix_from_rows, read_json, rows_of, write_json};

pub const SCHEMA_VERSION: u32 = 1;
pub const SAMPLES_FILE: &str = "samples.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub p: usize,
    pub s: usize,
    /// `V̂`, one inner array per row.
    pub basis: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub y_offset: Vec<f64>,
    pub converged: bool,
    pub trace: Vec<EmStep>,
    pub config: FitConfig,
    /// Posterior draws, relative to this file's directory.
    pub samples_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SamplesArtifact {
    pub schema_version: u32,
    pub samples: CovRegSamples,
}

fn check_version(path: &Path, version: u32) -> CliResult<()> {
    if version != SCHEMA_VERSION {
        return Err(CliError::Data(format!(
            "{}: unsupported schema_version {version} (expected {SCHEMA_VERSION})",
            path.display()
        )));
    }
    Ok(())
}

/// Writes `fit.json` and the samples file into `dir`; returns the fit path.
pub fn save_fit(fit: &EnvelopeFit, dir: &Path) -> CliResult<PathBuf> {
    let artifact = FitArtifact {
        schema_version: SCHEMA_VERSION,
        p: fit.p(),
        s: fit.s(),
        basis: rows_of(fit.basis.matrix()),
        sigma2: fit.sigma2,
        y_offset: fit.y_offset.iter().copied().collect(),
        converged: fit.converged,
        trace: fit.trace.clone(),
        config: fit.config.clone(),
        samples_file: SAMPLES_FILE.to_string(),
    };
    let path = dir.join("fit.json");
    write_json(&path, &artifact)?;
    write_json(
        &dir.join(SAMPLES_FILE),
        &SamplesArtifact {
            schema_version: SCHEMA_VERSION,
            samples: fit.samples.clone(),
        },
    )?;
    Ok(path)
}

pub fn load_fit(path: &Path) -> CliResult<EnvelopeFit> {
    let artifact: FitArtifact = read_json(path)?;
    check_version(path, artifact.schema_version)?;
    let bad = |what: &str| CliError::Data(format!("{}: {what}", path.display()));
    let basis = matrix_from_rows(&artifact.basis, artifact.s).ok_or_else(|| bad("basis rows have inconsistent lengths"))?;
    if basis.nrows() != artifact.p || artifact.y_offset.len() != artifact.p {
        return Err(bad("basis or offset length disagrees with p"));
    }
    let basis = StiefelBasis::new(basis).map_err(|e| bad(&e.to_string()))?;
    let samples_path = path.parent().unwrap_or(Path::new(".")).join(&artifact.samples_file);
    let samples: SamplesArtifact = read_json(&samples_path)?;
    check_version(&samples_path, samples.schema_version)?;
    if samples.samples.s().is_some_and(|s| s != artifact.s) {
        return Err(CliError::Data(format!("{}: draws do not match s = {}", samples_path.display(), artifact.s)));
    }
    Ok(EnvelopeFit {
        basis,
        sigma2: artifact.sigma2,
        samples: samples.samples,
        trace: artifact.trace,
        converged: artifact.converged,
        config: artifact.config,
        y_offset: DVector::from_vec(artifact.y_offset),
    })
}

/// Number of covariates the fit was trained with.
pub fn covariate_count(fit: &EnvelopeFit) -> CliResult<usize> {
    fit.samples
        .draws
        .first()
        .map(|d| d.eta.nrows())
        .ok_or_else(|| CliError::Data("fit has no posterior draws".into()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TruthManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config: SimConfig,
    pub basis: Vec<Vec<f64>>,
    /// `q × s` mean coefficients.
    pub eta: Vec<Vec<f64>>,
    /// `K` covariance coefficient matrices, each `s × q`.
    pub gamma: Vec<Vec<Vec<f64>>>,
    pub sigma2: f64,
}

impl TruthManifest {
    pub fn new(cfg: &SimConfig, truth: &SimTruth) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: cfg.seed,
            config: cfg.clone(),
            basis: rows_of(truth.basis.matrix()),
            eta: rows_of(&truth.eta),
            gamma: truth.gamma.iter().map(rows_of).collect(),
            sigma2: truth.sigma2,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let m: Self = read_json(path)?;
        check_version(path, m.schema_version)?;
        Ok(m)
    }

    /// The truth with `Ψ(x_i)` evaluated at the rows of `x`.
    pub fn truth_at(&self, x: &DMatrix<f64>, path: &Path) -> CliResult<SimTruth> {
        let c = &self.config;
        let bad = |what: &str| CliError::Data(format!("{}: {what}", path.display()));
        let basis = matrix_from_rows(&self.basis, c.s).filter(|b| b.nrows() == c.p).ok_or_else(|| bad("basis has the wrong shape"))?;
        let eta = matrix_from_rows(&self.eta, c.s).filter(|e| e.nrows() == c.q).ok_or_else(|| bad("eta has the wrong shape"))?;
        let gamma = self
            .gamma
            .iter()
            .map(|g| matrix_from_rows(g, c.q).filter(|m| m.nrows() == c.s))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("gamma has the wrong shape"))?;
        if x.ncols() != c.q {
            return Err(CliError::Data(format!("X has {} columns but the truth manifest has q = {}", x.ncols(), c.q)));
        }
        let mut truth = SimTruth {
            basis: StiefelBasis::new(basis).map_err(|e| bad(&e.to_string()))?,
            eta,
            gamma,
            sigma2: self.sigma2,
            psi: Vec::new(),
        };
        truth.psi = x.row_iter().map(|r| truth.psi_at(&r.iter().copied().collect::<Vec<_>>())).collect();
        Ok(truth)
    }
}
