//! TOML run configuration. Every key is optional; command-line flags
//! override file values, which override built-in defaults.
//!
//! ```toml
//! [simulate]
//! n = 100
//! p = 25
//!
//! [fit]
//! s = 4
//! k = 4
//! [fit.mcmc]
//! n_iter = 2000
//! burn = 1000
//! [fit.priors]
//! alpha = 1.0
//!
//! [summarize]
//! dims = [1, 2]
//! top = 20
//!
//! [eval]
//! replicates = 20
//! s_tilde = [4, 8, 12]
//! ```

use std::path::Path;

use envreg::eval::SimConfig;
use envreg::mcem::FitConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub simulate: SimConfig,
    pub fit: FitConfig,
    pub summarize: SummarizeSection,
    pub eval: EvalSection,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizeSection {
    /// 1-based pair of rotated coordinates to display.
    pub dims: [usize; 2],
    pub top: usize,
}

impl Default for SummarizeSection {
    fn default() -> Self {
        Self { dims: [1, 2], top: 20 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub replicates: usize,
    pub seed: u64,
    pub s_tilde: Vec<usize>,
    pub q_list: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            replicates: 20,
            seed: 0,
            s_tilde: vec![4, 8, 12],
            q_list: vec![4],
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}
