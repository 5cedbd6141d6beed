//! TOML configuration for models, utilities, and experiments.
//!
//! Matrices are arrays of rows (row-major); all rates are absolute per
//! year. Example:
//!
//! ```toml
//! [model]
//! r0 = 0.045
//! r1 = [0.01]
//! R2 = [[0.02]]
//! a = [0.2]
//! A = [[0.1]]
//! b = [0.0]
//! B = [[-0.6]]
//! Lambda = [[0.18]]
//! Sigma = [[0.2]]
//!
//! [initial]
//! x = 1.0
//! y = [0.2]
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::QtsmModel;
use crate::utility::UtilitySpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentFileConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityPairConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collective: Option<CollectiveConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub r0: f64,
    pub r1: Vec<f64>,
    #[serde(rename = "R2")]
    pub r2: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    #[serde(rename = "A")]
    pub a_slope: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(rename = "B")]
    pub b_rev: Vec<Vec<f64>>,
    #[serde(rename = "Lambda")]
    pub lambda: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialConfig {
    pub x: f64,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default = "default_npaths")]
    pub npaths: usize,
    #[serde(default = "default_steps_per_unit")]
    pub nsteps_per_unit: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn default_npaths() -> usize {
    100_000
}
fn default_steps_per_unit() -> usize {
    2000
}
fn default_seed() -> u64 {
    42
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            npaths: default_npaths(),
            nsteps_per_unit: default_steps_per_unit(),
            seed: default_seed(),
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentFileConfig {
    pub t_grid: Vec<f64>,
    #[serde(default = "default_components")]
    pub components: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_grid: Option<Vec<f64>>,
    /// Rate parameter for linear-sharing comparisons, inside the
    /// admissible interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharing_rate: Option<f64>,
}

fn default_components() -> Vec<String> {
    vec!["myopic".into(), "hedging".into(), "wealth_gap".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtilityPairConfig {
    pub general: UtilityConfig,
    pub reference: UtilityConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityConfig {
    Power { exponent: f64 },
    Log {},
    Pareto { betas: Vec<f64>, exponents: Vec<f64> },
    LinearSharing {
        alphas: Vec<f64>,
        betas: Vec<f64>,
        exponents: Vec<f64>,
    },
    LinearSharingWeights {
        weights: Vec<f64>,
        exponents: Vec<f64>,
    },
}

impl UtilityConfig {
    pub fn build(&self) -> Result<UtilitySpec> {
        match self {
            UtilityConfig::Power { exponent } => UtilitySpec::power(*exponent),
            UtilityConfig::Log {} => Ok(UtilitySpec::log()),
            UtilityConfig::Pareto { betas, exponents } => {
                UtilitySpec::pareto(betas.clone(), exponents.clone())
            }
            UtilityConfig::LinearSharing {
                alphas,
                betas,
                exponents,
            } => UtilitySpec::linear_sharing(alphas.clone(), betas.clone(), exponents.clone()),
            UtilityConfig::LinearSharingWeights { weights, exponents } => {
                UtilitySpec::linear_sharing_weights(weights.clone(), exponents.clone())
            }
        }
    }
}

/// Collective investment setting: investors' CRRA exponents plus the two
/// sharing rules built on them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectiveConfig {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub exponents: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharing_rate: Option<f64>,
}

fn matrix_from_rows(field: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Dimension {
            field,
            expected: "at least one row".into(),
            got: "0 rows".into(),
        });
    }
    let ncols = rows[0].len();
    for r in rows {
        if r.len() != ncols {
            return Err(Error::Dimension {
                field,
                expected: format!("rectangular rows of length {ncols}"),
                got: format!("row of length {}", r.len()),
            });
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl ModelConfig {
    pub fn build(&self) -> Result<QtsmModel> {
        QtsmModel::new(
            self.r0,
            DVector::from_vec(self.r1.clone()),
            matrix_from_rows("R2", &self.r2)?,
            DVector::from_vec(self.a.clone()),
            matrix_from_rows("A", &self.a_slope)?,
            DVector::from_vec(self.b.clone()),
            matrix_from_rows("B", &self.b_rev)?,
            matrix_from_rows("Lambda", &self.lambda)?,
            matrix_from_rows("Sigma", &self.sigma)?,
        )
    }
}

impl FileConfig {
    pub fn initial_factor(&self) -> DVector<f64> {
        DVector::from_vec(self.initial.y.clone())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize: {e}")))
    }
}

pub fn parse_config(text: &str) -> Result<FileConfig> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))
}

pub fn load_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}
