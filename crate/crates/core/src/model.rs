//! Model configuration and the trainable model container.

use serde::{Deserialize, Serialize};

use crate::branches::{init_branch, BranchParams};
use crate::error::{Error, Result};

/// Architecture of every branch autoencoder in a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BranchKind {
    /// Projection `u u^T`.
    Rank1Tied,
    /// Operator `u v^T`.
    Rank1Untied,
    /// `z = W r`, `xhat = V z` with code width `code_dim`.
    LinearAe { code_dim: usize },
    /// Dense tanh autoencoder. `widths[0]` is the input dimension and the
    /// last entry is the code width; the decoder mirrors the encoder.
    MlpAe { widths: Vec<usize> },
}

impl BranchKind {
    pub fn is_rank1(&self) -> bool {
        matches!(self, BranchKind::Rank1Tied | BranchKind::Rank1Untied)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    GaussSeidel,
    Jacobi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    RidgeClosedForm,
    Nnls,
    FixedOnes,
}

/// How gradients treat the `-sum_{j != i} sigma_j xhat_j` term of a residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualGradMode {
    /// Differentiate through the complete unrolled sweep graph.
    FullUnroll,
    /// Block gradients through the other branches' reconstructions.
    DetachCross,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_branches: usize,
    pub branch_kind: BranchKind,
    pub sweeps: usize,
    pub schedule: Schedule,
    pub damping: f64,
    pub lambda_s: f64,
    pub lambda_perp: f64,
    pub ridge: f64,
    pub sigma_mode: SigmaMode,
    /// Clamp negative ridge solutions to zero.
    pub clamp_sigma: bool,
    pub normalize_components: bool,
    pub residual_grad_mode: ResidualGradMode,
    /// Branch `i` is initialized with parameters scaled by `1 + init_spread * i`.
    #[serde(default)]
    pub init_spread: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_branches: 3,
            branch_kind: BranchKind::Rank1Tied,
            sweeps: 1,
            schedule: Schedule::GaussSeidel,
            damping: 0.5,
            lambda_s: 0.0,
            lambda_perp: 0.0,
            ridge: 1e-8,
            sigma_mode: SigmaMode::RidgeClosedForm,
            clamp_sigma: true,
            normalize_components: false,
            residual_grad_mode: ResidualGradMode::FullUnroll,
            init_spread: 0.0,
            seed: 0,
        }
    }
}

/// Lists every violated configuration invariant. An empty list means the
/// configuration is valid.
pub fn validate_config(config: &ModelConfig) -> Vec<String> {
    let mut violations = Vec::new();
    if config.n_branches < 1 {
        violations.push("n_branches must be ≥ 1".to_string());
    }
    if config.sweeps < 1 {
        violations.push("sweeps must be ≥ 1".to_string());
    }
    if !(config.damping > 0.0 && config.damping <= 1.0) {
        violations.push("damping must lie in (0,1]".to_string());
    }
    if !(config.ridge > 0.0) || !config.ridge.is_finite() {
        violations.push("ridge must be > 0".to_string());
    }
    if !(config.lambda_s >= 0.0) || !config.lambda_s.is_finite() {
        violations.push("lambda_s must be ≥ 0".to_string());
    }
    if !(config.lambda_perp >= 0.0) || !config.lambda_perp.is_finite() {
        violations.push("lambda_perp must be ≥ 0".to_string());
    }
    if !config.init_spread.is_finite() || config.init_spread <= -1.0 / config.n_branches.max(1) as f64 {
        violations.push("init_spread must keep every branch scale positive".to_string());
    }
    match &config.branch_kind {
        BranchKind::LinearAe { code_dim } if *code_dim == 0 => {
            violations.push("linear autoencoder code_dim must be ≥ 1".to_string());
        }
        BranchKind::MlpAe { widths } if widths.len() < 2 || widths.contains(&0) => {
            violations.push("mlp widths need at least two positive entries".to_string());
        }
        _ => {}
    }
    violations
}

/// Per-sample scale coefficients, one per branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SigmaVector(pub Vec<f64>);

impl SigmaVector {
    pub fn ones(n: usize) -> Self {
        SigmaVector(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for SigmaVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for SigmaVector {
    fn from(v: Vec<f64>) -> Self {
        SigmaVector(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposerModel {
    pub config: ModelConfig,
    pub dim: usize,
    pub branches: Vec<BranchParams>,
    pub masks: Option<Vec<Vec<f64>>>,
}

/// Seed for branch `index`, derived from the model seed by a splitmix64 step.
pub fn branch_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl DecomposerModel {
    /// Initializes all branches from `config.seed`.
    pub fn new(config: ModelConfig, dim: usize) -> Result<Self> {
        let violations = validate_config(&config);
        if !violations.is_empty() {
            return Err(Error::Config(violations.join("; ")));
        }
        if dim == 0 {
            return Err(Error::Config("dimension must be ≥ 1".into()));
        }
        let mut branches = Vec::with_capacity(config.n_branches);
        for i in 0..config.n_branches {
            let mut b = init_branch(&config.branch_kind, dim, branch_seed(config.seed, i))?;
            let s = 1.0 + config.init_spread * i as f64;
            if s != 1.0 {
                b.scale_params(s);
            }
            branches.push(b);
        }
        Ok(DecomposerModel {
            config,
            dim,
            branches,
            masks: None,
        })
    }

    pub fn with_masks(mut self, masks: Vec<Vec<f64>>) -> Result<Self> {
        if masks.len() != self.config.n_branches {
            return Err(Error::Config(format!(
                "{} masks for {} branches",
                masks.len(),
                self.config.n_branches
            )));
        }
        for (i, m) in masks.iter().enumerate() {
            if m.len() != self.dim {
                return Err(Error::shape(format!(
                    "mask {i} has length {}, expected {}",
                    m.len(),
                    self.dim
                )));
            }
            if m.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!("mask {i} has entries outside [0,1]")));
            }
        }
        self.masks = Some(masks);
        Ok(self)
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn mask(&self, i: usize) -> Option<&[f64]> {
        self.masks.as_ref().map(|m| m[i].as_slice())
    }

    /// Checks the structural invariants of a (possibly deserialized) model.
    pub fn validate(&self) -> Result<()> {
        let violations = validate_config(&self.config);
        if !violations.is_empty() {
            return Err(Error::Config(violations.join("; ")));
        }
        if self.branches.len() != self.config.n_branches {
            return Err(Error::Config(format!(
                "{} branches stored, config says {}",
                self.branches.len(),
                self.config.n_branches
            )));
        }
        for (i, b) in self.branches.iter().enumerate() {
            b.check_shape(&self.config.branch_kind, self.dim)
                .map_err(|e| Error::Config(format!("branch {i}: {e}")))?;
        }
        if let Some(masks) = &self.masks {
            self.clone().with_masks(masks.clone())?;
        }
        Ok(())
    }

    /// Re-projects rank-1 `u` vectors to unit norm.
    pub fn renormalize(&mut self) {
        for b in &mut self.branches {
            b.normalize_rank1();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = ModelConfig {
            n_branches: 3,
            sweeps: 1,
            damping: 0.5,
            ridge: 1e-8,
            ..ModelConfig::default()
        };
        assert!(validate_config(&cfg).is_empty());
    }

    #[test]
    fn zero_branches_reported() {
        let cfg = ModelConfig {
            n_branches: 0,
            ..ModelConfig::default()
        };
        assert_eq!(validate_config(&cfg), vec!["n_branches must be ≥ 1".to_string()]);
    }

    #[test]
    fn zero_damping_reported() {
        let cfg = ModelConfig {
            damping: 0.0,
            ..ModelConfig::default()
        };
        assert_eq!(validate_config(&cfg), vec!["damping must lie in (0,1]".to_string()]);
    }

    #[test]
    fn several_violations_all_listed() {
        let cfg = ModelConfig {
            sweeps: 0,
            ridge: 0.0,
            damping: 1.5,
            ..ModelConfig::default()
        };
        assert_eq!(validate_config(&cfg).len(), 3);
    }

    #[test]
    fn masks_checked_against_branches() {
        let m = DecomposerModel::new(ModelConfig::default(), 4).unwrap();
        assert!(m.clone().with_masks(vec![vec![1.0; 4]; 2]).is_err());
        assert!(m.clone().with_masks(vec![vec![1.5; 4]; 3]).is_err());
        assert!(m.with_masks(vec![vec![0.5; 4]; 3]).is_ok());
    }
}
