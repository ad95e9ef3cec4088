//! Named configurations for the three reference experiments.
//!
//! * `exp1`: rank-1 tied branches, no penalties; scales held at one while the
//!   subspace forms, then solved by ridge.
//! * `exp2`: dense nonlinear autoencoder branches without masks.
//! * `exp3`: tied rank-1 autoencoders behind fixed Gaussian masks, Jacobi
//!   sweeps, one sweep per pass for the first 50 epochs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{gaussian_mask, random_mask_centers, MaskSpec};
use crate::error::{Error, Result};
use crate::model::{BranchKind, DecomposerModel, ModelConfig, Schedule, SigmaMode};
use crate::optim::AdamConfig;
use crate::trainer::{SweepSchedule, TrainOptions};

/// Fraction of the image inside each mask's half-level disc.
pub const MASK_AREA_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Exp1,
    Exp2,
    Exp3,
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(PresetName::Exp1),
            "exp2" => Ok(PresetName::Exp2),
            "exp3" => Ok(PresetName::Exp3),
            other => Err(Error::Usage(format!("unknown preset {other:?} (expected exp1, exp2 or exp3)"))),
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PresetName::Exp1 => "exp1",
            PresetName::Exp2 => "exp2",
            PresetName::Exp3 => "exp3",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: PresetName,
    pub config: ModelConfig,
    pub options: TrainOptions,
    /// Whether branches get Gaussian masks.
    pub masked: bool,
}

/// Preset for data of dimension `dim`.
pub fn preset(name: PresetName, dim: usize) -> Preset {
    match name {
        PresetName::Exp1 => Preset {
            name,
            config: ModelConfig {
                n_branches: 3,
                branch_kind: BranchKind::Rank1Tied,
                sweeps: 3,
                damping: 0.7,
                lambda_s: 0.0,
                lambda_perp: 0.0,
                sigma_mode: SigmaMode::RidgeClosedForm,
                ..ModelConfig::default()
            },
            options: TrainOptions {
                epochs: 150,
                batch_size: 32,
                tol: 1e-6,
                adam: AdamConfig {
                    learning_rate: 3e-3,
                    ..AdamConfig::default()
                },
                sweep_schedule: None,
                sigma_warmup_epochs: 100,
            },
            masked: false,
        },
        PresetName::Exp2 => Preset {
            name,
            config: ModelConfig {
                n_branches: 5,
                branch_kind: BranchKind::MlpAe {
                    widths: vec![dim, 32, 8],
                },
                sweeps: 3,
                damping: 0.5,
                lambda_perp: 0.1,
                sigma_mode: SigmaMode::RidgeClosedForm,
                init_spread: 0.1,
                ..ModelConfig::default()
            },
            options: TrainOptions {
                epochs: 150,
                batch_size: 32,
                tol: 1e-6,
                adam: AdamConfig {
                    learning_rate: 2e-3,
                    ..AdamConfig::default()
                },
                sweep_schedule: None,
                sigma_warmup_epochs: 10,
            },
            masked: false,
        },
        PresetName::Exp3 => Preset {
            name,
            config: ModelConfig {
                n_branches: 5,
                branch_kind: BranchKind::Rank1Tied,
                sweeps: 3,
                schedule: Schedule::Jacobi,
                damping: 0.5,
                lambda_s: 0.0,
                lambda_perp: 0.0,
                sigma_mode: SigmaMode::RidgeClosedForm,
                init_spread: 0.1,
                ..ModelConfig::default()
            },
            options: TrainOptions {
                epochs: 150,
                batch_size: 32,
                tol: 1e-6,
                adam: AdamConfig {
                    learning_rate: 2e-3,
                    ..AdamConfig::default()
                },
                sweep_schedule: Some(SweepSchedule {
                    initial: 1,
                    switch_epoch: 50,
                }),
                sigma_warmup_epochs: 10,
            },
            masked: true,
        },
    }
}

/// Gaussian masks for `n` branches over an image of `shape`. Explicit
/// `centers` take precedence over seeded random placement.
pub fn branch_masks(
    shape: (usize, usize),
    n: usize,
    seed: u64,
    centers: Option<&[(f64, f64)]>,
) -> Result<Vec<Vec<f64>>> {
    let centers = match centers {
        Some(c) if c.len() != n => {
            return Err(Error::Usage(format!("{} mask centers for {n} branches", c.len())));
        }
        Some(c) => c.to_vec(),
        None => random_mask_centers(shape, n, seed),
    };
    centers
        .into_iter()
        .map(|center| {
            gaussian_mask(&MaskSpec {
                center,
                area_fraction: MASK_AREA_FRACTION,
                shape,
            })
        })
        .collect()
}

impl Preset {
    /// Builds the initial model, attaching masks when the preset calls for
    /// them. Masked presets need an image shape.
    pub fn build(
        &self,
        dim: usize,
        image_shape: Option<(usize, usize)>,
        centers: Option<&[(f64, f64)]>,
    ) -> Result<DecomposerModel> {
        let model = DecomposerModel::new(self.config.clone(), dim)?;
        if !self.masked {
            return Ok(model);
        }
        let shape = image_shape.ok_or_else(|| Error::Usage(format!("preset {} needs image data for its masks", self.name)))?;
        let masks = branch_masks(shape, self.config.n_branches, self.config.seed, centers)?;
        model.with_masks(masks)
    }
}
