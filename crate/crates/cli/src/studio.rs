//! Per-sample decomposition and σ-edited resynthesis, shared by the CLI verbs
//! and the HTTP service so both produce the same bytes.

use decompnet::infer::{decompose, weighted_sum, Decomposition};
use decompnet::{Dataset, DecomposerModel, LossBreakdown};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, EXIT_USAGE};
use crate::render::{rescale, Rendered};

pub const SIDECAR_VERSION: u32 = 1;

/// One rendered image and the rescale that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// `original`, `component`, `sum` or `synth`.
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub file: String,
    pub scale: f64,
    pub offset: f64,
}

/// JSON written next to rendered images. `{sample, sigma}` alone is a valid
/// sidecar, which is what `synth --overrides-file` reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(default = "default_version")]
    pub schema_version: u32,
    pub sample: usize,
    pub sigma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimated_sigma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossBreakdown>,
    #[serde(default)]
    pub images: Vec<ImageRecord>,
}

fn default_version() -> u32 {
    SIDECAR_VERSION
}

pub fn not_found(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        kind: "not_found",
        message: message.into(),
    }
}

/// Image shape for rendering; flat data renders as a single row.
pub fn render_shape(ds: &Dataset) -> (usize, usize) {
    ds.image_shape.unwrap_or((1, ds.dim))
}

pub fn check_compatible(model: &DecomposerModel, ds: &Dataset) -> CliResult<()> {
    if model.dim != ds.dim {
        return Err(CliError {
            code: EXIT_USAGE,
            kind: "shape",
            message: format!("model dimension {} does not match dataset dimension {}", model.dim, ds.dim),
        });
    }
    Ok(())
}

pub fn sample(ds: &Dataset, id: usize) -> CliResult<&[f64]> {
    ds.position(id)
        .map(|k| ds.samples[k].x.as_slice())
        .ok_or_else(|| not_found(format!("no sample with id {id} (dataset has {} samples)", ds.len())))
}

/// Edited σ must have one finite, nonnegative entry per branch.
pub fn validate_sigma(sigma: &[f64], n: usize) -> CliResult<()> {
    if sigma.len() != n {
        return Err(CliError::usage(format!("sigma has {} entries, the model has {n} branches", sigma.len())));
    }
    if let Some((i, s)) = sigma.iter().enumerate().find(|(_, s)| !(s.is_finite() && **s >= 0.0)) {
        return Err(CliError::usage(format!("sigma[{i}] = {s} must be finite and nonnegative")));
    }
    Ok(())
}

pub fn decompose_sample(model: &DecomposerModel, ds: &Dataset, id: usize) -> CliResult<Decomposition> {
    check_compatible(model, ds)?;
    Ok(decompose(model, sample(ds, id)?)?)
}

/// Inverse-standardized `sum_i sigma_i xhat_i`, rescaled to gray levels.
pub fn render_sum(ds: &Dataset, dec: &Decomposition, sigma: &[f64]) -> CliResult<Rendered> {
    validate_sigma(sigma, dec.components.len())?;
    let std_space = weighted_sum(&dec.components, sigma)?;
    rescale(&ds.standardization.inverse(&std_space)?)
}

/// `sigma_i xhat_i` in data units without the mean.
pub fn render_component(ds: &Dataset, dec: &Decomposition, i: usize) -> CliResult<Rendered> {
    let sigma = dec.sigma.as_slice()[i];
    let v: Vec<f64> = dec.components[i]
        .iter()
        .zip(&ds.standardization.scale)
        .map(|(c, s)| sigma * c * s)
        .collect();
    rescale(&v)
}

pub fn render_original(ds: &Dataset, id: usize) -> CliResult<Rendered> {
    rescale(&ds.standardization.inverse(sample(ds, id)?)?)
}

/// Decomposes sample `id` and renders it with `sigma` in place of the fitted
/// scales.
pub fn synthesize(model: &DecomposerModel, ds: &Dataset, id: usize, sigma: &[f64]) -> CliResult<(Decomposition, Rendered)> {
    let dec = decompose_sample(model, ds, id)?;
    let img = render_sum(ds, &dec, sigma)?;
    Ok((dec, img))
}
