//! Datasets: ingestion, standardization, synthetic generators, spatial masks
//! and file formats.

mod io;
mod mask;
mod pgm;
mod synth;

pub use io::{
    dataset_from_json, dataset_to_json, load_dataset, load_model, model_from_json, model_to_json,
    save_dataset, save_model, FloatEncoding, SCHEMA_VERSION,
};
pub use mask::{gaussian_mask, level_radius, mask_width, random_mask_centers, MaskSpec};
pub use pgm::{downsample, encode_pgm, load_pgm, parse_pgm, write_pgm, GrayImage};
pub use synth::{synth_lowrank, synth_two_halves, LowRankTruth};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub x: Vec<f64>,
}

/// Per-feature affine map: `standardized = (raw - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Standardization {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// `v * scale + mean`.
    pub fn inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.mean.len() {
            return Err(Error::shape(format!(
                "vector has length {}, statistics have {}",
                v.len(),
                self.mean.len()
            )));
        }
        Ok(v.iter()
            .zip(&self.scale)
            .zip(&self.mean)
            .map(|((x, s), m)| x * s + m)
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub dim: usize,
    pub standardization: Standardization,
    /// `(height, width)` when samples are images.
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    /// Wraps already-prepared vectors. The statistics are taken as given.
    pub fn from_vectors(
        vectors: Vec<Vec<f64>>,
        standardization: Standardization,
        image_shape: Option<(usize, usize)>,
    ) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        let ds = Dataset {
            samples: vectors
                .into_iter()
                .enumerate()
                .map(|(id, x)| Sample { id, x })
                .collect(),
            dim,
            standardization,
            image_shape,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::shape("dataset dimension must be ≥ 1"));
        }
        for s in &self.samples {
            if s.x.len() != self.dim {
                return Err(Error::shape(format!(
                    "sample {} has length {}, expected {}",
                    s.id,
                    s.x.len(),
                    self.dim
                )));
            }
            if !crate::linalg::all_finite(&s.x) {
                return Err(Error::Numeric(format!("sample {} has non-finite entries", s.id)));
            }
        }
        let mut ids: Vec<usize> = self.samples.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::usage("sample ids must be unique"));
        }
        let st = &self.standardization;
        if st.mean.len() != self.dim || st.scale.len() != self.dim {
            return Err(Error::shape("standardization statistics do not match dimension"));
        }
        if st.scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::usage("every standardization scale must be > 0"));
        }
        if let Some((h, w)) = self.image_shape {
            if h * w != self.dim {
                return Err(Error::shape(format!(
                    "image shape {h}x{w} does not cover dimension {}",
                    self.dim
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Position of the sample with the given id.
    pub fn position(&self, id: usize) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }

    /// Data matrix with one column per sample (`d x n`).
    pub fn matrix(&self) -> Matrix {
        let n = self.samples.len();
        let mut m = Matrix::zeros(self.dim, n);
        for (j, s) in self.samples.iter().enumerate() {
            for (i, &v) in s.x.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Features whose standard deviation falls below this (relative to the mean
/// magnitude) are treated as constant.
const DEGENERATE_STD: f64 = 1e-12;

/// Standardizes each feature to zero mean and unit population variance.
/// Constant features are centred and keep scale 1.
pub fn standardize(raw: &[Vec<f64>], image_shape: Option<(usize, usize)>) -> Result<Dataset> {
    if raw.len() < 2 {
        return Err(Error::usage("standardization needs at least 2 samples"));
    }
    let dim = raw[0].len();
    if raw.iter().any(|r| r.len() != dim) {
        return Err(Error::shape("samples differ in length"));
    }
    let n = raw.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in raw {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in raw {
        for ((acc, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .zip(&mean)
        .map(|(v, m)| {
            let s = (v / n).sqrt();
            if s <= DEGENERATE_STD * m.abs().max(1.0) {
                1.0
            } else {
                s
            }
        })
        .collect();
    let vectors = raw
        .iter()
        .map(|r| {
            r.iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();
    Dataset::from_vectors(vectors, Standardization { mean, scale }, image_shape)
}

pub fn inverse_standardize(stats: &Standardization, v: &[f64]) -> Result<Vec<f64>> {
    stats.inverse(v)
}
