//! JSON container for models and datasets.
//!
//! Parameter and sample arrays are written as strings: either 17-significant
//! digit decimals or `0x`-prefixed IEEE-754 bit patterns. Both decode to the
//! exact original doubles. Keys are emitted in a fixed order, so exporting a
//! loaded file reproduces it byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, Standardization};
use crate::branches::{BranchParams, Layer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{DecomposerModel, ModelConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloatEncoding {
    Decimal,
    #[default]
    Bits,
}

fn encode(values: &[f64], enc: FloatEncoding) -> Vec<String> {
    values
        .iter()
        .map(|v| match enc {
            FloatEncoding::Decimal => format!("{v:.16e}"),
            FloatEncoding::Bits => format!("0x{:016x}", v.to_bits()),
        })
        .collect()
}

fn decode(values: &[String], field: &str) -> Result<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let parsed = match s.strip_prefix("0x") {
                Some(hex) => u64::from_str_radix(hex, 16).ok().map(f64::from_bits),
                None => s.parse::<f64>().ok(),
            };
            parsed.ok_or_else(|| Error::Usage(format!("{field}[{k}]: cannot decode {s:?}")))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    rows: usize,
    cols: usize,
    data: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weight: MatrixFile,
    bias: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum BranchFile {
    Rank1Tied { u: Vec<String> },
    Rank1Untied { u: Vec<String>, v: Vec<String> },
    LinearAe { w: MatrixFile, v: MatrixFile },
    MlpAe { encoder: Vec<LayerFile>, decoder: Vec<LayerFile> },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    kind: String,
    encoding: FloatEncoding,
    dim: usize,
    config: ModelConfig,
    branches: Vec<BranchFile>,
    masks: Option<Vec<Vec<String>>>,
}

#[derive(Serialize, Deserialize)]
struct StandardizationFile {
    mean: Vec<String>,
    scale: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SampleFile {
    id: usize,
    x: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    schema_version: u32,
    kind: String,
    encoding: FloatEncoding,
    dim: usize,
    image_shape: Option<(usize, usize)>,
    standardization: StandardizationFile,
    samples: Vec<SampleFile>,
}

fn matrix_out(m: &Matrix, enc: FloatEncoding) -> MatrixFile {
    MatrixFile {
        rows: m.rows(),
        cols: m.cols(),
        data: encode(m.as_slice(), enc),
    }
}

fn matrix_in(m: &MatrixFile, field: &str) -> Result<Matrix> {
    Matrix::from_vec(m.rows, m.cols, decode(&m.data, &format!("{field}.data"))?)
        .map_err(|e| Error::Usage(format!("{field}: {e}")))
}

fn layer_out(l: &Layer, enc: FloatEncoding) -> LayerFile {
    LayerFile {
        weight: matrix_out(&l.weight, enc),
        bias: encode(&l.bias, enc),
    }
}

fn layer_in(l: &LayerFile, field: &str) -> Result<Layer> {
    Ok(Layer {
        weight: matrix_in(&l.weight, &format!("{field}.weight"))?,
        bias: decode(&l.bias, &format!("{field}.bias"))?,
    })
}

fn branch_out(b: &BranchParams, enc: FloatEncoding) -> BranchFile {
    match b {
        BranchParams::Rank1Tied { u } => BranchFile::Rank1Tied { u: encode(u, enc) },
        BranchParams::Rank1Untied { u, v } => BranchFile::Rank1Untied {
            u: encode(u, enc),
            v: encode(v, enc),
        },
        BranchParams::LinearAe { w, v } => BranchFile::LinearAe {
            w: matrix_out(w, enc),
            v: matrix_out(v, enc),
        },
        BranchParams::MlpAe { encoder, decoder } => BranchFile::MlpAe {
            encoder: encoder.iter().map(|l| layer_out(l, enc)).collect(),
            decoder: decoder.iter().map(|l| layer_out(l, enc)).collect(),
        },
    }
}

fn branch_in(b: &BranchFile, field: &str) -> Result<BranchParams> {
    Ok(match b {
        BranchFile::Rank1Tied { u } => BranchParams::Rank1Tied {
            u: decode(u, &format!("{field}.u"))?,
        },
        BranchFile::Rank1Untied { u, v } => BranchParams::Rank1Untied {
            u: decode(u, &format!("{field}.u"))?,
            v: decode(v, &format!("{field}.v"))?,
        },
        BranchFile::LinearAe { w, v } => BranchParams::LinearAe {
            w: matrix_in(w, &format!("{field}.w"))?,
            v: matrix_in(v, &format!("{field}.v"))?,
        },
        BranchFile::MlpAe { encoder, decoder } => BranchParams::MlpAe {
            encoder: encoder
                .iter()
                .enumerate()
                .map(|(k, l)| layer_in(l, &format!("{field}.encoder[{k}]")))
                .collect::<Result<_>>()?,
            decoder: decoder
                .iter()
                .enumerate()
                .map(|(k, l)| layer_in(l, &format!("{field}.decoder[{k}]")))
                .collect::<Result<_>>()?,
        },
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Usage(format!("at `{path}`: {}", e.into_inner()))
    })
}

fn check_header(version: u32, kind: &str, expected: &str) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::Usage(format!(
            "schema_version: unknown version {version} (supported: {SCHEMA_VERSION})"
        )));
    }
    if kind != expected {
        return Err(Error::Usage(format!("kind: expected {expected:?}, found {kind:?}")));
    }
    Ok(())
}

pub fn model_to_json(model: &DecomposerModel, enc: FloatEncoding) -> String {
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        kind: "model".into(),
        encoding: enc,
        dim: model.dim,
        config: model.config.clone(),
        branches: model.branches.iter().map(|b| branch_out(b, enc)).collect(),
        masks: model
            .masks
            .as_ref()
            .map(|ms| ms.iter().map(|m| encode(m, enc)).collect()),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
    s.push('\n');
    s
}

pub fn model_from_json(text: &str) -> Result<DecomposerModel> {
    let file: ModelFile = parse_json(text)?;
    check_header(file.schema_version, &file.kind, "model")?;
    let branches = file
        .branches
        .iter()
        .enumerate()
        .map(|(i, b)| branch_in(b, &format!("branches[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let masks = file
        .masks
        .as_ref()
        .map(|ms| {
            ms.iter()
                .enumerate()
                .map(|(i, m)| decode(m, &format!("masks[{i}]")))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let model = DecomposerModel {
        config: file.config,
        dim: file.dim,
        branches,
        masks,
    };
    model.validate().map_err(|e| Error::Usage(format!("branches: {e}")))?;
    Ok(model)
}

pub fn dataset_to_json(ds: &Dataset, enc: FloatEncoding) -> String {
    let file = DatasetFile {
        schema_version: SCHEMA_VERSION,
        kind: "dataset".into(),
        encoding: enc,
        dim: ds.dim,
        image_shape: ds.image_shape,
        standardization: StandardizationFile {
            mean: encode(&ds.standardization.mean, enc),
            scale: encode(&ds.standardization.scale, enc),
        },
        samples: ds
            .samples
            .iter()
            .map(|s| SampleFile {
                id: s.id,
                x: encode(&s.x, enc),
            })
            .collect(),
    };
    let mut s = serde_json::to_string(&file).expect("dataset serializes");
    s.push('\n');
    s
}

pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let file: DatasetFile = parse_json(text)?;
    check_header(file.schema_version, &file.kind, "dataset")?;
    let samples = file
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            Ok(Sample {
                id: s.id,
                x: decode(&s.x, &format!("samples[{k}].x"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        samples,
        dim: file.dim,
        standardization: Standardization {
            mean: decode(&file.standardization.mean, "standardization.mean")?,
            scale: decode(&file.standardization.scale, "standardization.scale")?,
        },
        image_shape: file.image_shape,
    };
    ds.validate().map_err(|e| Error::Usage(format!("samples: {e}")))?;
    Ok(ds)
}

fn load_err(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Load {
            path: path.to_path_buf(),
            message: io.to_string(),
        },
        Error::Usage(message) => Error::Load {
            path: path.to_path_buf(),
            message,
        },
        other => Error::Load {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

pub fn save_model(model: &DecomposerModel, path: impl AsRef<Path>, enc: FloatEncoding) -> Result<()> {
    std::fs::write(path, model_to_json(model, enc))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DecomposerModel> {
    let path = path.as_ref();
    std::fs::read_to_string(path)
        .map_err(Error::from)
        .and_then(|t| model_from_json(&t))
        .map_err(|e| load_err(path, e))
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>, enc: FloatEncoding) -> Result<()> {
    std::fs::write(path, dataset_to_json(ds, enc))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    std::fs::read_to_string(path)
        .map_err(Error::from)
        .and_then(|t| dataset_from_json(&t))
        .map_err(|e| load_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BranchKind;

    fn model() -> DecomposerModel {
        let cfg = ModelConfig {
            n_branches: 2,
            branch_kind: BranchKind::MlpAe { widths: vec![5, 3, 2] },
            ..ModelConfig::default()
        };
        DecomposerModel::new(cfg, 5).unwrap()
    }

    #[test]
    fn export_load_export_is_byte_identical() {
        let m = model().with_masks(vec![vec![0.25; 5], vec![1.0; 5]]).unwrap();
        for enc in [FloatEncoding::Bits, FloatEncoding::Decimal] {
            let first = model_to_json(&m, enc);
            let loaded = model_from_json(&first).unwrap();
            assert_eq!(loaded, m);
            assert_eq!(model_to_json(&loaded, enc), first);
        }
    }

    #[test]
    fn missing_field_is_named() {
        let text = model_to_json(&model(), FloatEncoding::Bits);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v.as_object_mut().unwrap().remove("config");
        let err = model_from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("config"), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = model_to_json(&model(), FloatEncoding::Bits);
        let err = model_from_json(&text[..text.len() / 2]).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn unknown_schema_version_rejected() {
        let text = model_to_json(&model(), FloatEncoding::Bits).replace("\"schema_version\": 1", "\"schema_version\": 2");
        let err = model_from_json(&text).unwrap_err().to_string();
        assert!(err.contains("schema_version"), "{err}");
    }

    #[test]
    fn shape_inconsistency_rejected() {
        let mut m = model();
        if let BranchParams::MlpAe { encoder, .. } = &mut m.branches[1] {
            encoder[0].bias.push(0.0);
        }
        let err = model_from_json(&model_to_json(&m, FloatEncoding::Bits)).unwrap_err().to_string();
        assert!(err.contains("branch 1"), "{err}");
    }

    #[test]
    fn dataset_round_trip() {
        let ds = Dataset::from_vectors(
            vec![vec![0.1, -2.5e-300], vec![f64::MAX, 3.0]],
            Standardization::identity(2),
            Some((1, 2)),
        )
        .unwrap();
        for enc in [FloatEncoding::Bits, FloatEncoding::Decimal] {
            let back = dataset_from_json(&dataset_to_json(&ds, enc)).unwrap();
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn load_reports_path() {
        let err = load_model("/nonexistent/model.json").unwrap_err();
        assert!(matches!(err, Error::Load { .. }));
    }
}
