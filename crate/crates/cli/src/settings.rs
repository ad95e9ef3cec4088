//! Training settings assembled from a preset, a TOML config file, `--set`
//! overrides and dedicated flags, in that order of increasing precedence.
//!
//! Settings live in one JSON tree while they are merged:
//!
//! ```text
//! { "model": ModelConfig, "train": TrainOptions, "masked": bool }
//! ```
//!
//! A `--set` key is a dotted path into that tree (`model.n_branches`,
//! `train.adam.learning_rate`). A key without a `model.`/`train.` prefix is
//! looked up under `model`, then `train`, then the root. Values are parsed as
//! JSON when possible and taken as strings otherwise.

use std::path::{Path, PathBuf};

use decompnet::data::FloatEncoding;
use decompnet::presets::{self, PresetName};
use decompnet::{ModelConfig, TrainOptions};
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub file: Option<PathBuf>,
    pub synth: Option<String>,
    pub pgm_dir: Option<PathBuf>,
    pub downsample: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub encoding: Option<FloatEncoding>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSection {
    pub port: Option<u16>,
    pub host: Option<String>,
    pub static_dir: Option<PathBuf>,
}

/// Contents of a `--config` file. Every field is optional.
///
/// ```toml
/// preset = "exp1"
/// seed = 7
/// mask_centers = [[3.5, 3.5], [3.5, 11.5]]
///
/// [data]
/// synth = "d=50,n=500,rank=3,noise=0.01,seed=1"
///
/// [model]
/// n_branches = 5
///
/// [train]
/// epochs = 200
/// adam = { learning_rate = 1e-3 }
///
/// [output]
/// model = "model.json"
/// ```
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<PresetName>,
    pub seed: Option<u64>,
    pub verbose: Option<bool>,
    pub masked: Option<bool>,
    pub mask_centers: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: toml::Table,
    #[serde(default)]
    pub train: toml::Table,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub serve: ServeSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message)))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::usage(e.message().to_string()))
    }
}

/// Values from dedicated command-line flags.
#[derive(Clone, Debug, Default)]
pub struct FlagOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub n_branches: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSetup {
    pub config: ModelConfig,
    pub options: TrainOptions,
    pub masked: bool,
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("settings serialize")
}

/// Recursive object merge. Objects carrying a `type` tag replace the target
/// outright, so switching enum variants drops stale fields.
pub fn merge(target: &mut Value, patch: &Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) if !p.contains_key("type") => {
            for (k, v) in p {
                match t.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        t.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (t, p) => *t = p.clone(),
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies one `key=value` override to the settings tree.
pub fn apply_set(tree: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--set expects key=value, got {assignment:?}")))?;
    let key = key.trim();
    let mut path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::usage(format!("bad --set key {key:?}")));
    }
    let root = tree.as_object().expect("settings root is an object");
    let has = |section: &str, field: &str| root.get(section).and_then(|s| s.get(field)).is_some();
    if !matches!(path[0], "model" | "train") {
        if has("model", path[0]) {
            path.insert(0, "model");
        } else if has("train", path[0]) {
            path.insert(0, "train");
        } else if !root.contains_key(path[0]) {
            return Err(CliError::usage(format!("unknown setting {key:?}")));
        }
    } else if path.len() < 2 || !has(path[0], path[1]) {
        return Err(CliError::usage(format!("unknown setting {key:?}")));
    }
    let mut node = tree;
    for seg in &path[..path.len() - 1] {
        if !node.get(*seg).is_some_and(Value::is_object) {
            node.as_object_mut()
                .ok_or_else(|| CliError::usage(format!("{key:?} does not name a field")))?
                .insert(seg.to_string(), Value::Object(Map::new()));
        }
        node = node.get_mut(*seg).expect("just inserted");
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::usage(format!("{key:?} does not name a field")))?
        .insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Merges everything into the final model configuration and training options.
/// Without a preset the library defaults are the base.
pub fn resolve(
    preset: Option<PresetName>,
    dim: usize,
    file: &ConfigFile,
    sets: &[String],
    flags: &FlagOverrides,
) -> CliResult<TrainSetup> {
    let base = match preset {
        Some(name) => {
            let p = presets::preset(name, dim);
            (p.config, p.options, p.masked)
        }
        None => (ModelConfig::default(), TrainOptions::default(), false),
    };
    let mut tree = serde_json::json!({
        "model": to_value(&base.0),
        "train": to_value(&base.1),
        "masked": base.2,
    });
    merge(&mut tree["model"], &to_value(&file.model));
    merge(&mut tree["train"], &to_value(&file.train));
    if let Some(seed) = file.seed {
        tree["model"]["seed"] = seed.into();
    }
    if let Some(masked) = file.masked {
        tree["masked"] = masked.into();
    }
    for s in sets {
        apply_set(&mut tree, s)?;
    }
    if let Some(v) = flags.epochs {
        tree["train"]["epochs"] = v.into();
    }
    if let Some(v) = flags.batch_size {
        tree["train"]["batch_size"] = v.into();
    }
    if let Some(v) = flags.learning_rate {
        tree["train"]["adam"]["learning_rate"] = v.into();
    }
    if let Some(v) = flags.seed {
        tree["model"]["seed"] = v.into();
    }
    if let Some(v) = flags.n_branches {
        tree["model"]["n_branches"] = v.into();
    }
    let field = |name: &'static str| move |e: serde_json::Error| CliError::usage(format!("invalid {name} settings: {e}"));
    let config: ModelConfig = serde_json::from_value(tree["model"].clone()).map_err(field("model"))?;
    let options: TrainOptions = serde_json::from_value(tree["train"].clone()).map_err(field("train"))?;
    let masked = tree["masked"]
        .as_bool()
        .ok_or_else(|| CliError::usage("masked must be true or false"))?;
    let violations = decompnet::model::validate_config(&config);
    if !violations.is_empty() {
        return Err(CliError::usage(format!("invalid model settings: {}", violations.join("; "))));
    }
    if options.batch_size == 0 {
        return Err(CliError::usage("batch_size must be ≥ 1"));
    }
    Ok(TrainSetup { config, options, masked })
}
