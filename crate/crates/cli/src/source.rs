//! Where a dataset comes from: a dataset file, a synthetic generator spec or a
//! directory of PGM images.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use decompnet::data::{downsample, load_dataset, load_pgm, standardize, synth_lowrank, synth_two_halves};
use decompnet::Dataset;
use walkdir::WalkDir;

use crate::error::{CliError, CliResult};

/// Synthetic generator parameters, written `key=value,...`.
///
/// * `kind=lowrank` (default): `d=50,n=500,rank=3,noise=0.01,seed=0`
/// * `kind=halves`: `h=8,w=16,n=400,rank=1,active=1,noise=0.05,seed=0`
#[derive(Clone, Debug, PartialEq)]
pub enum SynthSpec {
    LowRank {
        d: usize,
        n: usize,
        rank: usize,
        noise: f64,
        seed: u64,
    },
    Halves {
        h: usize,
        w: usize,
        n: usize,
        rank: usize,
        active: f64,
        noise: f64,
        seed: u64,
    },
}

impl SynthSpec {
    pub fn with_seed(mut self, new: u64) -> Self {
        match &mut self {
            SynthSpec::LowRank { seed, .. } | SynthSpec::Halves { seed, .. } => *seed = new,
        }
        self
    }
}

fn num<T: FromStr>(key: &str, raw: &str) -> CliResult<T> {
    raw.parse()
        .map_err(|_| CliError::usage(format!("synth parameter {key}: cannot parse {raw:?}")))
}

impl FromStr for SynthSpec {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let mut pairs = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("synth parameter {part:?} is not key=value")))?;
            pairs.push((k.trim(), v.trim()));
        }
        let kind = pairs.iter().find(|(k, _)| *k == "kind").map_or("lowrank", |(_, v)| *v);
        let mut spec = match kind {
            "lowrank" => SynthSpec::LowRank {
                d: 50,
                n: 500,
                rank: 3,
                noise: 0.01,
                seed: 0,
            },
            "halves" => SynthSpec::Halves {
                h: 8,
                w: 16,
                n: 400,
                rank: 1,
                active: 1.0,
                noise: 0.05,
                seed: 0,
            },
            other => return Err(CliError::usage(format!("unknown synth kind {other:?} (lowrank or halves)"))),
        };
        for (k, v) in pairs.into_iter().filter(|(k, _)| *k != "kind") {
            match (&mut spec, k) {
                (SynthSpec::LowRank { d, .. }, "d") => *d = num(k, v)?,
                (SynthSpec::LowRank { n, .. } | SynthSpec::Halves { n, .. }, "n") => *n = num(k, v)?,
                (SynthSpec::LowRank { rank, .. } | SynthSpec::Halves { rank, .. }, "rank") => *rank = num(k, v)?,
                (SynthSpec::LowRank { noise, .. } | SynthSpec::Halves { noise, .. }, "noise") => *noise = num(k, v)?,
                (SynthSpec::LowRank { seed, .. } | SynthSpec::Halves { seed, .. }, "seed") => *seed = num(k, v)?,
                (SynthSpec::Halves { h, .. }, "h") => *h = num(k, v)?,
                (SynthSpec::Halves { w, .. }, "w") => *w = num(k, v)?,
                (SynthSpec::Halves { active, .. }, "active") => *active = num(k, v)?,
                _ => return Err(CliError::usage(format!("unknown synth parameter {k:?} for kind {kind}"))),
            }
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Synth(SynthSpec),
    PgmDir { dir: PathBuf, downsample: usize },
}

#[derive(Clone, Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    /// Ground-truth spectrum of a low-rank synthetic draw.
    pub spectrum: Option<Vec<f64>>,
}

impl DataSource {
    /// Exactly one of the three inputs must be given.
    pub fn pick(
        file: Option<PathBuf>,
        synth: Option<String>,
        pgm_dir: Option<PathBuf>,
        factor: Option<usize>,
    ) -> CliResult<Self> {
        match (file, synth, pgm_dir) {
            (Some(f), None, None) => Ok(DataSource::File(f)),
            (None, Some(s), None) => Ok(DataSource::Synth(s.parse()?)),
            (None, None, Some(dir)) => Ok(DataSource::PgmDir {
                dir,
                downsample: factor.unwrap_or(1),
            }),
            (None, None, None) => Err(CliError::usage("no data source: give --data, --synth or --pgm-dir")),
            _ => Err(CliError::usage("give only one of --data, --synth and --pgm-dir")),
        }
    }

    pub fn load(&self) -> CliResult<Loaded> {
        match self {
            DataSource::File(path) => Ok(Loaded {
                dataset: load_dataset(path)?,
                spectrum: None,
            }),
            DataSource::Synth(SynthSpec::LowRank { d, n, rank, noise, seed }) => {
                let (dataset, truth) = synth_lowrank(*d, *n, *rank, *noise, *seed)?;
                Ok(Loaded {
                    dataset,
                    spectrum: Some(truth.spectrum),
                })
            }
            DataSource::Synth(SynthSpec::Halves {
                h,
                w,
                n,
                rank,
                active,
                noise,
                seed,
            }) => Ok(Loaded {
                dataset: synth_two_halves((*h, *w), *n, *rank, *active, *noise, *seed)?,
                spectrum: None,
            }),
            DataSource::PgmDir { dir, downsample } => Ok(Loaded {
                dataset: load_pgm_dir(dir, *downsample)?,
                spectrum: None,
            }),
        }
    }
}

/// Every `.pgm` file under `dir` (recursively, in path order), block-averaged
/// by `factor` and standardized per pixel.
pub fn load_pgm_dir(dir: &Path, factor: usize) -> CliResult<Dataset> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!("{} is not a readable directory", dir.display())));
    }
    let mut paths = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
        let is_pgm = entry
            .path()
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        if entry.file_type().is_file() && is_pgm {
            paths.push(entry.into_path());
        }
    }
    if paths.is_empty() {
        return Err(CliError::usage(format!("no .pgm files under {}", dir.display())));
    }
    let mut shape = None;
    let mut raw = Vec::with_capacity(paths.len());
    for p in &paths {
        let img = load_pgm(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
        let (h, w, v) = downsample(&img, factor)?;
        match shape {
            None => shape = Some((h, w)),
            Some(s) if s != (h, w) => {
                return Err(CliError {
                    code: crate::error::EXIT_USAGE,
                    kind: "shape",
                    message: format!("{} is {h}x{w}, earlier images are {}x{}", p.display(), s.0, s.1),
                })
            }
            Some(_) => {}
        }
        raw.push(v);
    }
    log::info!("loaded {} images of {:?} from {}", raw.len(), shape, dir.display());
    Ok(standardize(&raw, shape)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_kinds() {
        let s: SynthSpec = "d=50,n=500,rank=3,noise=0.01,seed=1".parse().unwrap();
        assert_eq!(
            s,
            SynthSpec::LowRank {
                d: 50,
                n: 500,
                rank: 3,
                noise: 0.01,
                seed: 1
            }
        );
        let s: SynthSpec = "kind=halves,w=24,active=0.5".parse().unwrap();
        assert!(matches!(s, SynthSpec::Halves { h: 8, w: 24, active, .. } if active == 0.5));
        assert!("kind=halves,d=3".parse::<SynthSpec>().is_err());
        assert!("d=x".parse::<SynthSpec>().is_err());
        assert!("kind=cube".parse::<SynthSpec>().is_err());
    }

    #[test]
    fn exactly_one_source() {
        assert!(DataSource::pick(None, None, None, None).is_err());
        assert!(DataSource::pick(Some("a".into()), Some("d=2".into()), None, None).is_err());
        assert_eq!(
            DataSource::pick(None, None, Some("faces".into()), None).unwrap(),
            DataSource::PgmDir {
                dir: "faces".into(),
                downsample: 1
            }
        );
    }
}
