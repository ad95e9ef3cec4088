use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use decompnet::data::{load_dataset, load_model, save_dataset, save_model, write_pgm, FloatEncoding};
use decompnet::presets::branch_masks;
use decompnet::svd::{compare_branches_to_svd, svd_deflation};
use decompnet::{Dataset, DecomposerModel, Trainer};
use serde_json::json;

use crate::args::{Cli, Command, ModelData, SourceArgs};
use crate::error::{CliError, CliResult};
use crate::render::Rendered;
use crate::settings::{self, ConfigFile, FlagOverrides};
use crate::source::DataSource;
use crate::studio::{self, ImageRecord, Sidecar, SIDECAR_VERSION};

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.common.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let level = if cli.common.verbose || cfg.verbose == Some(true) { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init()
        .ok();
    let out = cli.common.out.clone();
    match cli.command {
        Command::GenData { source, encoding } => {
            let enc = encoding.map(Into::into).or(cfg.output.encoding).unwrap_or_default();
            gen_data(&source, &cfg, cli.common.seed, out.or(cfg.output.dataset.clone()), enc)
        }
        Command::Train {
            source,
            preset,
            sets,
            epochs,
            batch_size,
            lr,
            n_branches,
            mask_centers,
            report,
            encoding,
        } => {
            let centers = match mask_centers {
                Some(s) => Some(parse_centers(&s)?),
                None => cfg.mask_centers.clone(),
            };
            let flags = FlagOverrides {
                epochs,
                batch_size,
                learning_rate: lr,
                seed: cli.common.seed,
                n_branches,
            };
            let job = TrainJob {
                preset: preset.or(cfg.preset),
                sets,
                flags,
                centers,
                out: out.or(cfg.output.model.clone()),
                report: report.or(cfg.output.report.clone()),
                encoding: encoding.map(Into::into).or(cfg.output.encoding).unwrap_or_default(),
            };
            train(&source, &cfg, job)
        }
        Command::Decompose { io, ids } => {
            let (model, ds) = load_pair(&io, &cfg)?;
            let dir = out.ok_or_else(|| CliError::usage("decompose needs --out DIR"))?;
            decompose(&model, &ds, &ids, &dir)
        }
        Command::Synth {
            io,
            sample,
            sigma,
            overrides_file,
        } => {
            let (model, ds) = load_pair(&io, &cfg)?;
            let path = out.ok_or_else(|| CliError::usage("synth needs --out FILE.pgm"))?;
            synth(&model, &ds, sample, sigma.as_deref(), overrides_file.as_deref(), &path)
        }
        Command::EvalSvd { io, min_cos } => {
            let (model, ds) = load_pair(&io, &cfg)?;
            eval_svd(&model, &ds, min_cos)
        }
        Command::Serve {
            io,
            port,
            host,
            static_dir,
        } => {
            let (model, ds) = load_pair(&io, &cfg)?;
            let host = host.or(cfg.serve.host.clone()).unwrap_or_else(|| "127.0.0.1".into());
            let port = port.or(cfg.serve.port).unwrap_or(8080);
            let state = crate::server::AppState::new(model, ds, static_dir.or(cfg.serve.static_dir.clone()))?;
            crate::server::run(state, &host, port)
        }
    }
}

fn print_line(v: &serde_json::Value) {
    println!("{v}");
}

fn source_from(args: &SourceArgs, cfg: &ConfigFile) -> CliResult<DataSource> {
    if args.any() {
        DataSource::pick(args.data.clone(), args.synth.clone(), args.pgm_dir.clone(), args.downsample)
    } else {
        let d = &cfg.data;
        DataSource::pick(d.file.clone(), d.synth.clone(), d.pgm_dir.clone(), args.downsample.or(d.downsample))
    }
}

fn load_pair(io: &ModelData, cfg: &ConfigFile) -> CliResult<(DecomposerModel, Dataset)> {
    let model_path = io
        .model
        .clone()
        .or(cfg.output.model.clone())
        .ok_or_else(|| CliError::usage("missing --model"))?;
    let data_path = io
        .data
        .clone()
        .or(cfg.data.file.clone())
        .ok_or_else(|| CliError::usage("missing --data"))?;
    let model = load_model(&model_path)?;
    let ds = load_dataset(&data_path)?;
    studio::check_compatible(&model, &ds)?;
    Ok((model, ds))
}

pub fn gen_data(
    source: &SourceArgs,
    cfg: &ConfigFile,
    seed: Option<u64>,
    out: Option<PathBuf>,
    enc: FloatEncoding,
) -> CliResult<()> {
    let out = out.ok_or_else(|| CliError::usage("gen-data needs --out FILE"))?;
    let mut src = source_from(source, cfg)?;
    if let (Some(seed), DataSource::Synth(spec)) = (seed, &src) {
        src = DataSource::Synth(spec.clone().with_seed(seed));
    }
    let loaded = src.load()?;
    save_dataset(&loaded.dataset, &out, enc)?;
    print_line(&json!({
        "out": out,
        "d": loaded.dataset.dim,
        "n": loaded.dataset.len(),
        "image_shape": loaded.dataset.image_shape,
        "spectrum": loaded.spectrum,
    }));
    Ok(())
}

/// `r,c;r,c;...`
pub fn parse_centers(s: &str) -> CliResult<Vec<(f64, f64)>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let bad = || CliError::usage(format!("mask center {p:?} is not row,col"));
            let (r, c) = p.split_once(',').ok_or_else(bad)?;
            Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

pub struct TrainJob {
    pub preset: Option<decompnet::presets::PresetName>,
    pub sets: Vec<String>,
    pub flags: FlagOverrides,
    pub centers: Option<Vec<(f64, f64)>>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub encoding: FloatEncoding,
}

fn default_report_path(model: &Path) -> PathBuf {
    model.with_extension("report.jsonl")
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path.display(), e))
}

pub fn train(source: &SourceArgs, cfg: &ConfigFile, job: TrainJob) -> CliResult<()> {
    let out = job.out.ok_or_else(|| CliError::usage("train needs --out FILE"))?;
    let ds = source_from(source, cfg)?.load()?.dataset;
    let setup = settings::resolve(job.preset, ds.dim, cfg, &job.sets, &job.flags)?;
    let mut model = DecomposerModel::new(setup.config.clone(), ds.dim)?;
    if setup.masked || job.centers.is_some() {
        let shape = ds
            .image_shape
            .ok_or_else(|| CliError::usage("masks need image data (PGM directory or image-shaped dataset)"))?;
        let masks = branch_masks(shape, setup.config.n_branches, setup.config.seed, job.centers.as_deref())?;
        model = model.with_masks(masks)?;
    }
    log::info!(
        "training {} branches of {:?} on {} samples of dimension {}",
        setup.config.n_branches,
        setup.config.branch_kind,
        ds.len(),
        ds.dim
    );
    let mut trainer = Trainer::new(model, setup.options.clone());
    let report = trainer.train(&ds)?;
    for e in &report.epochs {
        log::info!("epoch {} loss {:.6e} mean sigma {:?}", e.epoch, e.loss.total, e.mean_sigma);
    }
    save_model(&trainer.model, &out, job.encoding)?;
    let report_path = job.report.unwrap_or_else(|| default_report_path(&out));
    let mut lines = Vec::new();
    for e in &report.epochs {
        writeln!(lines, "{}", serde_json::to_string(e).expect("report serializes")).expect("vec write");
    }
    let summary = json!({
        "converged": report.converged,
        "reason": report.reason,
        "epochs": report.epochs.len(),
    });
    writeln!(lines, "{summary}").expect("vec write");
    write_file(&report_path, &lines)?;
    print_line(&json!({
        "model": out,
        "report": report_path,
        "epochs": report.epochs.len(),
        "converged": report.converged,
        "reason": report.reason,
        "final_loss": report.epochs.last().map(|e| e.loss.total),
    }));
    Ok(())
}

fn save_image(dir: &Path, name: String, img: &Rendered, shape: (usize, usize)) -> CliResult<String> {
    write_pgm(dir.join(&name), &img.to_image(shape)?)?;
    Ok(name)
}

fn record(role: &str, index: Option<usize>, file: String, img: &Rendered) -> ImageRecord {
    ImageRecord {
        role: role.into(),
        index,
        file,
        scale: img.scale,
        offset: img.offset,
    }
}

fn write_sidecar(path: &Path, sidecar: &Sidecar) -> CliResult<()> {
    let text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    write_file(path, text.as_bytes())
}

pub fn decompose(model: &DecomposerModel, ds: &Dataset, ids: &[usize], dir: &Path) -> CliResult<()> {
    for &id in ids {
        studio::sample(ds, id)?;
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    let shape = studio::render_shape(ds);
    for &id in ids {
        let dec = studio::decompose_sample(model, ds, id)?;
        let mut images = Vec::new();
        let img = studio::render_original(ds, id)?;
        images.push(record("original", None, save_image(dir, format!("{id}_original.pgm"), &img, shape)?, &img));
        for i in 0..dec.components.len() {
            let img = studio::render_component(ds, &dec, i)?;
            let file = save_image(dir, format!("{id}_component_{i}.pgm"), &img, shape)?;
            images.push(record("component", Some(i), file, &img));
        }
        let img = studio::render_sum(ds, &dec, dec.sigma.as_slice())?;
        images.push(record("sum", None, save_image(dir, format!("{id}_sum.pgm"), &img, shape)?, &img));
        let sidecar_path = dir.join(format!("{id}.json"));
        write_sidecar(
            &sidecar_path,
            &Sidecar {
                schema_version: SIDECAR_VERSION,
                sample: id,
                sigma: dec.sigma.0.clone(),
                estimated_sigma: None,
                loss: Some(dec.loss),
                images,
            },
        )?;
        print_line(&json!({"sample": id, "sigma": dec.sigma.0, "sidecar": sidecar_path}));
    }
    Ok(())
}

/// Dense `a,b,c` replaces every entry; sparse `i=v,...` edits `base` in place.
pub fn parse_sigma(spec: &str, base: &[f64]) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| CliError::usage(format!("cannot parse sigma value {s:?}")))
    };
    if parts.iter().all(|p| !p.contains('=')) {
        return parts.iter().map(|p| num(p)).collect();
    }
    let mut sigma = base.to_vec();
    for p in parts {
        let (i, v) = p
            .split_once('=')
            .ok_or_else(|| CliError::usage("mix of dense and sparse sigma entries"))?;
        let i: usize = i
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("bad sigma index {i:?}")))?;
        let slot = sigma
            .get_mut(i)
            .ok_or_else(|| CliError::usage(format!("sigma index {i} out of range (N = {})", base.len())))?;
        *slot = num(v)?;
    }
    Ok(sigma)
}

pub fn synth(
    model: &DecomposerModel,
    ds: &Dataset,
    sample: Option<usize>,
    sigma: Option<&str>,
    overrides_file: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let file = match overrides_file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p.display(), e))?;
            let sc: Sidecar = serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            Some(sc)
        }
        None => None,
    };
    let id = match (sample, &file) {
        (Some(a), Some(f)) if a != f.sample => {
            return Err(CliError::usage(format!("--sample {a} disagrees with the overrides file (sample {})", f.sample)))
        }
        (Some(a), _) => a,
        (None, Some(f)) => f.sample,
        (None, None) => return Err(CliError::usage("synth needs --sample or --overrides-file")),
    };
    let dec = studio::decompose_sample(model, ds, id)?;
    let mut edited = match &file {
        Some(f) => f.sigma.clone(),
        None => dec.sigma.0.clone(),
    };
    if let Some(spec) = sigma {
        edited = parse_sigma(spec, &edited)?;
    }
    let img = studio::render_sum(ds, &dec, &edited)?;
    write_pgm(out, &img.to_image(studio::render_shape(ds))?)?;
    let file_name = out.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let sidecar_path = out.with_extension("json");
    write_sidecar(
        &sidecar_path,
        &Sidecar {
            schema_version: SIDECAR_VERSION,
            sample: id,
            sigma: edited.clone(),
            estimated_sigma: Some(dec.sigma.0.clone()),
            loss: None,
            images: vec![record("synth", None, file_name, &img)],
        },
    )?;
    print_line(&json!({"sample": id, "sigma": edited, "out": out, "sidecar": sidecar_path}));
    Ok(())
}

pub fn eval_svd(model: &DecomposerModel, ds: &Dataset, min_cos: f64) -> CliResult<()> {
    if !model.config.branch_kind.is_rank1() {
        return Err(CliError::usage(format!(
            "eval-svd needs rank-1 branches, the model has {:?}",
            model.config.branch_kind
        )));
    }
    let oracle = svd_deflation(&ds.matrix(), model.n_branches(), 10_000, 1e-12)?;
    let report = compare_branches_to_svd(model, &oracle)?;
    let min = report.min_abs_cos();
    let pass = min >= min_cos;
    print_line(&json!({
        "matches": report.matches.iter().map(|m| json!({
            "branch": m.branch,
            "oracle_index": m.oracle_index,
            "abs_cos": m.abs_cos,
        })).collect::<Vec<_>>(),
        "principal_angles_deg": report.principal_angles_deg,
        "singular_values": oracle.singular_values(),
        "min_abs_cos": min,
        "max_angle_deg": report.max_angle_deg(),
        "min_cos": min_cos,
        "pass": pass,
    }));
    if pass {
        Ok(())
    } else {
        Err(CliError::threshold(format!("min |cos| {min:.6} below {min_cos}")))
    }
}
