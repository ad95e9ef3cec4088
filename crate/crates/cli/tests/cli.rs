use std::path::Path;
use std::process::{Command, Output};

use decompnet::data::{encode_pgm, load_dataset, load_model, load_pgm, save_dataset, save_model, FloatEncoding, GrayImage};
use decompnet::infer::decompose;
use decompnet::presets::{preset, PresetName};
use decompnet::{BranchKind, DecomposerModel, ModelConfig};
use serde_json::Value;

fn decompnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decompnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stdout);
    serde_json::from_str(text.lines().last().expect("a stdout line")).expect("json line")
}

/// Every failure prints exactly one JSON line on stderr.
fn assert_error_line(o: &Output, expect_code: i32) {
    assert_eq!(code(o), expect_code, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    let v: Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["code"], expect_code);
    assert!(v["error"].is_string() && v["message"].is_string());
}

fn gen_lowrank(dir: &Path) {
    let o = decompnet(dir, &["gen-data", "--synth", "d=12,n=80,rank=2,noise=0.01,seed=4", "--out", "ds.json"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn gen_data_synth_reports_shape_and_spectrum() {
    let t = tempfile::tempdir().unwrap();
    let o = decompnet(t.path(), &["gen-data", "--synth", "d=50,n=500,rank=3,noise=0.01,seed=1", "--out", "ds.json"]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert_eq!((v["d"].as_u64(), v["n"].as_u64()), (Some(50), Some(500)));
    assert_eq!(v["spectrum"], serde_json::json!([4.0, 2.0, 1.0]));
    let ds = load_dataset(t.path().join("ds.json")).unwrap();
    assert_eq!(ds.len(), 500);
    let (want, _) = decompnet::data::synth_lowrank(50, 500, 3, 0.01, 1).unwrap();
    assert_eq!(ds, want);
}

#[test]
fn gen_data_seed_flag_overrides_spec() {
    let t = tempfile::tempdir().unwrap();
    decompnet(t.path(), &["gen-data", "--synth", "d=6,n=10,rank=1,seed=1", "--seed", "9", "--out", "a.json"]);
    let (want, _) = decompnet::data::synth_lowrank(6, 10, 1, 0.01, 9).unwrap();
    assert_eq!(load_dataset(t.path().join("a.json")).unwrap(), want);
}

#[test]
fn gen_data_from_pgm_directory_downsamples() {
    let t = tempfile::tempdir().unwrap();
    let faces = t.path().join("faces/s1");
    std::fs::create_dir_all(&faces).unwrap();
    for k in 0..3u16 {
        let pixels = (0..112 * 92).map(|p| ((p as u16).wrapping_mul(k + 1)) % 256).collect();
        let img = GrayImage::new(92, 112, 255, pixels).unwrap();
        std::fs::write(faces.join(format!("{k}.pgm")), encode_pgm(&img, k == 1)).unwrap();
    }
    let o = decompnet(t.path(), &["gen-data", "--pgm-dir", "faces", "--downsample", "2", "--out", "ds.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["d"].as_u64(), Some(56 * 46));
    assert_eq!(v["image_shape"], serde_json::json!([56, 46]));
    assert_eq!(v["n"].as_u64(), Some(3));
}

#[test]
fn unreadable_inputs_exit_2() {
    let t = tempfile::tempdir().unwrap();
    assert_error_line(&decompnet(t.path(), &["gen-data", "--pgm-dir", "missing", "--out", "x.json"]), 2);
    assert_error_line(&decompnet(t.path(), &["gen-data", "--synth", "d=oops", "--out", "x.json"]), 2);
    assert_error_line(&decompnet(t.path(), &["train", "--data", "nope.json", "--out", "m.json"]), 2);
    assert_error_line(&decompnet(t.path(), &["train", "--no-such-flag"]), 2);
    assert_error_line(&decompnet(t.path(), &["train", "--synth", "d=4,n=10,rank=1", "--set", "nbranches=2", "--out", "m.json"]), 2);
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let t = tempfile::tempdir().unwrap();
    gen_lowrank(t.path());
    let o = decompnet(t.path(), &["train", "--data", "ds.json", "--preset", "exp1", "--epochs", "0", "--seed", "5", "--out", "m.json"]);
    assert_eq!(code(&o), 0);
    let mut p = preset(PresetName::Exp1, 12);
    p.config.seed = 5;
    let init = p.build(12, None, None).unwrap();
    assert_eq!(load_model(t.path().join("m.json")).unwrap(), init);
    let report = std::fs::read_to_string(t.path().join("m.report.jsonl")).unwrap();
    let last: Value = serde_json::from_str(report.lines().last().unwrap()).unwrap();
    assert_eq!(last["epochs"], 0);
}

#[test]
fn train_writes_one_report_line_per_epoch() {
    let t = tempfile::tempdir().unwrap();
    gen_lowrank(t.path());
    let o = decompnet(
        t.path(),
        &["train", "--data", "ds.json", "--preset", "exp1", "--n-branches", "2", "--epochs", "4", "--out", "m.json", "--report", "r.jsonl"],
    );
    assert_eq!(code(&o), 0);
    let report = std::fs::read_to_string(t.path().join("r.jsonl")).unwrap();
    let lines: Vec<Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    for (k, l) in lines[..4].iter().enumerate() {
        assert_eq!(l["epoch"], k);
        assert_eq!(l["mean_sigma"].as_array().unwrap().len(), 2);
        assert!(l["loss"]["total"].as_f64().unwrap().is_finite());
    }
    assert_eq!(lines[4]["reason"], "epoch limit reached");
    assert_eq!(load_model(t.path().join("m.json")).unwrap().n_branches(), 2);
}

#[test]
fn training_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    gen_lowrank(t.path());
    for out in ["a.json", "b.json"] {
        decompnet(t.path(), &["train", "--data", "ds.json", "--preset", "exp1", "--epochs", "3", "--out", out]);
    }
    let a = std::fs::read(t.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(t.path().join("b.json")).unwrap());
}

#[test]
fn config_file_sits_between_preset_and_flags() {
    let t = tempfile::tempdir().unwrap();
    gen_lowrank(t.path());
    std::fs::write(
        t.path().join("run.toml"),
        "preset = \"exp1\"\n[data]\nfile = \"ds.json\"\n[model]\nn_branches = 4\nsweeps = 2\n[train]\nepochs = 0\n[output]\nmodel = \"cfg.json\"\nencoding = \"decimal\"\n",
    )
    .unwrap();
    assert_eq!(code(&decompnet(t.path(), &["train", "--config", "run.toml"])), 0);
    let m = load_model(t.path().join("cfg.json")).unwrap();
    assert_eq!((m.n_branches(), m.config.sweeps, m.config.damping), (4, 2, 0.7));
    assert!(std::fs::read_to_string(t.path().join("cfg.json")).unwrap().contains("e-"));

    let o = decompnet(t.path(), &["train", "--config", "run.toml", "--set", "model.n_branches=3", "--out", "set.json"]);
    assert_eq!(code(&o), 0);
    assert_eq!(load_model(t.path().join("set.json")).unwrap().n_branches(), 3);
    let o = decompnet(
        t.path(),
        &["train", "--config", "run.toml", "--set", "n_branches=3", "--n-branches", "2", "--out", "flag.json"],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(load_model(t.path().join("flag.json")).unwrap().n_branches(), 2);
}

#[test]
fn exp3_attaches_half_area_masks() {
    let t = tempfile::tempdir().unwrap();
    decompnet(t.path(), &["gen-data", "--synth", "kind=halves,h=8,w=16,n=40,seed=3", "--out", "h.json"]);
    let o = decompnet(t.path(), &["train", "--data", "h.json", "--preset", "exp3", "--epochs", "0", "--out", "m.json"]);
    assert_eq!(code(&o), 0);
    let m = load_model(t.path().join("m.json")).unwrap();
    let masks = m.masks.as_ref().expect("masks");
    assert_eq!(masks.len(), m.n_branches());
    assert_eq!(decompnet::presets::MASK_AREA_FRACTION, 0.5);
    assert_eq!(masks, &decompnet::presets::branch_masks((8, 16), m.n_branches(), m.config.seed, None).unwrap());
    let o = decompnet(
        t.path(),
        &["train", "--data", "h.json", "--preset", "exp3", "--n-branches", "2", "--mask-centers", "3.5,3.5;3.5,11.5", "--epochs", "0", "--out", "c.json"],
    );
    assert_eq!(code(&o), 0);
    let m = load_model(t.path().join("c.json")).unwrap();
    for mask in m.masks.as_ref().unwrap() {
        let inside = mask.iter().filter(|&&v| v >= 0.5).count();
        assert_eq!(inside, 60);
    }
    // flat data has no image shape to place masks on
    gen_lowrank(t.path());
    assert_error_line(&decompnet(t.path(), &["train", "--data", "ds.json", "--preset", "exp3", "--out", "x.json"]), 2);
}

#[test]
fn divergence_exits_3() {
    let t = tempfile::tempdir().unwrap();
    gen_lowrank(t.path());
    let o = decompnet(t.path(), &["train", "--data", "ds.json", "--preset", "exp1", "--lr", "1e300", "--epochs", "3", "--out", "m.json"]);
    assert_error_line(&o, 3);
    assert!(!t.path().join("m.json").exists());
}

fn trained_pair(dir: &Path) {
    gen_lowrank(dir);
    let o = decompnet(dir, &["train", "--data", "ds.json", "--preset", "exp1", "--n-branches", "2", "--epochs", "20", "--out", "m.json"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn decompose_writes_images_and_exact_sigma() {
    let t = tempfile::tempdir().unwrap();
    trained_pair(t.path());
    let o = decompnet(t.path(), &["decompose", "--model", "m.json", "--data", "ds.json", "--ids", "0,7", "--out", "dec"]);
    assert_eq!(code(&o), 0);
    let model = load_model(t.path().join("m.json")).unwrap();
    let ds = load_dataset(t.path().join("ds.json")).unwrap();
    for id in [0usize, 7] {
        for name in ["original", "component_0", "component_1", "sum"] {
            let img = load_pgm(t.path().join(format!("dec/{id}_{name}.pgm"))).unwrap();
            assert_eq!((img.height, img.width, img.maxval), (1, 12, 255));
        }
        let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(t.path().join(format!("dec/{id}.json"))).unwrap()).unwrap();
        let sigma: Vec<f64> = serde_json::from_value(sidecar["sigma"].clone()).unwrap();
        let want = decompose(&model, &ds.samples[id].x).unwrap();
        let bits = |v: &[f64]| v.iter().map(|s| s.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&sigma), bits(want.sigma.as_slice()));
        assert_eq!(sidecar["images"].as_array().unwrap().len(), 4);
        assert!(sidecar["loss"]["recon"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn decompose_unknown_id_exits_2() {
    let t = tempfile::tempdir().unwrap();
    trained_pair(t.path());
    assert_error_line(&decompnet(t.path(), &["decompose", "--model", "m.json", "--data", "ds.json", "--ids", "80", "--out", "dec"]), 2);
    assert!(!t.path().join("dec").exists());
}

#[test]
fn synth_at_estimated_sigma_equals_decompose_sum() {
    let t = tempfile::tempdir().unwrap();
    trained_pair(t.path());
    decompnet(t.path(), &["decompose", "--model", "m.json", "--data", "ds.json", "--ids", "3", "--out", "dec"]);
    let o = decompnet(t.path(), &["synth", "--model", "m.json", "--data", "ds.json", "--overrides-file", "dec/3.json", "--out", "a.pgm"]);
    assert_eq!(code(&o), 0);
    let sum = std::fs::read(t.path().join("dec/3_sum.pgm")).unwrap();
    assert_eq!(std::fs::read(t.path().join("a.pgm")).unwrap(), sum);

    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(t.path().join("dec/3.json")).unwrap()).unwrap();
    let dense: Vec<String> = sidecar["sigma"].as_array().unwrap().iter().map(|v| v.to_string()).collect();
    let o = decompnet(
        t.path(),
        &["synth", "--model", "m.json", "--data", "ds.json", "--sample", "3", "--sigma", &dense.join(","), "--out", "b.pgm"],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(t.path().join("b.pgm")).unwrap(), sum);

    // a synth sidecar feeds back into synth
    let o = decompnet(t.path(), &["synth", "--model", "m.json", "--data", "ds.json", "--overrides-file", "b.json", "--out", "c.pgm"]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(t.path().join("c.pgm")).unwrap(), sum);
}

#[test]
fn synth_edits_change_the_image() {
    let t = tempfile::tempdir().unwrap();
    trained_pair(t.path());
    decompnet(t.path(), &["synth", "--model", "m.json", "--data", "ds.json", "--sample", "1", "--out", "base.pgm"]);
    let o = decompnet(t.path(), &["synth", "--model", "m.json", "--data", "ds.json", "--sample", "1", "--sigma", "0=0", "--out", "edit.pgm"]);
    assert_eq!(code(&o), 0);
    assert_ne!(std::fs::read(t.path().join("base.pgm")).unwrap(), std::fs::read(t.path().join("edit.pgm")).unwrap());
    let side: Value = serde_json::from_str(&std::fs::read_to_string(t.path().join("edit.json")).unwrap()).unwrap();
    assert_eq!(side["sigma"][0], 0.0);
    assert_eq!(side["sigma"][1], side["estimated_sigma"][1]);
}

#[test]
fn synth_rejects_negative_and_malformed_sigma() {
    let t = tempfile::tempdir().unwrap();
    trained_pair(t.path());
    let base = ["synth", "--model", "m.json", "--data", "ds.json", "--sample", "1", "--out", "x.pgm"];
    for sigma in ["1,-0.5", "1=-2", "1,2,3", "a,b"] {
        let mut args = base.to_vec();
        args.extend(["--sigma", sigma]);
        assert_error_line(&decompnet(t.path(), &args), 2);
    }
    assert!(!t.path().join("x.pgm").exists());
}

#[test]
fn eval_svd_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    gen_lowrank(t.path());
    decompnet(t.path(), &["train", "--data", "ds.json", "--preset", "exp1", "--n-branches", "2", "--epochs", "0", "--out", "init.json"]);
    let o = decompnet(t.path(), &["eval-svd", "--model", "init.json", "--data", "ds.json"]);
    assert_error_line(&o, 1);
    let report = stdout_json(&o);
    assert_eq!(report["pass"], false);
    assert_eq!(report["matches"].as_array().unwrap().len(), 2);
    let o = decompnet(t.path(), &["eval-svd", "--model", "init.json", "--data", "ds.json", "--min-cos", "0"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["pass"], true);

    let ds = load_dataset(t.path().join("ds.json")).unwrap();
    let cfg = ModelConfig {
        n_branches: 2,
        branch_kind: BranchKind::LinearAe { code_dim: 2 },
        ..ModelConfig::default()
    };
    save_model(&DecomposerModel::new(cfg, ds.dim).unwrap(), t.path().join("lin.json"), FloatEncoding::Bits).unwrap();
    assert_error_line(&decompnet(t.path(), &["eval-svd", "--model", "lin.json", "--data", "ds.json"]), 2);
}

#[test]
fn mismatched_model_and_data_exit_2() {
    let t = tempfile::tempdir().unwrap();
    trained_pair(t.path());
    let (other, _) = decompnet::data::synth_lowrank(7, 10, 1, 0.0, 1).unwrap();
    save_dataset(&other, t.path().join("other.json"), FloatEncoding::Bits).unwrap();
    assert_error_line(&decompnet(t.path(), &["synth", "--model", "m.json", "--data", "other.json", "--sample", "0", "--out", "x.pgm"]), 2);
}

#[test]
fn serve_on_busy_port_exits_2() {
    let t = tempfile::tempdir().unwrap();
    trained_pair(t.path());
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    assert_error_line(&decompnet(t.path(), &["serve", "--model", "m.json", "--data", "ds.json", "--port", &port]), 2);
}
