use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relgan_core::data::{list_pngs, load_png, PairStream};
use relgan_core::nn::{build_discriminator, GeneratorQuartet, Network};
use relgan_core::trainer::{RunState, TrainConfig};
use relgan_core::Precision;
use serde_json::{json, Value};

fn relgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relgan"))
        .args(args)
        .env("RELGAN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn write_json(p: &Path, v: &Value) {
    fs::write(p, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn small_spec() -> Value {
    json!({
        "image_size": 16,
        "n_shapes": 2,
        "background": {"kind": "gradient"},
        "seed": 3,
        "n_train": 8,
        "n_test": 4
    })
}

fn small_config(task: Value) -> Value {
    json!({
        "task": task,
        "arch": {"image_size": 16, "base_channels": 4, "residual_blocks": 1},
        "batch_size": 2,
        "total_steps": 6,
        "checkpoint_every": 3,
        "seed": 1
    })
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn make_dataset(root: &Path, name: &str) -> PathBuf {
    let spec = root.join(format!("{name}.spec.json"));
    write_json(&spec, &small_spec());
    let out = root.join(name);
    let o = relgan(&["make-dataset", "--spec", s(&spec), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

/// Checkpoint whose four generators are the identity map.
fn identity_checkpoint(path: &Path, image_size: usize) {
    let mut cfg = TrainConfig::default();
    cfg.arch.image_size = image_size;
    cfg.arch.base_channels = 4;
    cfg.arch.residual_blocks = 0;
    cfg.precision = Precision::Double;
    let d = |name: &str| build_discriminator::<f64>(name, &cfg.arch).unwrap();
    let quartet = GeneratorQuartet::from_parts(
        Network::identity("g_ab"),
        Network::identity("g_ba"),
        Some((Network::identity("g_ab_prime"), Network::identity("g_ba_prime"))),
        d("d_a"),
        d("d_b"),
    );
    let state = RunState::from_quartet(quartet, PairStream::new(4, 4, 2, 0, false).unwrap());
    state.to_checkpoint(&cfg).save(path).unwrap();
}

#[test]
fn unknown_flags_are_usage_errors() {
    let o = relgan(&["gradcheck", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn make_dataset_populates_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let first = make_dataset(dir.path(), "one");
    let second = make_dataset(dir.path(), "two");
    for sub in ["trainA", "trainB", "testA", "testB", "masks"] {
        assert!(!list_pngs(&first.join(sub)).unwrap().is_empty(), "{sub} is empty");
    }
    assert_eq!(list_pngs(&first.join("trainA")).unwrap().len(), 8);
    assert_eq!(tree(&first), tree(&second));
}

#[test]
fn make_dataset_refuses_non_empty_dir_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = make_dataset(dir.path(), "d");
    let spec = dir.path().join("d.spec.json");
    let o = relgan(&["make-dataset", "--spec", s(&spec), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    let o = relgan(&["make-dataset", "--spec", s(&spec), "--out", s(&out), "--force"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn make_dataset_rejects_equal_textures() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write_json(&spec, &json!({"texture_a": "checker", "texture_b": "checker"}));
    let o = relgan(&["make-dataset", "--spec", s(&spec), "--out", s(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/texture_b"), "{}", stderr(&o));
}

#[test]
fn train_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write_json(&cfg, &small_config(json!({"synthetic": small_spec()})));
    let out = dir.path().join("run");
    let o = relgan(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let lines = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let steps: Vec<Value> = lines
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v.get("event").is_none())
        .collect();
    assert_eq!(steps.len(), 6);
    assert!(steps.iter().all(|v| v["total_g"].as_f64().unwrap().is_finite()));
    assert!(out.join("checkpoints/step_000003.relg").is_file());
    assert!(out.join("checkpoints/final.relg").is_file());
    assert!(out.join("grids/final_ab.png").is_file());
    assert!(out.join("eval.json").is_file());
    let resolved = read_json(&out.join("config.json"));
    assert_eq!(resolved["tied"], json!(false));
    assert_eq!(resolved["total_steps"], json!(6));
}

#[test]
fn baseline_flag_resolves_to_tied_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let mut c = small_config(json!({"synthetic": small_spec()}));
    c["total_steps"] = json!(2);
    write_json(&cfg, &c);
    let out = dir.path().join("run");
    let o = relgan(&["train", "--config", s(&cfg), "--out", s(&out), "--baseline", "cyclegan"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = read_json(&out.join("config.json"));
    assert_eq!(resolved["tied"], json!(true));
    assert_eq!(resolved["weights"]["lambda_rel1"], json!(0.0));
    assert_eq!(resolved["weights"]["lambda_rel2"], json!(0.0));
}

#[test]
fn train_names_missing_dataset_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let missing = dir.path().join("no_such_dataset");
    write_json(&cfg, &small_config(json!({"dir": missing})));
    let o = relgan(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("no_such_dataset") && err.contains("/task/dir"), "{err}");
}

#[test]
fn train_reports_bad_key_with_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write_json(&cfg, &json!({"optimizer": {"lr": -1.0}}));
    let o = relgan(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/optimizer/lr"), "{}", stderr(&o));
}

#[test]
fn identity_checkpoint_translates_to_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), "d");
    let ckpt = dir.path().join("id.relg");
    identity_checkpoint(&ckpt, 16);
    let input = data.join("testA");
    let run = |out: &Path| {
        let o = relgan(&["translate", "--ckpt", s(&ckpt), "--in", s(&input), "--direction", "AB", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    let (one, two) = (dir.path().join("t1"), dir.path().join("t2"));
    run(&one);
    run(&two);
    for f in list_pngs(&input).unwrap() {
        let name = f.file_name().unwrap();
        let a = load_png(&f, 16).unwrap();
        let b = load_png(&one.join(name), 16).unwrap();
        let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 1.0 / 255.0, "{name:?}: {worst}");
    }
    assert_eq!(tree(&one), tree(&two));
}

#[test]
fn translate_requires_direction_and_valid_magic() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), "d");
    let ckpt = dir.path().join("id.relg");
    identity_checkpoint(&ckpt, 16);
    let input = data.join("testA");
    let out = dir.path().join("t");
    let o = relgan(&["translate", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--direction"), "{}", stderr(&o));

    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] = b'X';
    let bad = dir.path().join("bad.relg");
    fs::write(&bad, bytes).unwrap();
    let o = relgan(&["translate", "--ckpt", s(&bad), "--in", s(&input), "--direction", "AB", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad magic"), "{}", stderr(&o));
}

#[test]
fn perfect_translator_has_zero_background_change() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), "d");
    // With testA replaced by the ground truth the identity is the exact translation.
    fs::remove_dir_all(data.join("testA")).unwrap();
    fs::create_dir(data.join("testA")).unwrap();
    for f in list_pngs(&data.join("testB")).unwrap() {
        fs::copy(&f, data.join("testA").join(f.file_name().unwrap())).unwrap();
    }
    let ckpt = dir.path().join("id.relg");
    identity_checkpoint(&ckpt, 16);
    let report = dir.path().join("report.json");
    let o = relgan(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&report);
    assert_eq!(r["bps"], json!(0.0));
    assert_eq!(r["mae_translation"], json!(0.0));
    assert_eq!(r["n_samples"], json!(4));
    assert!(dir.path().join("report_grids/ab.png").is_file());
    assert!(dir.path().join("report.config.json").is_file());
}

#[test]
fn eval_reports_are_complete_and_comparable() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), "d");
    let ckpt = dir.path().join("id.relg");
    identity_checkpoint(&ckpt, 16);
    let mut reports = Vec::new();
    for direction in ["AB", "BA"] {
        let report = dir.path().join(format!("{direction}.json"));
        let o = relgan(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&report), "--direction", direction]);
        assert!(o.status.success(), "{}", stderr(&o));
        reports.push(read_json(&report));
    }
    for r in &reports {
        for key in ["mae_translation", "ssim", "psnr_db", "bps", "fgs"] {
            assert!(r[key].as_f64().is_some_and(f64::is_finite), "{key} in {r}");
        }
        // The identity leaves every input pixel where it was.
        assert_eq!(r["bps"], json!(0.0));
        assert!(r["mae_translation"].as_f64().unwrap() > 0.0);
    }
    assert_eq!(reports[0]["n_samples"], reports[1]["n_samples"]);
}

#[test]
fn eval_without_masks_explains_why() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), "d");
    fs::remove_dir_all(data.join("masks")).unwrap();
    let ckpt = dir.path().join("id.relg");
    identity_checkpoint(&ckpt, 16);
    let o = relgan(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("masks"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_detects_bugs() {
    let o = relgan(&["gradcheck", "--loss", "all"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["tl", "rel1", "rel2", "adv_g", "adv_d"] {
        assert!(text.lines().any(|l| l.starts_with(name) && l.ends_with("ok")), "{name}: {text}");
    }

    let o = relgan(&["gradcheck", "--loss", "all", "--inject-bug"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("worst entry g_ab."));

    // Below the conditioning of central differences.
    let o = relgan(&["gradcheck", "--loss", "tl", "--tol", "1e-12"]);
    assert_eq!(o.status.code(), Some(1));
}

fn fake_run(dir: &Path, bps: f64, ssim: f64) {
    fs::create_dir_all(dir).unwrap();
    let report = |direction: &str| {
        json!({
            "direction": direction,
            "mae_translation": 0.25,
            "ssim": ssim,
            "psnr_db": "inf",
            "bps": bps,
            "fgs": 0.5,
            "n_samples": 4
        })
    };
    write_json(&dir.join("eval.json"), &json!({"step": 10, "ab": report("AB"), "ba": report("BA")}));
    let metrics: String = (1..=10)
        .map(|i| format!("{}\n", json!({"step": i, "phase": "TL_REL1", "total_g": 1.0 / i as f64})))
        .collect();
    fs::write(dir.join("metrics.jsonl"), metrics).unwrap();
}

#[test]
fn compare_identical_runs_has_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fake_run(&a, 0.2, 0.7);
    fake_run(&b, 0.2, 0.7);
    let out = dir.path().join("cmp.json");
    let o = relgan(&["compare", "--run-a", s(&a), "--run-b", s(&b), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&out);
    for group in ["deltas", "deltas_ba"] {
        for (k, v) in r[group].as_object().unwrap() {
            assert_eq!(v.as_f64(), Some(0.0), "{group}.{k}");
        }
    }
    assert_eq!(r["bps_ratio"], json!(1.0));
    assert!(dir.path().join("cmp_loss.png").is_file());
    let axes = read_json(&dir.path().join("cmp_loss.axes.json"));
    assert_eq!(axes["x_max"], json!(10.0));
}

#[test]
fn compare_ratio_matches_hand_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fake_run(&a, 0.3125, 0.5);
    fake_run(&b, 0.25, 0.625);
    let out = dir.path().join("cmp.json");
    let o = relgan(&["compare", "--run-a", s(&a), "--run-b", s(&b), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&out);
    assert_eq!(r["bps_a"], json!(0.3125));
    assert_eq!(r["bps_b"], json!(0.25));
    assert_eq!(r["bps_ratio"], json!(0.8));
    assert_eq!(r["deltas"]["ssim"], json!(0.125));
    assert_eq!(r["deltas"]["psnr_db"], json!(0.0));
}

#[test]
fn compare_without_reports_fails() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    fake_run(&a, 0.2, 0.7);
    let o = relgan(&[
        "compare",
        "--run-a",
        s(&a),
        "--run-b",
        s(&dir.path().join("missing")),
        "--out",
        s(&dir.path().join("c.json")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("eval.json"), "{}", stderr(&o));
}
