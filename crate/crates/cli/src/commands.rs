use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use relgan_core::data::{list_pngs, load_png, save_png, write_dataset_dir, Dataset, Image, SyntheticTaskSpec};
use relgan_core::metrics::{evaluate, translate_test_set, write_grid, Direction, EvalReport};
use relgan_core::trainer::{
    checkpoint_precision, fit_with, parse_json, Checkpoint, EvalSummary, FitOptions, RunState, TrainConfig,
};
use relgan_core::verify::{run_gradchecks, GradcheckOptions, LossSelector};
use relgan_core::{Error, Precision, Result, Scalar};

use crate::plot::{render, Series};

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Json(_) | Error::Rel1Unpaired => 2,
        _ => 1,
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_config_text(path: &Path, flag: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::config(flag, format!("cannot read {}: {e}", path.display())))
}

/// `<dir>/<stem><suffix>` next to an output file.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

#[derive(Args)]
pub struct MakeDatasetArgs {
    /// Task spec JSON; defaults apply to missing keys and to a missing file.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Replace the dataset files of a non-empty output directory.
    #[arg(long)]
    force: bool,
}

pub fn make_dataset(args: MakeDatasetArgs) -> Result<ExitCode> {
    let spec: SyntheticTaskSpec = match &args.spec {
        Some(p) => parse_json(&read_config_text(p, "--spec")?)?,
        None => SyntheticTaskSpec::default(),
    };
    spec.validate()?;
    let non_empty = fs::read_dir(&args.out).is_ok_and(|mut d| d.next().is_some());
    if non_empty {
        if !args.force {
            return Err(Error::config(
                "--out",
                format!("{} is not empty; pass --force to overwrite", args.out.display()),
            ));
        }
        for sub in ["trainA", "trainB", "testA", "testB", "masks"] {
            let p = args.out.join(sub);
            if p.is_dir() {
                fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    write_dataset_dir(&spec, &args.out)?;
    println!(
        "wrote {} train and {} test pairs to {}",
        spec.n_train,
        spec.n_test,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Baseline {
    Cyclegan,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Train the baseline instead: tied generators, no relative terms.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
}

pub fn train(args: TrainArgs) -> Result<ExitCode> {
    let mut cfg: TrainConfig = parse_json(&read_config_text(&args.config, "--config")?)?;
    if let Some(Baseline::Cyclegan) = args.baseline {
        cfg = cfg.cyclegan_baseline();
    }
    let start = Instant::now();
    let total = cfg.total_steps;
    let every = (total / 20).max(1);
    let opts = FitOptions { resume: args.resume };
    let summary = fit_with(&cfg, &args.out, &opts, |step, r| {
        if step % every == 0 || step == total {
            eprintln!(
                "step {step:>6}/{total}  total_g {:.4}  total_d {:.4}  tl {:.4}  rel2 {:.4}  [{:.0?}]",
                r.total_g,
                r.total_d,
                r.tl_a + r.tl_b,
                r.rel2_a + r.rel2_b,
                start.elapsed()
            );
        }
    })?;
    if let Some(t) = summary.transition_step {
        println!("rel2 switched on at step {t}");
    }
    if let Some(e) = &summary.eval {
        println!(
            "AB: bps {:.4}  fgs {:.4}  ssim {:.4}  mae {:.4}",
            e.ab.bps, e.ab.fgs, e.ab.ssim, e.ab.mae_translation
        );
    }
    println!("final checkpoint: {}", summary.final_checkpoint.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    s.parse::<Direction>().map_err(|e| e.to_string())
}

#[derive(Args)]
pub struct TranslateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_parser = parse_direction)]
    direction: Direction,
    #[arg(long)]
    out: PathBuf,
}

fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(TrainConfig, RunState<T>)> {
    RunState::<T>::from_checkpoint(&Checkpoint::load(path)?)
}

fn translate_typed<T: Scalar>(args: &TranslateArgs) -> Result<usize> {
    let (cfg, state) = load_checkpoint::<T>(&args.ckpt)?;
    if cfg.arch.channels != 3 {
        return Err(Error::Data(format!(
            "checkpoint expects {} channels; PNG translation works on RGB models",
            cfg.arch.channels
        )));
    }
    let g = match args.direction {
        Direction::AB => &state.quartet.g_ab,
        Direction::BA => &state.quartet.g_ba,
    };
    let files = list_pngs(&args.input)?;
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no PNG files", args.input.display())));
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let size = cfg.arch.image_size;
    files.par_iter().try_for_each(|f| -> Result<()> {
        let img = load_png(f, size)?;
        let out = g.forward(&relgan_core::data::stack::<T>(&[&img])?)?;
        let name = f.file_name().expect("listed files have names");
        save_png(&Image::from_batch(&out, 0)?, &args.out.join(name))
    })?;
    write_json(
        &args.out.join("translate.json"),
        &json!({
            "ckpt": args.ckpt,
            "input": args.input,
            "direction": args.direction,
            "image_size": size,
            "files": files.len(),
        }),
    )?;
    Ok(files.len())
}

pub fn translate(args: TranslateArgs) -> Result<ExitCode> {
    let n = match checkpoint_precision(&Checkpoint::load(&args.ckpt)?)? {
        Precision::Single => translate_typed::<f32>(&args)?,
        Precision::Double => translate_typed::<f64>(&args)?,
    };
    println!("translated {n} images into {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset tree with testA/, testB/ and masks/.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_direction, default_value = "AB")]
    direction: Direction,
}

fn eval_typed<T: Scalar>(args: &EvalArgs) -> Result<EvalReport> {
    let (cfg, state) = load_checkpoint::<T>(&args.ckpt)?;
    let data = Dataset::test_from_dir(&args.data, cfg.arch.image_size)?;
    if data.test_masks.is_none() {
        return Err(Error::Data(format!(
            "{} has no masks/ directory; the background-preservation score needs foreground masks",
            args.data.display()
        )));
    }
    let report = evaluate(&state.quartet, &data, args.direction)?;
    let grid_dir = sibling(&args.out, "_grids");
    fs::create_dir_all(&grid_dir).map_err(|e| Error::io(&grid_dir, e))?;
    let view = Dataset {
        test_a: data.test_a.iter().take(8).cloned().collect(),
        test_b: data.test_b.iter().take(8).cloned().collect(),
        ..Dataset::default()
    };
    let (inputs, outputs, truth) = translate_test_set(&state.quartet, &view, args.direction)?;
    let tag = match args.direction {
        Direction::AB => "ab",
        Direction::BA => "ba",
    };
    write_grid(&grid_dir.join(format!("{tag}.png")), &inputs, &outputs, &truth)?;
    Ok(report)
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let report = match checkpoint_precision(&Checkpoint::load(&args.ckpt)?)? {
        Precision::Single => eval_typed::<f32>(&args)?,
        Precision::Double => eval_typed::<f64>(&args)?,
    };
    write_json(&args.out, &report)?;
    write_json(
        &sibling(&args.out, ".config.json"),
        &json!({ "ckpt": args.ckpt, "data": args.data, "direction": args.direction }),
    )?;
    println!(
        "{} samples: bps {:.4}  fgs {:.4}  ssim {:.4}  psnr {:.2} dB  mae {:.4}",
        report.n_samples, report.bps, report.fgs, report.ssim, report.psnr_db, report.mae_translation
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_loss(s: &str) -> std::result::Result<LossSelector, String> {
    s.parse::<LossSelector>().map_err(|e| e.to_string())
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// all, tl, rel1, rel2 or adv.
    #[arg(long, value_parser = parse_loss, default_value = "all")]
    loss: LossSelector,
    /// Largest accepted relative error per entry.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, hide = true)]
    inject_bug: bool,
}

pub fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    if !(args.tol.is_finite() && args.tol > 0.0) {
        return Err(Error::config("--tol", "must be a positive number"));
    }
    let start = Instant::now();
    let checks = run_gradchecks(&GradcheckOptions {
        loss: args.loss,
        tol: args.tol,
        inject_bug: args.inject_bug,
        ..GradcheckOptions::default()
    })?;
    let mut ok = true;
    for c in &checks {
        let r = &c.report;
        ok &= r.passed;
        println!(
            "{:<14} {:>5} entries  max rel error {:.3e}  {}",
            c.name,
            r.entries,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
        if !r.passed {
            if let (Some(w), Some(at)) = (&r.worst, &c.worst_entry) {
                println!(
                    "    worst entry {at}: analytic {:.12e} numeric {:.12e}",
                    w.analytic, w.numeric
                );
            }
        }
    }
    println!("tolerance {:.1e}, {:.1?}", args.tol, start.elapsed());
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    run_a: PathBuf,
    #[arg(long)]
    run_b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn read_eval(run: &Path) -> Result<EvalSummary> {
    let path = run.join("eval.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("{}: missing evaluation report ({e})", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Deserialize)]
struct CurvePoint {
    step: Option<u64>,
    total_g: Option<f64>,
    event: Option<String>,
}

fn read_curve(run: &Path) -> Result<Vec<(f64, f64)>> {
    let path = run.join("metrics.jsonl");
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(&path, e)),
    };
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let p: CurvePoint = serde_json::from_str(line)?;
        if let (None, Some(step), Some(v)) = (p.event, p.step, p.total_g) {
            out.push((step as f64, v));
        }
    }
    Ok(out)
}

fn delta(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        b - a
    }
}

fn deltas(a: &EvalReport, b: &EvalReport) -> serde_json::Value {
    json!({
        "mae_translation": delta(a.mae_translation, b.mae_translation),
        "ssim": delta(a.ssim, b.ssim),
        "psnr_db": delta(a.psnr_db, b.psnr_db),
        "bps": delta(a.bps, b.bps),
        "fgs": delta(a.fgs, b.fgs),
    })
}

/// `bps_b / bps_a`, or `None` when undefined.
pub fn bps_ratio(bps_a: f64, bps_b: f64) -> Option<f64> {
    if bps_a == 0.0 {
        (bps_b == 0.0).then_some(1.0)
    } else {
        Some(bps_b / bps_a)
    }
}

pub fn compare(args: CompareArgs) -> Result<ExitCode> {
    let a = read_eval(&args.run_a)?;
    let b = read_eval(&args.run_b)?;
    let png = sibling(&args.out, "_loss.png");
    let series = vec![
        Series {
            name: args.run_a.display().to_string(),
            points: read_curve(&args.run_a)?,
        },
        Series {
            name: args.run_b.display().to_string(),
            points: read_curve(&args.run_b)?,
        },
    ];
    let axes = render(&series, "step", "total_g", &png).map_err(|source| Error::Image {
        path: png.clone(),
        source,
    })?;
    let axes_path = sibling(&args.out, "_loss.axes.json");
    write_json(&axes_path, &axes)?;
    let ratio = bps_ratio(a.ab.bps, b.ab.bps);
    let report = json!({
        "run_a": args.run_a,
        "run_b": args.run_b,
        "direction": Direction::AB,
        "bps_a": a.ab.bps,
        "bps_b": b.ab.bps,
        "bps_ratio": ratio,
        "ssim_a": a.ab.ssim,
        "ssim_b": b.ab.ssim,
        "n_samples": [a.ab.n_samples, b.ab.n_samples],
        "deltas": deltas(&a.ab, &b.ab),
        "deltas_ba": deltas(&a.ba, &b.ba),
        "loss_curve": png,
        "loss_axes": axes_path,
    });
    write_json(&args.out, &report)?;
    match ratio {
        Some(r) => println!("bps A {:.4}  B {:.4}  ratio B/A {:.3}", a.ab.bps, b.ab.bps, r),
        None => println!("bps A {:.4}  B {:.4}  ratio undefined", a.ab.bps, b.ab.bps),
    }
    Ok(ExitCode::SUCCESS)
}
