//! Alternating discriminator / generator updates over the quartet, driven by
//! the phase schedule, with metrics logging and checkpoints.

mod checkpoint;
mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Precision, Scalar, Tensor};
use crate::data::{stack, Dataset, Image, PairStream};
use crate::error::{Error, Result};
use crate::losses::{discriminator_objective, generator_objective, ForwardPass, LossReport, LossWeights};
use crate::metrics::{evaluate, translate_test_set, write_grid, Direction, EvalReport};
use crate::nn::{AdamState, GeneratorQuartet, Layer, Moments, Network, Role};
use crate::schedule::{ActiveTerms, Phase, PhaseState};

pub use checkpoint::{Checkpoint, Record, Values, FORMAT_VERSION, MAGIC};
pub use config::{parse_json, Task, TrainConfig};

/// Test images drawn into each sample grid.
pub const GRID_ROWS: usize = 8;

/// Everything needed to continue a run bit-identically.
#[derive(Debug, Clone)]
pub struct RunState<T: Scalar> {
    pub quartet: GeneratorQuartet<T>,
    /// One optimizer per network with its own parameters.
    pub optimizers: BTreeMap<Role, AdamState<T>>,
    pub phase: PhaseState,
    pub step: u64,
    pub sampler: PairStream,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub report: LossReport,
    /// Set on the step at which ReL2 switched on.
    pub transition: Option<u64>,
}

impl<T: Scalar> RunState<T> {
    pub fn new(cfg: &TrainConfig, n_a: usize, n_b: usize) -> Result<Self> {
        let quartet = GeneratorQuartet::new(&cfg.arch, cfg.tied, cfg.seed)?;
        Ok(Self::from_quartet(quartet, PairStream::new(n_a, n_b, cfg.batch_size, cfg.seed, cfg.paired)?))
    }

    pub fn from_quartet(quartet: GeneratorQuartet<T>, sampler: PairStream) -> Self {
        let optimizers = quartet.owned_roles().into_iter().map(|r| (r, AdamState::new())).collect();
        RunState {
            quartet,
            optimizers,
            phase: PhaseState::new(),
            step: 0,
            sampler,
        }
    }

    fn adam_step(&mut self, role: Role, cfg: &TrainConfig) -> Result<()> {
        let opt = self
            .optimizers
            .get_mut(&role)
            .ok_or_else(|| Error::Checkpoint(format!("no optimizer state for {}", role.key())))?;
        opt.step(self.quartet.get_mut(role), &cfg.optimizer)
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_bytes("config", serde_json::to_vec(cfg).expect("config serializes"));
        for role in self.quartet.owned_roles() {
            let net = self.quartet.get(role);
            let key = role.key();
            ck.push_bytes(
                format!("net.{key}.layers"),
                serde_json::to_vec(net.layers()).expect("layers serialize"),
            );
            for (name, p) in net.parameters() {
                ck.push_tensor(format!("net.{key}.{name}"), p.shape(), p.data());
            }
        }
        for (role, opt) in &self.optimizers {
            let key = role.key();
            ck.push_u64(format!("opt.{key}.step"), vec![opt.step]);
            for (name, m) in &opt.moments {
                ck.push_tensor(format!("opt.{key}.m.{name}"), &m.shape, &m.m);
                ck.push_tensor(format!("opt.{key}.v.{name}"), &m.shape, &m.v);
            }
        }
        let p = &self.phase;
        ck.push_u64(
            "phase.meta",
            vec![
                matches!(p.phase, Phase::TlRel1Rel2) as u64,
                p.windows_stagnant as u64,
                p.step,
                p.transition_step.is_some() as u64,
                p.transition_step.unwrap_or(0),
            ],
        );
        ck.push("phase.window", vec![p.window.len()], Values::F64(p.window.clone()));
        let prev: Vec<f64> = p.prev_window_mean.into_iter().collect();
        ck.push("phase.prev_window_mean", vec![prev.len()], Values::F64(prev));
        ck.push_u64("run.step", vec![self.step]);
        ck.push_u64("sampler", sampler_words(&self.sampler));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(TrainConfig, Self)> {
        let cfg: TrainConfig = parse_json(
            std::str::from_utf8(ck.bytes("config")?)
                .map_err(|_| Error::Checkpoint("config record is not UTF-8".into()))?,
        )?;
        let load = |role: Role| -> Result<Option<Network<T>>> {
            let key = role.key();
            let layers_name = format!("net.{key}.layers");
            if !ck.contains(&layers_name) {
                return Ok(None);
            }
            let layers: Vec<Layer> = serde_json::from_slice(ck.bytes(&layers_name)?)?;
            let mut net = Network::from_layers(key, layers);
            let prefix = format!("net.{key}.");
            let stored = ck.with_prefix(&prefix).count() - 1;
            if stored != net.parameter_names().len() {
                return Err(Error::Checkpoint(format!(
                    "{key}: {stored} parameter records for {} parameters",
                    net.parameter_names().len()
                )));
            }
            for name in net.parameter_names() {
                let (dims, data) = ck.tensor::<T>(&format!("{prefix}{name}"))?;
                net.set_param(&name, Tensor::parameter(&dims, data)?)?;
            }
            Ok(Some(net))
        };
        let need = |role: Role| -> Result<Network<T>> {
            load(role)?.ok_or_else(|| Error::Checkpoint(format!("missing network {}", role.key())))
        };
        let primes = match (load(Role::GAbPrime)?, load(Role::GBaPrime)?) {
            (Some(p), Some(q)) => Some((p, q)),
            (None, None) => None,
            _ => return Err(Error::Checkpoint("only one primed generator stored".into())),
        };
        let quartet = GeneratorQuartet::from_parts(need(Role::GAb)?, need(Role::GBa)?, primes, need(Role::DA)?, need(Role::DB)?);

        let mut optimizers = BTreeMap::new();
        for role in quartet.owned_roles() {
            let key = role.key();
            let step_name = format!("opt.{key}.step");
            if !ck.contains(&step_name) {
                continue;
            }
            let mut opt = AdamState::new();
            opt.step = first(ck.u64s(&step_name)?, &step_name)?;
            let m_prefix = format!("opt.{key}.m.");
            for r in ck.with_prefix(&m_prefix) {
                let name = &r.name[m_prefix.len()..];
                let (shape, m) = ck.tensor::<T>(&r.name)?;
                let (_, v) = ck.tensor::<T>(&format!("opt.{key}.v.{name}"))?;
                opt.moments.insert(name.to_string(), Moments { shape, m, v });
            }
            optimizers.insert(role, opt);
        }

        let meta = ck.u64s("phase.meta")?;
        if meta.len() != 5 {
            return Err(Error::Checkpoint("phase.meta must hold 5 values".into()));
        }
        let phase = PhaseState {
            phase: if meta[0] == 1 { Phase::TlRel1Rel2 } else { Phase::TlRel1 },
            window: ck.f64s("phase.window")?.to_vec(),
            prev_window_mean: ck.f64s("phase.prev_window_mean")?.first().copied(),
            windows_stagnant: meta[1] as usize,
            step: meta[2],
            transition_step: (meta[3] == 1).then_some(meta[4]),
        };
        let state = RunState {
            quartet,
            optimizers,
            phase,
            step: first(ck.u64s("run.step")?, "run.step")?,
            sampler: sampler_from_words(ck.u64s("sampler")?)?,
        };
        Ok((cfg, state))
    }
}

fn first(v: &[u64], name: &str) -> Result<u64> {
    v.first().copied().ok_or_else(|| Error::Checkpoint(format!("record `{name}` is empty")))
}

fn sampler_words(s: &PairStream) -> Vec<u64> {
    let mut w = vec![s.batch_size as u64];
    let push = |w: &mut Vec<u64>, st: &crate::data::IndexStream| {
        w.extend([st.n as u64, st.seed, st.stream, st.epoch, st.position as u64]);
    };
    push(&mut w, &s.a);
    match &s.b {
        Some(b) => {
            w.push(1);
            push(&mut w, b);
        }
        None => w.extend([0; 6]),
    }
    w
}

fn sampler_from_words(w: &[u64]) -> Result<PairStream> {
    if w.len() != 12 {
        return Err(Error::Checkpoint("sampler record must hold 12 values".into()));
    }
    let stream = |o: &[u64]| crate::data::IndexStream {
        n: o[0] as usize,
        seed: o[1],
        stream: o[2],
        epoch: o[3],
        position: o[4] as usize,
    };
    Ok(PairStream {
        batch_size: w[0] as usize,
        a: stream(&w[1..6]),
        b: (w[6] == 1).then(|| stream(&w[7..12])),
    })
}

/// One discriminator phase then one generator phase on the same batch.
/// Discriminators train on detached current-batch fakes; the generators
/// then see the updated discriminators.
pub fn train_step<T: Scalar>(
    state: &mut RunState<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    let opts = cfg.objective_options();
    let fwd = ForwardPass::run(&state.quartet, a, b)?;
    let mut report = LossReport::default();

    for i in 0..cfg.d_steps {
        let d = discriminator_objective(&state.quartet, &fwd, a, b)?;
        if i == 0 {
            report.adv_d_a = d.adv_d_a.item().as_f64();
            report.adv_d_b = d.adv_d_b.item().as_f64();
            report.total_d = d.total_d.item().as_f64();
        }
        state.quartet.d_a.zero_grad();
        state.quartet.d_b.zero_grad();
        d.total_d.backward()?;
        for role in [Role::DA, Role::DB] {
            state.adam_step(role, cfg)?;
        }
    }

    let active = state.phase.active_terms();
    let g = generator_objective(&state.quartet, &fwd, a, b, &cfg.weights, active, &opts)?;
    g.write_report(&mut report);
    if let Some(term) = report.non_finite() {
        return Err(Error::NonFinite { term: term.into() });
    }
    let roles = state.quartet.generator_roles();
    for &role in &roles {
        state.quartet.get(role).zero_grad();
    }
    g.total_g.backward()?;
    for &role in &roles {
        state.adam_step(role, cfg)?;
    }
    state.quartet.d_a.zero_grad();
    state.quartet.d_b.zero_grad();

    state.step += 1;
    let transition = state.phase.observe(report.rel1_a + report.rel1_b, &cfg.rule)?;
    Ok(StepOutcome { report, transition })
}

/// Gradients of the generator total w.r.t. every generator parameter,
/// keyed by `role.param`. Leaves the quartet's gradients cleared.
pub fn generator_gradients<T: Scalar>(
    quartet: &GeneratorQuartet<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    weights: &LossWeights,
    active: ActiveTerms,
    cfg: &TrainConfig,
) -> Result<BTreeMap<String, Vec<T>>> {
    quartet.zero_grad();
    let fwd = ForwardPass::run(quartet, a, b)?;
    let g = generator_objective(quartet, &fwd, a, b, weights, active, &cfg.objective_options())?;
    g.total_g.backward()?;
    let mut out = BTreeMap::new();
    for role in quartet.generator_roles() {
        for (name, p) in quartet.get(role).parameters() {
            let grad = p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]);
            out.insert(format!("{}.{name}", role.key()), grad);
        }
    }
    quartet.zero_grad();
    Ok(out)
}

pub fn load_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    match &cfg.task {
        Task::Synthetic(spec) => Dataset::synthetic(spec),
        Task::Dir(path) => Dataset::from_dir(path, cfg.arch.image_size),
    }
}

/// Next training batch pair from the run's sampler.
pub fn next_batch<T: Scalar>(state: &mut RunState<T>, data: &Dataset) -> Result<(Tensor<T>, Tensor<T>)> {
    let (ia, ib) = state.sampler.next_batch();
    let pick = |pool: &[Image], idx: &[usize]| -> Result<Tensor<T>> {
        let imgs: Vec<&Image> = idx.iter().map(|&i| &pool[i]).collect();
        stack(&imgs)
    };
    Ok((pick(&data.train_a, &ia)?, pick(&data.train_b, &ib)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub step: u64,
    pub ab: EvalReport,
    pub ba: EvalReport,
}

pub fn evaluate_both<T: Scalar>(quartet: &GeneratorQuartet<T>, data: &Dataset, step: u64) -> Result<EvalSummary> {
    Ok(EvalSummary {
        step,
        ab: evaluate(quartet, data, Direction::AB)?,
        ba: evaluate(quartet, data, Direction::BA)?,
    })
}

/// Sample grids for both directions (test split, or training images when
/// there is no test split).
pub fn write_grids<T: Scalar>(quartet: &GeneratorQuartet<T>, data: &Dataset, dir: &Path, tag: &str) -> Result<()> {
    let mut view = Dataset {
        test_a: data.test_a.iter().take(GRID_ROWS).cloned().collect(),
        test_b: data.test_b.iter().take(GRID_ROWS).cloned().collect(),
        ..Dataset::default()
    };
    if view.test_a.is_empty() {
        let n = GRID_ROWS.min(data.train_a.len()).min(data.train_b.len());
        view.test_a = data.train_a[..n].to_vec();
        view.test_b = data.train_b[..n].to_vec();
    }
    for (direction, name) in [(Direction::AB, "ab"), (Direction::BA, "ba")] {
        let (inputs, outputs, truth) = translate_test_set(quartet, &view, direction)?;
        write_grid(&dir.join(format!("{tag}_{name}.png")), &inputs, &outputs, &truth)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct StepLine<'a> {
    step: u64,
    phase: Phase,
    #[serde(flatten)]
    report: &'a LossReport,
}

#[derive(Serialize)]
struct EventLine {
    event: &'static str,
    step: u64,
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct FitSummary {
    pub steps: u64,
    pub transition_step: Option<u64>,
    pub last_report: Option<LossReport>,
    pub eval: Option<EvalSummary>,
    pub final_checkpoint: PathBuf,
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Keep only metrics lines up to `step` (inclusive).
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut kept = String::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line)?;
        if v.get("step").and_then(|s| s.as_u64()).is_some_and(|s| s <= step) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

/// Run training to `cfg.total_steps`, writing into `out`:
/// `config.json`, `metrics.jsonl`, `checkpoints/`, `evals/`, `grids/` and
/// (with masks) `eval.json`.
pub fn fit(cfg: &TrainConfig, out: &Path, opts: &FitOptions) -> Result<FitSummary> {
    fit_with(cfg, out, opts, |_, _| {})
}

/// [`fit`] with a per-step callback.
pub fn fit_with(
    cfg: &TrainConfig,
    out: &Path,
    opts: &FitOptions,
    progress: impl FnMut(u64, &LossReport),
) -> Result<FitSummary> {
    cfg.validate()?;
    match cfg.precision {
        Precision::Single => fit_typed::<f32>(cfg, out, opts, progress),
        Precision::Double => fit_typed::<f64>(cfg, out, opts, progress),
    }
}

fn fit_typed<T: Scalar>(
    cfg: &TrainConfig,
    out: &Path,
    opts: &FitOptions,
    mut progress: impl FnMut(u64, &LossReport),
) -> Result<FitSummary> {
    let data = load_dataset(cfg)?;
    let (ck_dir, eval_dir, grid_dir) = (out.join("checkpoints"), out.join("evals"), out.join("grids"));
    for d in [out, &ck_dir, &eval_dir, &grid_dir] {
        create_dir(d)?;
    }
    write_json(&out.join("config.json"), cfg)?;

    let metrics_path = out.join("metrics.jsonl");
    let mut state = match &opts.resume {
        Some(path) => {
            let (saved, state) = RunState::<T>::from_checkpoint(&Checkpoint::load(path)?)?;
            if saved.arch != cfg.arch || saved.tied != cfg.tied || saved.precision != cfg.precision {
                return Err(Error::Checkpoint(format!(
                    "{} was written for a different architecture, tying or precision",
                    path.display()
                )));
            }
            truncate_metrics(&metrics_path, state.step)?;
            state
        }
        None => {
            fs::write(&metrics_path, "").map_err(|e| Error::io(&metrics_path, e))?;
            RunState::<T>::new(cfg, data.train_a.len(), data.train_b.len())?
        }
    };
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut log = BufWriter::new(file);
    let log_line = |log: &mut BufWriter<fs::File>, line: String| -> Result<()> {
        writeln!(log, "{line}").map_err(|e| Error::io(&metrics_path, e))
    };
    let has_masks = data.test_masks.is_some() && !data.test_a.is_empty();

    let mut last_report = None;
    while state.step < cfg.total_steps {
        let (a, b) = next_batch(&mut state, &data)?;
        let outcome = train_step(&mut state, &a, &b, cfg)?;
        let step = state.step;
        log_line(
            &mut log,
            serde_json::to_string(&StepLine {
                step,
                phase: state.phase.phase,
                report: &outcome.report,
            })?,
        )?;
        if let Some(at) = outcome.transition {
            log_line(
                &mut log,
                serde_json::to_string(&EventLine {
                    event: "phase_transition",
                    step: at,
                })?,
            )?;
        }
        progress(step, &outcome.report);
        last_report = Some(outcome.report);

        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.total_steps {
            log.flush().map_err(|e| Error::io(&metrics_path, e))?;
            state.to_checkpoint(cfg).save(&ck_dir.join(format!("step_{step:06}.relg")))?;
        }
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step < cfg.total_steps && has_masks {
            write_json(
                &eval_dir.join(format!("step_{step:06}.json")),
                &evaluate_both(&state.quartet, &data, step)?,
            )?;
        }
    }
    log.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let final_checkpoint = ck_dir.join("final.relg");
    state.to_checkpoint(cfg).save(&final_checkpoint)?;
    let eval = if has_masks {
        let summary = evaluate_both(&state.quartet, &data, state.step)?;
        write_json(&eval_dir.join(format!("step_{:06}.json", state.step)), &summary)?;
        write_json(&out.join("eval.json"), &summary)?;
        Some(summary)
    } else {
        None
    };
    write_grids(&state.quartet, &data, &grid_dir, "final")?;

    Ok(FitSummary {
        steps: state.step,
        transition_step: state.phase.transition_step,
        last_report,
        eval,
        final_checkpoint,
    })
}

/// Precision recorded in a checkpoint's config.
pub fn checkpoint_precision(ck: &Checkpoint) -> Result<Precision> {
    let cfg: TrainConfig = parse_json(
        std::str::from_utf8(ck.bytes("config")?).map_err(|_| Error::Checkpoint("config record is not UTF-8".into()))?,
    )?;
    Ok(cfg.precision)
}
