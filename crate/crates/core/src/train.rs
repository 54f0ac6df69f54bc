//! Training loop, evaluation, the ablation harness and single-shape completion.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::checkpoint::Checkpoint;
use crate::data::{read_xyz, write_xyz, DatasetManifest, Sample, Split};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::metrics::{self, MetricReport, DEFAULT_TAU};
use crate::model::{fbnet_loss, FbNet, FbNetConfig, InitStrategy, Profile, TraceClouds};
use crate::nn::PoolingKind;
use crate::optim::{Adam, StepDecay};
use crate::params::ParamStore;
use crate::tensor::{Precision, Scalar};

/// Every knob of a training run. Field names double as configuration-file
/// keys and command-line flags (kebab-case).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplier applied every `decay-every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Shapes per optimizer step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub profile: Profile,
    /// Overrides the profile's number of time steps.
    pub time_steps: Option<usize>,
    pub feedback: bool,
    pub init_strategy: InitStrategy,
    pub pooling: PoolingKind,
    /// F-score threshold used in reports.
    pub tau: f64,
    pub out_dir: PathBuf,
    pub run_id: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_decay: 0.1,
            decay_every: 30,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 8,
            epochs: 100,
            seed: 0,
            precision: Precision::F32,
            profile: Profile::Toy,
            time_steps: None,
            feedback: true,
            init_strategy: InitStrategy::E,
            pooling: PoolingKind::Adaptive,
            tau: DEFAULT_TAU,
            out_dir: PathBuf::from("runs"),
            run_id: "run".into(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("TrainConfig serializes to TOML")
    }

    pub fn schedule(&self) -> StepDecay {
        StepDecay { base: self.lr, factor: self.lr_decay, every: self.decay_every }
    }

    pub fn model_config(&self) -> FbNetConfig {
        let mut m = self.profile.config();
        if let Some(t) = self.time_steps {
            m.time_steps = t;
        }
        m.feedback = self.feedback;
        m.init_strategy = self.init_strategy;
        m.hgnet.pooling = self.pooling;
        m
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let problem = if !positive(self.lr) {
            Some("lr must be positive")
        } else if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            Some("lr-decay must lie in (0, 1]")
        } else if self.decay_every == 0 {
            Some("decay-every must be positive")
        } else if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            Some("adam betas must lie in [0, 1)")
        } else if self.batch_size == 0 || self.epochs == 0 {
            Some("batch-size and epochs must be positive")
        } else if !positive(self.tau) {
            Some("tau must be positive")
        } else if self.run_id.is_empty() {
            Some("run-id must not be empty")
        } else {
            None
        };
        if let Some(p) = problem {
            return Err(Error::Config(p.into()));
        }
        self.model_config().validate()
    }
}

/// Metrics of one predicted cloud against its ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeMetrics {
    pub cd_l2: f64,
    pub cd_l1: f64,
    pub f1: f64,
    pub fidelity: f64,
}

impl ShapeMetrics {
    pub fn measure(pred: &PointCloud, sample: &Sample, tau: f64) -> Result<Self> {
        Ok(ShapeMetrics {
            cd_l2: metrics::chamfer_l2(pred, &sample.complete)?,
            cd_l1: metrics::chamfer_l1(pred, &sample.complete)?,
            f1: metrics::fscore(pred, &sample.complete, tau)?,
            fidelity: metrics::fidelity(&sample.partial, pred)?,
        })
    }
}

fn mean_report(run_id: String, resolution: usize, tau: f64, rows: &[ShapeMetrics]) -> MetricReport {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&ShapeMetrics) -> f64| Some(rows.iter().map(f).sum::<f64>() / n);
    MetricReport {
        cd_l2: mean(|m| m.cd_l2),
        cd_l1: mean(|m| m.cd_l1),
        f1: mean(|m| m.f1),
        fidelity: mean(|m| m.fidelity),
        ..MetricReport::new(run_id, resolution, tau)
    }
}

/// Runs the network on one partial cloud and reads every output back.
pub fn infer<S: Scalar>(net: &FbNet, store: &ParamStore<S>, partial: &PointCloud) -> Result<TraceClouds> {
    let mut tape = Tape::new(store);
    let trace = net.forward(&mut tape, partial)?;
    Ok(trace.clouds(&tape))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean total loss over the training shapes.
    pub train_loss: f64,
    pub val: MetricReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
}

impl TrainOutcome {
    pub fn final_val_cd(&self) -> f64 {
        self.history.last().and_then(|h| h.val.cd_l2).unwrap_or(f64::NAN)
    }
}

fn check_partials(samples: &[Sample], k: usize) -> Result<()> {
    match samples.iter().find(|s| s.partial.len() < k) {
        Some(s) => Err(Error::Data(format!("{}: partial has {} points, fewer than k={k}", s.id, s.partial.len()))),
        None => Ok(()),
    }
}

/// Trains on the manifest's train split, validating on its val split after
/// every epoch. Writes `metrics.csv`, `best.ckpt` and `last.ckpt` into the
/// run directory.
pub fn train(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = cfg.model_config();
    let res = manifest
        .resolution(Split::Train)
        .ok_or_else(|| Error::Data("manifest has no training shapes".into()))?;
    if res != model.resolution() {
        return Err(Error::Config(format!(
            "profile {} produces {} points but the training data has resolution {res}",
            cfg.profile,
            model.resolution()
        )));
    }
    let train_set = manifest.load_split(Split::Train)?;
    let mut val_set = manifest.load_split(Split::Val)?;
    if val_set.is_empty() {
        warn!("no validation split; validating on the training shapes");
        val_set = train_set.clone();
    } else if val_set[0].complete.len() != res {
        return Err(Error::Config("validation resolution differs from training resolution".into()));
    }
    check_partials(&train_set, model.k)?;
    check_partials(&val_set, model.k)?;
    match cfg.precision {
        Precision::F32 => train_with::<f32>(cfg, &model, &train_set, &val_set),
        Precision::F64 => train_with::<f64>(cfg, &model, &train_set, &val_set),
    }
}

fn train_with<S: Scalar>(
    cfg: &TrainConfig,
    model: &FbNetConfig,
    train_set: &[Sample],
    val_set: &[Sample],
) -> Result<TrainOutcome> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let metrics_csv = dir.join("metrics.csv");
    let best_checkpoint = dir.join("best.ckpt");
    let last_checkpoint = dir.join("last.ckpt");
    let extra = serde_json::to_value(cfg)?;

    let mut store = ParamStore::<S>::new();
    let net = FbNet::new(&mut store, model, cfg.seed)?;
    let mut adam = Adam::new(&store, cfg.beta1, cfg.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f5a_u64);
    let schedule = cfg.schedule();
    let inv_batch = |n: usize| S::of(1.0 / n as f64);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let lr = schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            store.zero_grads();
            for &i in batch {
                let s = &train_set[i];
                let grads = {
                    let mut tape = Tape::new(&store);
                    let trace = net.forward(&mut tape, &s.partial)?;
                    let gt = tape.constant(s.complete.to_tensor());
                    let loss = fbnet_loss(&mut tape, &trace, gt)?;
                    let value = tape.value(loss).get(0, 0).f64();
                    if !value.is_finite() {
                        return Err(Error::State(format!("non-finite loss at epoch {epoch} on {}", s.id)));
                    }
                    loss_sum += value;
                    tape.backward(loss)
                };
                grads.accumulate_into(&mut store);
            }
            store.scale_grads(inv_batch(batch.len()));
            adam.step(&mut store, lr);
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let per_shape = val_set
            .iter()
            .map(|s| ShapeMetrics::measure(infer(&net, &store, &s.partial)?.final_output(), s, cfg.tau))
            .collect::<Result<Vec<_>>>()?;
        let val = mean_report(format!("{}/epoch-{epoch}", cfg.run_id), model.resolution(), cfg.tau, &per_shape);
        let val_cd = val.cd_l2.unwrap_or(f64::INFINITY);
        info!(
            "{} epoch {epoch}: lr {lr:.1e} train loss {train_loss:.6} val cd {val_cd:.6} f1 {:.4}",
            cfg.run_id,
            val.f1.unwrap_or(0.0)
        );
        reports.push(val.clone());
        metrics::write_reports_file(&metrics_csv, &reports)?;
        let ckpt = Checkpoint::from_store(model, &store, epoch, Some(&adam), extra.clone());
        if best.is_none_or(|(cd, _)| val_cd < cd) {
            best = Some((val_cd, epoch));
            ckpt.save(&best_checkpoint)?;
        }
        ckpt.save(&last_checkpoint)?;
        history.push(EpochStats { epoch, lr, train_loss, val });
    }
    Ok(TrainOutcome {
        history,
        best_epoch: best.map_or(0, |(_, e)| e),
        best_checkpoint,
        last_checkpoint,
        metrics_csv,
    })
}

fn checkpoint_precision(ckpt: &Checkpoint) -> Precision {
    ckpt.meta
        .extra
        .get("precision")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_default()
}

/// Per-step results of [`evaluate`].
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// One row per time step, `run_id = "step-<t>"`, means over shapes.
    pub rows: Vec<MetricReport>,
    /// `per_shape[s][t]`: metrics of shape `s` at step `t`.
    pub per_shape: Vec<Vec<ShapeMetrics>>,
    pub ids: Vec<String>,
}

impl Evaluation {
    pub fn mean_cd(&self, t: usize) -> f64 {
        self.rows[t].cd_l2.unwrap_or(f64::NAN)
    }

    pub fn final_mean_cd(&self) -> f64 {
        self.mean_cd(self.rows.len() - 1)
    }
}

/// Upper bound on the number of unrolled steps at evaluation time.
pub const MAX_EVAL_STEPS: usize = 4;

/// Evaluates the last block's output of every time step on `split`,
/// optionally unrolling a different number of steps than trained with.
pub fn evaluate(ckpt: &Checkpoint, manifest: &DatasetManifest, split: Split, t_override: Option<usize>, tau: f64) -> Result<Evaluation> {
    let samples = manifest.load_split(split)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("manifest has no {split:?} shapes")));
    }
    evaluate_samples(ckpt, &samples, t_override, tau)
}

pub fn evaluate_samples(
    ckpt: &Checkpoint,
    samples: &[Sample],
    t_override: Option<usize>,
    tau: f64,
) -> Result<Evaluation> {
    if let Some(t) = t_override {
        if !(1..=MAX_EVAL_STEPS).contains(&t) {
            return Err(Error::Config(format!("time-step override must lie in 1..={MAX_EVAL_STEPS}, got {t}")));
        }
    }
    match checkpoint_precision(ckpt) {
        Precision::F32 => evaluate_with::<f32>(ckpt, samples, t_override, tau),
        Precision::F64 => evaluate_with::<f64>(ckpt, samples, t_override, tau),
    }
}

fn evaluate_with<S: Scalar>(
    ckpt: &Checkpoint,
    samples: &[Sample],
    t_override: Option<usize>,
    tau: f64,
) -> Result<Evaluation> {
    let (net, store) = ckpt.build_model::<S>()?;
    let cfg = net.config();
    let net = net.with_schedule(t_override.unwrap_or(cfg.time_steps), cfg.feedback, cfg.init_strategy);
    let steps = net.config().time_steps;
    let resolution = net.config().resolution();
    check_partials(samples, net.config().k)?;
    let references: Vec<PointCloud> = samples.iter().map(|s| s.complete.clone()).collect();

    let mut per_shape = Vec::with_capacity(samples.len());
    let mut mmd = vec![0.0; steps];
    for s in samples {
        let trace = infer(&net, &store, &s.partial)?;
        let mut row = Vec::with_capacity(steps);
        for (t, acc) in mmd.iter_mut().enumerate() {
            let out = trace.step_output(t);
            row.push(ShapeMetrics::measure(out, s, tau)?);
            *acc += metrics::mmd(out, &references)? / samples.len() as f64;
        }
        per_shape.push(row);
    }
    let rows = (0..steps)
        .map(|t| {
            let at_t: Vec<ShapeMetrics> = per_shape.iter().map(|r| r[t]).collect();
            MetricReport { mmd: Some(mmd[t]), ..mean_report(format!("step-{t}"), resolution, tau, &at_t) }
        })
        .collect();
    Ok(Evaluation { rows, per_shape, ids: samples.iter().map(|s| s.id.clone()).collect() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Feedback,
    InitStrategy,
    Pooling,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feedback" => Ok(Suite::Feedback),
            "init_strategy" | "init-strategy" => Ok(Suite::InitStrategy),
            "pooling" => Ok(Suite::Pooling),
            _ => Err(Error::arg(format!(
                "unknown ablation suite '{s}' (expected feedback, init_strategy or pooling)"
            ))),
        }
    }
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Feedback => "feedback",
            Suite::InitStrategy => "init_strategy",
            Suite::Pooling => "pooling",
        }
    }

    /// Labelled configurations compared by the suite, all sharing `base`'s seed.
    pub fn variants(self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        let with = |label: String, f: &dyn Fn(&mut TrainConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c.run_id = format!("{}-{label}", base.run_id);
            (label, c)
        };
        match self {
            Suite::Feedback => [(1, false), (2, false), (3, false), (2, true), (3, true)]
                .into_iter()
                .map(|(t, fb)| {
                    let label = format!("T{t}-{}", if fb { "feedback" } else { "no-feedback" });
                    with(label, &|c| {
                        c.time_steps = Some(t);
                        c.feedback = fb;
                    })
                })
                .collect(),
            Suite::InitStrategy => InitStrategy::ALL
                .into_iter()
                .map(|s| with(format!("strategy-{s:?}"), &|c| c.init_strategy = s))
                .collect(),
            Suite::Pooling => [("adaptive", PoolingKind::Adaptive), ("point", PoolingKind::Point)]
                .into_iter()
                .map(|(l, p)| with(format!("pooling-{l}"), &|c| c.pooling = p))
                .collect(),
        }
    }
}

/// Trains every variant of `suite` and evaluates its best checkpoint on the
/// test split (val if there is none). Writes `ablation-<suite>.csv` with one
/// row per variant into the base run directory.
pub fn ablate(suite: Suite, base: &TrainConfig, manifest: &DatasetManifest) -> Result<Vec<MetricReport>> {
    base.validate()?;
    let split = if manifest.split(Split::Test).next().is_some() { Split::Test } else { Split::Val };
    let mut rows = Vec::new();
    for (label, cfg) in suite.variants(base) {
        info!("ablation {suite:?}: training {label}");
        let outcome = train(&cfg, manifest)?;
        let ckpt = Checkpoint::load(&outcome.best_checkpoint)?;
        let eval = evaluate(&ckpt, manifest, split, None, base.tau)?;
        let last = eval.rows.last().expect("at least one step").clone();
        rows.push(MetricReport { run_id: label, ..last });
    }
    let dir = base.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = format!("ablation-{}.csv", suite.name());
    metrics::write_reports_file(&dir.join(name), &rows)?;
    Ok(rows)
}

/// Completes the partial cloud at `input` and writes the final output to `output`.
pub fn complete(ckpt: &Checkpoint, input: &Path, output: &Path) -> Result<PointCloud> {
    let partial = read_xyz(input)?;
    let out = match checkpoint_precision(ckpt) {
        Precision::F32 => {
            let (net, store) = ckpt.build_model::<f32>()?;
            infer(&net, &store, &partial)?
        }
        Precision::F64 => {
            let (net, store) = ckpt.build_model::<f64>()?;
            infer(&net, &store, &partial)?
        }
    };
    let cloud = out.final_output().clone();
    write_xyz(&cloud, output)?;
    Ok(cloud)
}

/// Number of learnable scalars stored in a checkpoint.
pub fn report_params(ckpt: &Checkpoint) -> usize {
    ckpt.num_params()
}

/// Number of learnable scalars of a freshly built model.
pub fn count_params(cfg: &FbNetConfig) -> Result<usize> {
    let mut store = ParamStore::<f32>::new();
    FbNet::new(&mut store, cfg, 0)?;
    Ok(store.num_scalars())
}
