//! SGD training loop, evaluation and the training log.

mod log;
mod sgd;

pub use log::{EvalRecord, IterRecord, SkipRecord, TrainLog};
pub use sgd::{sgd_step, SgdHyper, SgdState, StepOutcome};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentOp, Dataset, Sample};
use crate::error::{Error, Result};
use crate::loss::combined_loss;
use crate::metrics::{per_class_report, MetricsReport, Spacing};
use crate::network::{Model, ModelConfig};
use crate::nn::{Mode, Session};
use crate::scalar::Scalar;

pub const POLY_POWER: f64 = 0.9;
/// Consecutive non-finite losses tolerated before training aborts.
pub const MAX_NAN_STREAK: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// base · (1 − t/T)^0.9
    Poly,
}

impl LrSchedule {
    pub fn lr(self, base: f64, iteration: usize, max_iterations: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Poly => {
                let frac = iteration.min(max_iterations) as f64 / max_iterations.max(1) as f64;
                base * (1.0 - frac).powf(POLY_POWER)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    /// Evaluate every this many iterations; 0 disables periodic evaluation.
    pub eval_every: usize,
    pub augment: bool,
    /// Stop at an evaluation whose mean Dice reaches this value.
    pub target_dice: Option<f64>,
    /// No early stop before this iteration.
    pub min_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 4,
            max_iterations: 2000,
            seed: 0,
            lr_schedule: LrSchedule::Constant,
            eval_every: 0,
            augment: false,
            target_dice: None,
            min_iterations: 0,
        }
    }
}

impl TrainConfig {
    /// Optimizer settings of the full-size runs (batch 24).
    pub fn paper() -> Self {
        Self { batch_size: 24, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", format!("{} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", format!("{} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay", format!("{} must be non-negative", self.weight_decay));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive".into());
        }
        if self.max_iterations == 0 {
            return fail("max_iterations", "must be positive".into());
        }
        if let Some(t) = self.target_dice {
            if !(0.0..=1.0).contains(&t) {
                return fail("target_dice", format!("{t} outside [0, 1]"));
            }
        }
        Ok(())
    }

    fn hyper(&self, iteration: usize) -> SgdHyper {
        SgdHyper {
            lr: self.lr_schedule.lr(self.lr, iteration, self.max_iterations),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// Seeded per-epoch permutations cut into full batches; a trailing partial
/// batch is dropped.
struct BatchSampler {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self { n, batch, seed, epoch: 0, order: Vec::new(), pos: 0 };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    fn next(&mut self) -> (u64, Vec<usize>) {
        if self.pos + self.batch > self.n {
            self.epoch += 1;
            self.shuffle();
        }
        let idx = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        (self.epoch, idx)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub log: TrainLog,
}

/// Trains a freshly initialised model on `train_set`, evaluating on
/// `eval_set` every `eval_every` iterations and once at the end.
pub fn train<T: Scalar>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
) -> Result<TrainOutcome<T>> {
    let model = Model::<T>::new(model_cfg, cfg.seed)?;
    train_model(model, cfg, train_set, eval_set)
}

/// Continues training `model` in place.
pub fn train_model<T: Scalar>(
    mut model: Model<T>,
    cfg: &TrainConfig,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    check_compatible(model.config(), train_set)?;
    if let Some(e) = eval_set {
        check_compatible(model.config(), e)?;
    }
    if cfg.batch_size > train_set.len() {
        return Err(Error::Config(format!(
            "batch_size: {} exceeds the {} training samples",
            cfg.batch_size,
            train_set.len()
        )));
    }
    let start = Instant::now();
    let mut log = TrainLog::new(model.config().clone(), cfg.clone());
    let mut state = SgdState::new();
    let mut sampler = BatchSampler::new(train_set.len(), cfg.batch_size, cfg.seed);
    let mut nan_streak = 0;
    for it in 0..cfg.max_iterations {
        let (epoch, idx) = sampler.next();
        let samples: Vec<Sample> = idx
            .iter()
            .map(|&i| {
                let s = &train_set.samples[i];
                if cfg.augment {
                    augment(s, AugmentOp::draw(cfg.seed, &s.id, epoch))
                } else {
                    s.clone()
                }
            })
            .collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let (images, labels) = Dataset::batch::<T>(&refs)?;

        let session = Session::with_grad(&model.params, Mode::Train);
        // a non-finite activation caught inside the network counts as a non-finite loss
        let forward = model.net.forward(&session, &session.input(images, false)).and_then(|l| combined_loss(&l, &labels));
        let (parts, failure) = match forward {
            Ok(parts) => {
                let loss = parts.total.value().data()[0].to_f64_lossy();
                let failure = (!loss.is_finite()).then(|| format!("non-finite loss {loss}"));
                (Some(parts), failure)
            }
            Err(e @ Error::NonFinite { .. }) => (None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        if let Some(reason) = failure {
            nan_streak += 1;
            log.skipped.push(SkipRecord { iteration: it, reason });
            if nan_streak >= MAX_NAN_STREAK {
                return Err(Error::Training(format!(
                    "loss was non-finite for {MAX_NAN_STREAK} consecutive iterations (last at iteration {it}); \
                     check the learning rate and the input normalisation"
                )));
            }
            continue;
        }
        nan_streak = 0;
        let parts = parts.expect("finite loss");
        let loss = parts.total.value().data()[0].to_f64_lossy();
        let grads = session.param_grads(&parts.total.backward());
        let running = session.take_running_updates();
        drop(session);
        let hyper = cfg.hyper(it);
        match sgd_step(&mut model.params, &grads, &mut state, hyper) {
            StepOutcome::Applied => {
                for (id, v) in running {
                    model.params.set(id, v);
                }
            }
            StepOutcome::Skipped { param } => {
                log.skipped.push(SkipRecord { iteration: it, reason: format!("non-finite gradient in {param}") });
            }
        }
        log.iterations.push(IterRecord {
            iteration: it,
            loss,
            ce: parts.ce.value().data()[0].to_f64_lossy(),
            dice: parts.dice.value().data()[0].to_f64_lossy(),
            lr: hyper.lr,
        });

        let done = it + 1;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 && done < cfg.max_iterations {
            if let Some(e) = eval_set {
                let report = evaluate(&model, e)?;
                let reached = cfg.target_dice.is_some_and(|t| report.mean_dice >= t) && done >= cfg.min_iterations;
                log.evals.push(EvalRecord { iteration: done, report });
                if reached {
                    log.stopped_early = Some(done);
                    break;
                }
            }
        }
    }
    if let Some(e) = eval_set {
        let done = log.iterations_run();
        if log.evals.last().map(|r| r.iteration) != Some(done) {
            log.evals.push(EvalRecord { iteration: done, report: evaluate(&model, e)? });
        }
    }
    log.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { model, log })
}

fn check_compatible(cfg: &ModelConfig, ds: &Dataset) -> Result<()> {
    if ds.num_classes != cfg.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model predicts {}",
            ds.num_classes, cfg.num_classes
        )));
    }
    if let Some(s) = ds.samples.iter().find(|s| {
        s.channels() != cfg.in_channels || s.height() != cfg.input_size || s.width() != cfg.input_size
    }) {
        return Err(Error::Data(format!(
            "sample {} is {:?}, the model expects ({}, {}, {}); preprocess it first",
            s.id,
            s.image.shape(),
            cfg.in_channels,
            cfg.input_size,
            cfg.input_size
        )));
    }
    Ok(())
}

/// Per-class metrics over `ds` in sorted id order, using eval-mode batch norm.
pub fn evaluate<T: Scalar>(model: &Model<T>, ds: &Dataset) -> Result<MetricsReport> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    check_compatible(model.config(), ds)?;
    let mut order: Vec<&Sample> = ds.samples.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let cases = order
        .iter()
        .map(|s| {
            let (image, _) = Dataset::batch::<T>(&[s])?;
            let pred = model.predict(&image)?.remove(0);
            per_class_report(
                &pred,
                &s.label,
                s.height(),
                s.width(),
                ds.num_classes,
                s.spacing.unwrap_or(Spacing::default()),
                Some(&ds.class_names),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::aggregate(&cases)
}
