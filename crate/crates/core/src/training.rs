//! Stochastic optimization of the collapsed cross-entropy objective.

use std::collections::HashSet;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{encode, CategorySequence, LatentSequence};
use crate::diffusion::{augmentation_dist, forward_sample, NoiseSchedule, Omega};
use crate::error::{invalid, Result};
use crate::geometry::PackingResult;
use crate::predictor::{Batch, Mode, Predictor, RAdam, RAdamConfig};
use crate::rng::{self, domain, Rng};
use crate::sampling::{sample_many, SampleRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_iterations: u64,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every step.
    pub lr_decay: f64,
    pub omega: Omega,
    /// Evaluations without improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub eval_interval: u64,
    /// Validation draws per evaluation (cycling through the split).
    pub validation_samples: usize,
    /// Generated sequences per evaluation for the duplicate check; 0 disables.
    pub monitor_samples: usize,
    pub overfit_threshold: f64,
    pub optimizer: RAdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            max_iterations: 1000,
            learning_rate: 7.5e-4,
            lr_decay: 0.999_975,
            omega: Omega::Infinite,
            early_stop_patience: 5,
            eval_interval: 100,
            validation_samples: 2048,
            monitor_samples: 500,
            overfit_threshold: 0.01,
            optimizer: RAdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_iterations == 0 || self.eval_interval == 0 || self.validation_samples == 0 {
            return invalid("batch_size, max_iterations, eval_interval and validation_samples must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return invalid("need learning_rate > 0 and lr_decay in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.overfit_threshold) {
            return invalid("overfit_threshold must lie in [0, 1]");
        }
        self.omega.validate()
    }
}

/// Parameters plus optimizer state; what a checkpoint persists.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub predictor: Predictor,
    pub optimizer: RAdam,
}

impl TrainState {
    pub fn new(predictor: Predictor, optimizer: RAdamConfig) -> Result<Self> {
        let optimizer = RAdam::new(predictor.num_params(), optimizer)?;
        Ok(Self { predictor, optimizer })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }
}

/// One draw of `(z_t, t, target)` for sequence `x`.
pub fn draw_example(
    x: &CategorySequence,
    pack: &PackingResult,
    sched: &NoiseSchedule,
    omega: Omega,
    rng: &mut Rng,
) -> Result<(LatentSequence, usize, Array2<f64>)> {
    let z0 = encode(x, pack, rng)?;
    let t = rng.random_range(1..=sched.steps());
    let zt = forward_sample(&z0, t, sched, rng)?;
    let target = augmentation_dist(&zt, &z0, x, t, omega, sched, pack)?;
    Ok((zt, t, target))
}

/// Stacks one example per sequence; example `i` uses stream `(seed, domain, i)`.
pub fn build_batch(
    seqs: &[&CategorySequence],
    pack: &PackingResult,
    sched: &NoiseSchedule,
    omega: Omega,
    seed: u64,
    stream_domain: u64,
) -> Result<Batch> {
    if seqs.is_empty() {
        return invalid("batch is empty");
    }
    let len = seqs[0].len();
    let examples: Vec<_> = seqs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            if x.len() != len {
                return invalid("batch sequences differ in length");
            }
            draw_example(x, pack, sched, omega, &mut rng::substream(seed, stream_domain, i as u64))
        })
        .collect::<Result<_>>()?;
    let mut z = Array2::zeros((seqs.len() * len, pack.latent_dim));
    let mut target = Array2::zeros((seqs.len() * len, pack.num_categories));
    let mut t = Vec::with_capacity(seqs.len());
    for (i, (zt, ti, tg)) in examples.into_iter().enumerate() {
        z.slice_mut(s![i * len..(i + 1) * len, ..]).assign(&zt.0);
        target.slice_mut(s![i * len..(i + 1) * len, ..]).assign(&tg);
        t.push(ti);
    }
    Ok(Batch { z, t, target })
}

/// One optimizer update on `batch`; returns the batch loss before the update.
pub fn train_step(
    state: &mut TrainState,
    batch: &[&CategorySequence],
    pack: &PackingResult,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<f64> {
    let step_seed = rng::derive_seed(cfg.seed, state.step());
    let built = build_batch(batch, pack, sched, cfg.omega, step_seed, domain::TRAIN_EXAMPLE)?;
    let dropout_seed = rng::derive_seed(step_seed, domain::DROPOUT);
    let (loss, grad) = state.predictor.batch_loss_and_grad(&built, Mode::Train { dropout_seed })?;
    let lr = cfg.learning_rate * cfg.lr_decay.powf(state.step() as f64);
    state.optimizer.update(state.predictor.params_mut(), &grad, lr)?;
    Ok(loss)
}

/// Mean one-hot cross-entropy over fixed-seed draws of the validation split.
pub fn validation_loss(
    predictor: &Predictor,
    valid: &[CategorySequence],
    pack: &PackingResult,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<f64> {
    if valid.is_empty() {
        return invalid("validation split is empty");
    }
    let n = cfg.validation_samples;
    let seed = rng::derive_seed(cfg.seed, domain::VALIDATION);
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + cfg.batch_size).min(n);
        let seqs: Vec<&CategorySequence> = (start..end).map(|i| &valid[i % valid.len()]).collect();
        let draws: Vec<_> = (start..end)
            .into_par_iter()
            .zip(seqs.par_iter())
            .map(|(i, x)| {
                draw_example(x, pack, sched, Omega::Infinite, &mut rng::substream(seed, domain::VALIDATION, i as u64))
            })
            .collect::<Result<_>>()?;
        let len = seqs[0].len();
        let mut batch = Batch {
            z: Array2::zeros(((end - start) * len, pack.latent_dim)),
            t: Vec::with_capacity(end - start),
            target: Array2::zeros(((end - start) * len, pack.num_categories)),
        };
        for (j, (zt, t, tg)) in draws.into_iter().enumerate() {
            batch.z.slice_mut(s![j * len..(j + 1) * len, ..]).assign(&zt.0);
            batch.target.slice_mut(s![j * len..(j + 1) * len, ..]).assign(&tg);
            batch.t.push(t);
        }
        total += predictor.batch_loss(&batch)? * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Fraction of `generated` that appears verbatim in `train_set`.
pub fn overfit_monitor(generated: &[CategorySequence], train_set: &[CategorySequence]) -> Result<f64> {
    if generated.is_empty() || train_set.is_empty() {
        return invalid("overfit monitor needs non-empty inputs");
    }
    let seen: HashSet<&CategorySequence> = train_set.iter().collect();
    let hits = generated.iter().filter(|g| seen.contains(g)).count();
    Ok(hits as f64 / generated.len() as f64)
}

/// Stops after `patience` consecutive evaluations without improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Returns `(improved, stop)`.
    pub fn observe(&mut self, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.patience > 0 && self.stale >= self.patience)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateCheck {
    pub iteration: u64,
    pub fraction: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_curve: Vec<CurvePoint>,
    pub validation_curve: Vec<CurvePoint>,
    pub duplicate_history: Vec<DuplicateCheck>,
    pub wall_clock_seconds: f64,
    pub best_iteration: u64,
    pub best_validation_loss: f64,
    /// Set when the retained parameters exceeded the duplicate threshold.
    pub best_flagged: bool,
    pub stopped_early: bool,
    pub final_iteration: u64,
    pub best_checkpoint_path: Option<String>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub struct FitOutcome {
    pub best: TrainState,
    pub last: TrainState,
    pub report: TrainReport,
}

/// Progress events for callers that want to log.
pub enum FitEvent {
    Step { iteration: u64, loss: f64 },
    Eval { iteration: u64, validation_loss: f64, duplicate_fraction: Option<f64>, improved: bool },
}

/// Trains from fresh parameters.
pub fn fit(
    train: &[CategorySequence],
    valid: &[CategorySequence],
    pack: &PackingResult,
    sched: &NoiseSchedule,
    predictor: Predictor,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    let state = TrainState::new(predictor, cfg.optimizer)?;
    fit_from(state, train, valid, pack, sched, cfg, &mut |_| {})
}

/// Continues from `state` until its step counter reaches `max_iterations`.
pub fn fit_from(
    mut state: TrainState,
    train: &[CategorySequence],
    valid: &[CategorySequence],
    pack: &PackingResult,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    on_event: &mut dyn FnMut(FitEvent),
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return invalid("train and validation splits must be non-empty");
    }
    let pcfg = state.predictor.config();
    if pcfg.num_categories != pack.num_categories || pcfg.latent_dim != pack.latent_dim {
        return invalid("predictor K or d does not match the packing");
    }
    if let Some(x) = train.iter().chain(valid).find(|x| x.len() != pcfg.seq_len) {
        return invalid(format!("sequence of length {} but predictor expects {}", x.len(), pcfg.seq_len));
    }
    for x in train.iter().chain(valid) {
        x.check(pack.num_categories)?;
    }

    let started = Instant::now();
    let mut report = TrainReport {
        best_validation_loss: f64::INFINITY,
        ..TrainReport::default()
    };
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut best = state.clone();
    let mut best_flagged = false;

    while state.step() < cfg.max_iterations {
        let iteration = state.step();
        let mut pick = rng::substream(cfg.seed, domain::BATCH, iteration);
        let batch: Vec<&CategorySequence> = (0..cfg.batch_size)
            .map(|_| &train[pick.random_range(0..train.len())])
            .collect();
        let loss = train_step(&mut state, &batch, pack, sched, cfg)?;
        let done = state.step();
        report.loss_curve.push(CurvePoint { iteration: done, value: loss });
        on_event(FitEvent::Step { iteration: done, loss });

        if done % cfg.eval_interval == 0 || done == cfg.max_iterations {
            let vloss = validation_loss(&state.predictor, valid, pack, sched, cfg)?;
            report.validation_curve.push(CurvePoint { iteration: done, value: vloss });
            let duplicate = if cfg.monitor_samples > 0 {
                let req = SampleRequest {
                    num_samples: cfg.monitor_samples,
                    seed: rng::derive_seed(cfg.seed, domain::MONITOR),
                    ..SampleRequest::default()
                };
                let generated = sample_many(&state.predictor, pack, sched, &req)?.samples;
                let fraction = overfit_monitor(&generated, train)?;
                let flagged = fraction > cfg.overfit_threshold;
                report.duplicate_history.push(DuplicateCheck { iteration: done, fraction, flagged });
                Some((fraction, flagged))
            } else {
                None
            };
            let (improved, stop) = stopper.observe(vloss);
            on_event(FitEvent::Eval {
                iteration: done,
                validation_loss: vloss,
                duplicate_fraction: duplicate.map(|d| d.0),
                improved,
            });
            if improved {
                best = state.clone();
                best_flagged = duplicate.is_some_and(|d| d.1);
                report.best_iteration = done;
                report.best_validation_loss = vloss;
            }
            if stop {
                report.stopped_early = true;
                break;
            }
        }
    }
    report.best_flagged = best_flagged;
    report.final_iteration = state.step();
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(FitOutcome {
        best,
        last: state,
        report,
    })
}
