//! Training loop.
//!
//! Two independent ChaCha streams come from the experiment seed: stream 0
//! initializes parameters, stream 1 drives shuffling, augmentation and point
//! capping. Every step runs sequentially, so a run is a pure function of its
//! config and data.

use mvfan_core::augment;
use mvfan_core::config::ExperimentConfig;
use mvfan_core::model::{cap_points, LossBreakdown, Model};
use mvfan_core::nn::ParamStore;
use mvfan_core::optim::{clip_global_norm, Adam};
use mvfan_core::{Matrix, RadarFrame};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INIT_STREAM: u64 = 0;
pub const DATA_STREAM: u64 = 1;

/// One optimizer step. Loss components are batch means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub grad_norm: f64,
    pub loss: LossBreakdown,
    pub frame_ids: Vec<String>,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub store: ParamStore,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s);
    r
}

/// Model plus its freshly initialized training state.
pub fn init(cfg: &ExperimentConfig) -> Result<(Model, TrainState)> {
    let mut init_rng = stream(cfg.train.seed, INIT_STREAM);
    let (model, store) = Model::new(cfg, &mut init_rng)?;
    let adam = Adam::new(cfg.optim.adam(), &store);
    Ok((
        model,
        TrainState {
            store,
            adam,
            epoch: 0,
            rng: stream(cfg.train.seed, DATA_STREAM),
        },
    ))
}

pub fn steps_per_epoch(frames: usize, batch: usize) -> usize {
    frames.div_ceil(batch.max(1))
}

/// Batch-mean loss and gradient. Frames are augmented and capped with the
/// state's rng in batch order.
pub fn batch_gradient(
    model: &Model,
    cfg: &ExperimentConfig,
    store: &ParamStore,
    batch: &[&RadarFrame],
    rng: &mut ChaCha8Rng,
) -> Result<(LossBreakdown, Vec<Matrix>)> {
    let mut grads = store.zero_grads();
    let mut mean = LossBreakdown::default();
    for frame in batch {
        let f = augment::augment(frame, &cfg.train.augment, rng);
        let f = cap_points(&f, model.config.point_cap, rng);
        let prep = model.prepare(&f)?;
        let l = model.loss_and_grad(store, &prep, &cfg.loss, &mut grads)?;
        mean.cls += l.cls;
        mean.aux += l.aux;
        mean.loc += l.loc;
        mean.dir += l.dir;
        mean.total += l.total;
        mean.num_pos += l.num_pos;
    }
    let s = 1.0 / batch.len().max(1) as f64;
    for g in &mut grads {
        g.scale(s);
    }
    mean.cls *= s;
    mean.aux *= s;
    mean.loc *= s;
    mean.dir *= s;
    mean.total *= s;
    Ok((mean, grads))
}

/// Runs epochs until `state.epoch == until`, calling `on_step` after every
/// optimizer step and `on_epoch` after every epoch.
pub fn train_until(
    model: &Model,
    cfg: &ExperimentConfig,
    frames: &[RadarFrame],
    state: &mut TrainState,
    until: usize,
    mut on_step: impl FnMut(&StepLog),
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<Vec<StepLog>> {
    let b = cfg.train.batch_size;
    let per_epoch = steps_per_epoch(frames.len(), b);
    let total_steps = per_epoch * cfg.train.epochs;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    while state.epoch < until {
        order.sort_unstable();
        order.shuffle(&mut state.rng);
        for (k, chunk) in order.chunks(b).enumerate() {
            let step = state.epoch * per_epoch + k;
            let batch: Vec<&RadarFrame> = chunk.iter().map(|&i| &frames[i]).collect();
            let ids = || batch.iter().map(|f| f.frame_id.clone()).collect::<Vec<_>>();
            let (loss, mut grads) = batch_gradient(model, cfg, &state.store, &batch, &mut state.rng)?;
            let grad_norm = clip_global_norm(&mut grads, cfg.optim.grad_clip);
            if !loss.total.is_finite() || !grad_norm.is_finite() {
                return Err(Error::Divergence { step, frame_ids: ids() });
            }
            let lr = cfg.optim.lr_at(step, total_steps);
            state.adam.update(&mut state.store, &grads, lr)?;
            let entry = StepLog {
                epoch: state.epoch,
                step,
                lr,
                grad_norm,
                loss,
                frame_ids: ids(),
            };
            on_step(&entry);
            log.push(entry);
        }
        state.epoch += 1;
        on_epoch(state)?;
    }
    Ok(log)
}

pub struct TrainOutcome {
    pub model: Model,
    pub state: TrainState,
    pub log: Vec<StepLog>,
}

/// Trains from initialization for `cfg.train.epochs` epochs.
pub fn run_training(cfg: &ExperimentConfig, frames: &[RadarFrame]) -> Result<TrainOutcome> {
    let (model, mut state) = init(cfg)?;
    let log = train_until(&model, cfg, frames, &mut state, cfg.train.epochs, |_| {}, |_| Ok(()))?;
    Ok(TrainOutcome { model, state, log })
}

/// Mean total loss per epoch.
pub fn epoch_means(log: &[StepLog]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for s in log {
        if out.len() <= s.epoch {
            out.resize(s.epoch + 1, (0.0, 0));
        }
        out[s.epoch].0 += s.loss.total;
        out[s.epoch].1 += 1;
    }
    out.into_iter().map(|(t, n)| if n == 0 { f64::NAN } else { t / n as f64 }).collect()
}
