//! NAdam optimization, the epoch loop with early stopping, and cross-validated training.

pub mod config;
pub mod crossval;
pub mod grid;
pub mod history;
pub mod nadam;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::TrainConfig;
pub use crossval::{run_cross_validation, CrossValOptions, CrossValResult, FoldResult};
pub use history::{EpochRecord, StopReason, TrainHistory};
pub use nadam::{clip_global_norm, nadam_step, NAdamConfig, NAdamState};

use crate::data::augment::{random_transform, Transform};
use crate::data::{stack, Sample};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::losses::LossReport;
use crate::networks::params::derive_seed;
use crate::networks::{evaluate_batch, save_checkpoint, train_step, Batch, MultiTaskModel};
use crate::tensor::Tensor;

/// What the epoch loop needs from a trainable system.
pub trait EpochRunner {
    type Snapshot;

    /// One pass over the training data; returns mean training losses.
    fn train_epoch(&mut self, epoch: usize) -> Result<LossReport>;
    fn validate(&mut self, epoch: usize) -> Result<LossReport>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot) -> Result<()>;
    /// Called after an epoch sets a new best validation loss.
    fn on_improved(&mut self, _epoch: usize) -> Result<()> {
        Ok(())
    }
}

/// Runs epochs until validation `l_global` has not improved for `patience`
/// consecutive epochs or `max_epochs` is reached, then restores the best state.
/// On failure the best state so far is restored before the error is returned.
pub fn fit<R: EpochRunner>(
    runner: &mut R,
    max_epochs: usize,
    patience: usize,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    if patience == 0 || max_epochs == 0 {
        return Err(Error::Config("max_epochs and patience must be positive".into()));
    }
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, f64, R::Snapshot)> = None;
    let mut stale = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=max_epochs {
        let step = runner.train_epoch(epoch).and_then(|train| {
            let val = runner.validate(epoch)?;
            match val.first_non_finite().or(train.first_non_finite()) {
                Some(term) => Err(Error::non_finite(format!("{term} at epoch {epoch}"))),
                None => Ok((train, val)),
            }
        });
        let (train, val) = match step {
            Ok(v) => v,
            Err(e) => {
                if let Some((_, _, snap)) = best {
                    runner.restore(snap)?;
                }
                return Err(e);
            }
        };
        let record = EpochRecord { epoch, train, val };
        on_epoch(&record);
        epochs.push(record);
        if best.as_ref().is_none_or(|(_, b, _)| val.l_global < *b) {
            best = Some((epochs.len() - 1, val.l_global, runner.snapshot()));
            stale = 0;
            runner.on_improved(epoch)?;
        } else {
            stale += 1;
            if stale >= patience {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }
    let (best, _, snap) = best.expect("at least one epoch ran");
    runner.restore(snap)?;
    Ok(TrainHistory {
        epochs,
        best,
        stop_reason,
    })
}

/// Stacks samples into a batch, optionally transforming each one.
pub fn make_batch(samples: &[&Sample], transforms: Option<&[&Transform]>) -> Result<Batch<f32>> {
    let labels = samples.iter().map(|s| s.label).collect();
    let (mri, pet) = match transforms {
        Some(ts) => {
            let inputs = samples.iter().zip(ts).map(|(s, t)| t.apply(&s.input)).collect::<Result<Vec<_>>>()?;
            let targets = samples.iter().zip(ts).map(|(s, t)| t.apply(&s.target)).collect::<Result<Vec<_>>>()?;
            (stack(&inputs.iter().collect::<Vec<_>>())?, stack(&targets.iter().collect::<Vec<_>>())?)
        }
        None => (
            stack(&samples.iter().map(|s| &s.input).collect::<Vec<_>>())?,
            stack(&samples.iter().map(|s| &s.target).collect::<Vec<_>>())?,
        ),
    };
    Ok(Batch { mri, pet, labels })
}

/// Mean losses of `model` over `samples`, in batches of `batch_size`.
pub fn evaluate_samples(
    model: &MultiTaskModel<f32>,
    samples: &[Sample],
    batch_size: usize,
    weights: &crate::losses::LossWeights,
) -> Result<LossReport> {
    let mut parts = Vec::new();
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = make_batch(&refs, None)?;
        parts.push((evaluate_batch(model, &batch, weights)?, chunk.len()));
    }
    Ok(LossReport::weighted_mean(&parts))
}

/// Multi-task model training over in-memory samples.
pub struct ModelRunner<'a> {
    pub model: &'a mut MultiTaskModel<f32>,
    pub optimizer: NAdamState,
    train: &'a [Sample],
    val: &'a [Sample],
    cfg: &'a TrainConfig,
    names: Vec<String>,
    checkpoint: Option<&'a Path>,
}

impl<'a> ModelRunner<'a> {
    pub fn new(
        model: &'a mut MultiTaskModel<f32>,
        train: &'a [Sample],
        val: &'a [Sample],
        cfg: &'a TrainConfig,
        checkpoint: Option<&'a Path>,
    ) -> Result<Self> {
        let optimizer = NAdamState::new(cfg.optimizer(), model.store().tensors())?;
        let names = model.store().names().to_vec();
        Ok(ModelRunner {
            model,
            optimizer,
            train,
            val,
            cfg,
            names,
            checkpoint,
        })
    }

    /// One optimizer update on `batch`; returns the pre-update losses.
    pub fn step(&mut self, batch: &Batch<f32>) -> Result<LossReport> {
        let mut out = train_step(self.model, batch, &self.cfg.loss)?;
        if let Some(max) = self.cfg.grad_clip {
            clip_global_norm(&mut out.grads, max);
        }
        nadam_step(self.model.store_mut().tensors_mut(), &out.grads, &self.names, &mut self.optimizer)?;
        Ok(out.report)
    }
}

impl EpochRunner for ModelRunner<'_> {
    type Snapshot = Vec<Tensor<f32>>;

    fn train_epoch(&mut self, epoch: usize) -> Result<LossReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, epoch as u64));
        let order = if self.cfg.balance_classes {
            balanced_order(self.train, &mut rng)
        } else {
            let mut order: Vec<usize> = (0..self.train.len()).collect();
            order.shuffle(&mut rng);
            order
        };
        let mut parts = Vec::new();
        for chunk in order.chunks(self.cfg.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &self.train[i]).collect();
            let batch = if self.cfg.augment {
                let ts: Vec<&Transform> = chunk.iter().map(|_| random_transform(&mut rng)).collect();
                make_batch(&samples, Some(&ts))?
            } else {
                make_batch(&samples, None)?
            };
            parts.push((self.step(&batch)?, chunk.len()));
        }
        Ok(LossReport::weighted_mean(&parts))
    }

    fn validate(&mut self, _epoch: usize) -> Result<LossReport> {
        evaluate_samples(self.model, self.val, self.cfg.batch_size, &self.cfg.loss)
    }

    fn snapshot(&self) -> Self::Snapshot {
        self.model.store().tensors().to_vec()
    }

    fn restore(&mut self, snapshot: Self::Snapshot) -> Result<()> {
        self.model.store_mut().load(snapshot)
    }

    fn on_improved(&mut self, _epoch: usize) -> Result<()> {
        match self.checkpoint {
            Some(path) => save_checkpoint(self.model, path),
            None => Ok(()),
        }
    }
}

/// `samples.len()` indices drawn by picking a present class uniformly, then a
/// scan of that class uniformly.
pub fn balanced_order<R: Rng>(samples: &[Sample], rng: &mut R) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ClassLabel::COUNT];
    for (i, s) in samples.iter().enumerate() {
        by_class[s.label.index()].push(i);
    }
    by_class.retain(|c| !c.is_empty());
    if by_class.is_empty() {
        return Vec::new();
    }
    (0..samples.len())
        .map(|_| {
            let class = &by_class[rng.gen_range(0..by_class.len())];
            class[rng.gen_range(0..class.len())]
        })
        .collect()
}

/// Runs `f` on a single worker thread when `deterministic` is set.
pub fn with_threads<R: Send>(deterministic: bool, f: impl FnOnce() -> R + Send) -> Result<R> {
    if !deterministic {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Trains `model` in place and leaves it at the best validation epoch. The best
/// model is also written to `checkpoint` whenever it improves.
pub fn train(
    model: &mut MultiTaskModel<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    on_epoch: &mut (dyn FnMut(&EpochRecord) + Send),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty sets, got {} train and {} validation scans",
            train_set.len(),
            val_set.len()
        )));
    }
    let overlap: Vec<&str> = train_set
        .iter()
        .map(|s| s.subject_id.as_str())
        .filter(|id| val_set.iter().any(|v| v.subject_id == *id))
        .collect();
    if let Some(id) = overlap.first() {
        return Err(Error::Data(format!("subject {id} is in both training and validation sets")));
    }
    with_threads(cfg.deterministic, || {
        let mut runner = ModelRunner::new(model, train_set, val_set, cfg, checkpoint)?;
        fit(&mut runner, cfg.max_epochs, cfg.patience, on_epoch)
    })?
}
