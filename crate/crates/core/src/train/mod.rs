//! Per-instance SGD on the softmax cross-entropy over all POIs, with
//! validation-MAP early stopping and a finite-difference gradient oracle.

mod check;
mod grad;

use std::fmt::Write as _;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Segment, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::Model;

pub use check::{gradient_check, CoordSelection, GradCheckReport, REL_FLOOR};
pub use grad::{instance_gradients, instance_loss, regularizer, sgd_step, GradientSet, TrainInstance};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without a new best validation MAP.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 50,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 || self.patience < 1 {
            return Err(Error::Config("max_epochs and patience must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean data loss over the epoch's instances, each taken before its step.
    pub train_loss: f64,
    pub valid_map: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation MAP.
    pub model: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// `history.tsv` body: `epoch`, `train_loss`, `valid_map`, `seconds`.
pub fn history_tsv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\ttrain_loss\tvalid_map\tseconds\n");
    for r in history {
        let _ = writeln!(out, "{}\t{}\t{}\t{:.3}", r.epoch, r.train_loss, r.valid_map, r.seconds);
    }
    out
}

/// Training instances of the train segment, in chronological order per user.
pub fn training_instances(ds: &Dataset, split: &Split) -> Vec<TrainInstance> {
    split.transitions(ds, Segment::Train)
}

/// Trains on the train segment and early-stops on validation MAP.
pub fn train(model: Model, ds: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let instances = training_instances(ds, split);
    train_with(
        model,
        &instances,
        cfg,
        |m| Ok(evaluate(m, ds, split, Segment::Validation)?.map),
        |_, _| Ok(()),
    )
}

/// The training loop with the validation metric and a per-epoch observer
/// supplied by the caller. Each epoch shuffles the instances with a seeded
/// RNG and takes one SGD step per instance.
pub fn train_with<V, O>(
    mut model: Model,
    instances: &[TrainInstance],
    cfg: &TrainConfig,
    mut validate: V,
    mut on_epoch: O,
) -> Result<TrainOutcome>
where
    V: FnMut(&Model) -> Result<f64>,
    O: FnMut(&EpochRecord, &Model) -> Result<()>,
{
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::Data("no training instances".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let (lr, lambda) = (model.hp.learning_rate, model.hp.lambda);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (k, &i) in order.iter().enumerate() {
            let (loss, grads) = instance_gradients(&instances[i], &model)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    instance: k,
                    loss,
                });
            }
            total += loss;
            sgd_step(&mut model.params, &grads, lr, lambda);
        }
        if !model.params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                instance: instances.len(),
                loss: f64::NAN,
            });
        }
        let valid_map = validate(&model)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / instances.len() as f64,
            valid_map,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: train loss {:.5}, validation MAP {:.5}",
            record.train_loss, record.valid_map
        );
        on_epoch(&record, &model)?;
        history.push(record);

        if best.as_ref().is_none_or(|(m, _, _)| valid_map > *m) {
            best = Some((valid_map, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                debug!("no improvement for {since_best} epochs, stopping");
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}
