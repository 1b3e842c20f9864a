//! Mini-batch Adam training on mean squared error.
//!
//! Each batch is grouped by scenario so branch and aggregation run once per
//! distinct condition. Gradients are summed over fixed chunks of groups and
//! then reduced in chunk order, which keeps results independent of the
//! thread count.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{ModelError, NnError};
use crate::model::{EncodedCondition, OperatorModel, RngState};
use crate::nn::{AdamConfig, AdamState, Tape, Var};

/// Scenario groups summed sequentially before the cross-chunk reduction.
const GROUPS_PER_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// When set, every batch draws its points from at most this many
    /// scenarios, which bounds the branch evaluations per step.
    pub scenarios_per_batch: Option<usize>,
    /// A batch or epoch loss above this counts as divergence. Targets lie in
    /// `[0, 1]`, so a healthy model never gets near it.
    pub max_loss: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            lr: 1e-3,
            seed: 0,
            scenarios_per_batch: None,
            max_loss: 1e4,
        }
    }
}

/// One query bound to a condition index and a model pipe index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingPoint {
    pub condition: usize,
    pub pipe: usize,
    pub x_rel: f64,
    pub t_rel: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub conditions: Vec<EncodedCondition>,
    pub points: Vec<TrainingPoint>,
}

impl TrainingSet {
    /// Encodes the samples of `split` for `model`, preserving file order.
    pub fn from_dataset(model: &OperatorModel, dataset: &Dataset, split: Split) -> Result<Self, ModelError> {
        let cfg = model.config();
        if dataset.header.sensors != cfg.sensors || dataset.header.boundary_samples != cfg.boundary_samples {
            return Err(ModelError::Config(format!(
                "dataset has S = {}, K = {}; model expects S = {}, K = {}",
                dataset.header.sensors, dataset.header.boundary_samples, cfg.sensors, cfg.boundary_samples
            )));
        }
        if dataset.header.topology_hash != model.descriptor().topology_hash {
            return Err(ModelError::TopologyMismatch {
                checkpoint: model.descriptor().topology_hash.clone(),
                network: dataset.header.topology_hash.clone(),
            });
        }
        let mut index = std::collections::HashMap::new();
        let mut conditions = Vec::new();
        for c in dataset.conditions_in(split) {
            index.insert(c.scenario_id.as_str(), conditions.len());
            conditions.push(model.encode_condition(&c.inputs)?);
        }
        let points = dataset
            .samples
            .iter()
            .filter_map(|s| index.get(s.scenario_id.as_str()).map(|&c| (c, s)))
            .map(|(condition, s)| {
                Ok(TrainingPoint {
                    condition,
                    pipe: model.pipe_index(&s.pipe_id)?,
                    x_rel: s.x_rel,
                    t_rel: s.t_rel,
                    target: s.target,
                })
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(Self { conditions, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn target_mean(&self) -> f64 {
        self.points.iter().map(|p| p.target).sum::<f64>() / self.points.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// `epoch,train_loss,val_loss`; the last column is empty without a validation set.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "epoch,train_loss,val_loss")?;
        for e in &self.epochs {
            match e.val_loss {
                Some(v) => writeln!(out, "{},{},{}", e.epoch, e.train_loss, v)?,
                None => writeln!(out, "{},{},", e.epoch, e.train_loss)?,
            }
        }
        Ok(())
    }
}

/// Raw predictions for every point, in point order.
pub fn predict(model: &OperatorModel, set: &TrainingSet) -> Result<Vec<f64>, ModelError> {
    let mut by_condition: Vec<Vec<usize>> = vec![Vec::new(); set.conditions.len()];
    for (i, p) in set.points.iter().enumerate() {
        by_condition[p.condition].push(i);
    }
    let per_condition: Vec<Vec<(usize, f64)>> = by_condition
        .par_iter()
        .enumerate()
        .map(|(c, idx)| {
            if idx.is_empty() {
                return Ok(Vec::new());
            }
            let queries: Vec<(usize, f64, f64)> = idx
                .iter()
                .map(|&i| {
                    let p = &set.points[i];
                    (p.pipe, p.x_rel, p.t_rel)
                })
                .collect();
            let out = model.estimate_many(&set.conditions[c], &queries)?;
            Ok(idx.iter().copied().zip(out).collect())
        })
        .collect::<Result<_, ModelError>>()?;
    let mut preds = vec![0.0; set.points.len()];
    for (i, w) in per_condition.into_iter().flatten() {
        preds[i] = w;
    }
    Ok(preds)
}

/// Mean squared error of raw predictions over `set`.
pub fn mse(model: &OperatorModel, set: &TrainingSet) -> Result<f64, ModelError> {
    if set.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let preds = predict(model, set)?;
    let sum: f64 = preds.iter().zip(&set.points).map(|(p, q)| (p - q.target).powi(2)).sum();
    Ok(sum / set.points.len() as f64)
}

/// Loss and gradient of the batch MSE over `batch` (point indices).
pub fn batch_gradient(model: &OperatorModel, set: &TrainingSet, batch: &[usize]) -> Result<(f64, Vec<f64>), ModelError> {
    let n = model.params.len();
    if batch.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut sorted = batch.to_vec();
    sorted.sort_by_key(|&i| (set.points[i].condition, i));
    let groups: Vec<&[usize]> = sorted
        .chunk_by(|&a, &b| set.points[a].condition == set.points[b].condition)
        .collect();
    let scale = 2.0 / batch.len() as f64;

    let partials: Vec<(f64, Vec<f64>)> = groups
        .par_chunks(GROUPS_PER_CHUNK)
        .map(|chunk| {
            let mut grads = vec![0.0; n];
            let mut sse = 0.0;
            let mut tape = Tape::new();
            for group in chunk {
                tape.clear();
                let cond = &set.conditions[set.points[group[0]].condition];
                let vars = model.condition_tape(&mut tape, cond)?;
                let mut outputs: Vec<(Var, [f64; 1])> = Vec::with_capacity(group.len());
                for &i in group.iter() {
                    let p = &set.points[i];
                    let out = model.head_tape(&mut tape, &vars, p.pipe, p.x_rel, p.t_rel)?;
                    let r = tape.value(out)[0] - p.target;
                    sse += r * r;
                    outputs.push((out, [scale * r]));
                }
                let seeds: Vec<(Var, &[f64])> = outputs.iter().map(|(v, s)| (*v, &s[..])).collect();
                tape.backward_into(&model.params, &seeds, &mut grads)?;
            }
            Ok((sse, grads))
        })
        .collect::<Result<_, ModelError>>()?;

    let mut grads = vec![0.0; n];
    let mut sse = 0.0;
    for (s, g) in partials {
        sse += s;
        for (dst, v) in grads.iter_mut().zip(&g) {
            *dst += v;
        }
    }
    Ok((sse / batch.len() as f64, grads))
}

/// Shuffling uses stream 1 so the same seed can also drive initialization.
fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Optimizer and shuffling state; resumable from a checkpoint.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub adam: AdamState,
    rng: ChaCha8Rng,
    pub epochs_completed: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, param_count: usize) -> Self {
        Self {
            config,
            adam: AdamState::new(
                AdamConfig {
                    lr: config.lr,
                    ..AdamConfig::default()
                },
                param_count,
            ),
            rng: shuffle_rng(config.seed),
            epochs_completed: 0,
        }
    }

    pub fn resume(config: TrainConfig, adam: AdamState, rng: &RngState, epochs_completed: usize) -> Result<Self, ModelError> {
        Ok(Self {
            config,
            adam,
            rng: rng.restore()?,
            epochs_completed,
        })
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(self.config.seed, &self.rng)
    }

    /// One shuffled pass over `set`; returns the mean batch loss.
    pub fn run_epoch(&mut self, model: &mut OperatorModel, set: &TrainingSet) -> Result<f64, ModelError> {
        if set.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        if self.config.batch_size == 0 {
            return Err(ModelError::Config("batch size must be positive".into()));
        }
        let epoch = self.epochs_completed + 1;
        let batches_list = self.epoch_batches(set)?;
        let mut total = 0.0;
        let mut batches = 0;
        for batch in &batches_list {
            let (loss, grads) = batch_gradient(model, set, batch)?;
            if !(loss <= self.config.max_loss) {
                return Err(ModelError::Diverged {
                    epoch,
                    detail: format!("batch loss {loss}"),
                });
            }
            self.adam.step(&mut model.params, &grads).map_err(|e| match e {
                NnError::Diverged(i) => ModelError::Diverged {
                    epoch,
                    detail: format!("non-finite gradient at parameter {i}"),
                },
                other => other.into(),
            })?;
            total += loss;
            batches += 1;
        }
        self.epochs_completed = epoch;
        Ok(total / batches as f64)
    }

    /// Shuffled batches covering every point once.
    fn epoch_batches(&mut self, set: &TrainingSet) -> Result<Vec<Vec<usize>>, ModelError> {
        let size = self.config.batch_size;
        match self.config.scenarios_per_batch {
            None => {
                let mut order: Vec<usize> = (0..set.len()).collect();
                order.shuffle(&mut self.rng);
                Ok(order.chunks(size).map(<[usize]>::to_vec).collect())
            }
            Some(0) => Err(ModelError::Config("scenarios per batch must be positive".into())),
            Some(k) => {
                let mut by_condition: Vec<Vec<usize>> = vec![Vec::new(); set.conditions.len()];
                for (i, p) in set.points.iter().enumerate() {
                    by_condition[p.condition].push(i);
                }
                by_condition.retain(|c| !c.is_empty());
                by_condition.shuffle(&mut self.rng);
                let mut out = Vec::new();
                for block in by_condition.chunks(k) {
                    let mut pooled: Vec<usize> = block.concat();
                    pooled.shuffle(&mut self.rng);
                    out.extend(pooled.chunks(size).map(<[usize]>::to_vec));
                }
                out.shuffle(&mut self.rng);
                Ok(out)
            }
        }
    }
}

/// Trains `model` in place for `config.epochs` epochs, logging the full-set
/// train MSE (and validation MSE when given) after every epoch.
pub fn train(
    model: &mut OperatorModel,
    train_set: &TrainingSet,
    val_set: Option<&TrainingSet>,
    config: TrainConfig,
) -> Result<(Trainer, TrainingLog), ModelError> {
    let mut trainer = Trainer::new(config, model.params.len());
    let log = continue_training(&mut trainer, model, train_set, val_set)?;
    Ok((trainer, log))
}

/// Runs the trainer up to `trainer.config.epochs` total epochs.
pub fn continue_training(
    trainer: &mut Trainer,
    model: &mut OperatorModel,
    train_set: &TrainingSet,
    val_set: Option<&TrainingSet>,
) -> Result<TrainingLog, ModelError> {
    if train_set.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut log = TrainingLog::default();
    while trainer.epochs_completed < trainer.config.epochs {
        trainer.run_epoch(model, train_set)?;
        let epoch = trainer.epochs_completed;
        let train_loss = mse(model, train_set)?;
        if !(train_loss <= trainer.config.max_loss) {
            return Err(ModelError::Diverged {
                epoch,
                detail: format!("train loss {train_loss}"),
            });
        }
        let val_loss = match val_set {
            Some(v) if !v.is_empty() => Some(mse(model, v)?),
            _ => None,
        };
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok(log)
}
