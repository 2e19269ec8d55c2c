//! Training loop: summed per-head mean-absolute-error loss, Adam with the
//! standard moment defaults, seeded shuffling, multi-seed experiments.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Split};
use crate::evaluation::{aggregate_runs, evaluate, EvalError, EvalReport};
use crate::hierarchy::{Language, Level, SenseDistribution};
use crate::model::{
    HArchGrads, HArchModel, HArchOutput, IndividualGrads, IndividualModel, ModelConfig, ModelError,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train split is empty after language filtering")]
    EmptyTrainSplit,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("prediction and gold lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which heads a run trains and evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelTargets {
    All,
    Single(Level),
}

impl Default for LevelTargets {
    fn default() -> Self {
        LevelTargets::All
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub language_filter: Option<BTreeSet<Language>>,
    #[serde(default)]
    pub level_targets: LevelTargets,
    /// Kept for parity with full-backbone training; the hashing stub has no
    /// trainable weights either way.
    #[serde(default = "default_true")]
    pub freeze_encoder: bool,
    #[serde(default = "default_eval_split")]
    pub eval_split: Split,
}

fn default_epochs() -> usize {
    10
}
fn default_batch_size() -> usize {
    16
}
fn default_lr() -> f64 {
    1e-5
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_true() -> bool {
    true
}
fn default_eval_split() -> Split {
    Split::Test
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_lr(),
            seeds: default_seeds(),
            language_filter: None,
            level_targets: LevelTargets::All,
            freeze_encoder: true,
            eval_split: default_eval_split(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(TrainError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.seeds.is_empty() {
            return Err(TrainError::InvalidConfig("seeds must be non-empty".into()));
        }
        Ok(())
    }
}

/// Record of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub epoch_losses: Vec<f64>,
    pub checkpoint: Option<PathBuf>,
    pub duration_secs: f64,
}

/// Mean absolute error between two distributions of the same level.
pub fn mae_loss(pred: &SenseDistribution, gold: &SenseDistribution) -> Result<f64, TrainError> {
    if pred.values.len() != gold.values.len() {
        return Err(TrainError::LengthMismatch(pred.values.len(), gold.values.len()));
    }
    let n = pred.values.len() as f64;
    Ok(pred
        .values
        .iter()
        .zip(&gold.values)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / n)
}

/// Sum of the per-head MAE losses.
pub fn total_loss(
    out: &HArchOutput,
    gold: (&SenseDistribution, &SenseDistribution, &SenseDistribution),
) -> Result<f64, TrainError> {
    Ok(mae_loss(&out.p1, gold.0)? + mae_loss(&out.p2, gold.1)? + mae_loss(&out.p3, gold.2)?)
}

/// dL/dpred of the MAE term, scaled by `weight`.
pub(crate) fn mae_grad(pred: &[f64], gold: &[f64], weight: f64) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(gold)
        .map(|(p, g)| {
            let s = (p - g).signum();
            weight * s / n
        })
        .collect()
}

/// Plain Adam over a flat parameter vector.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn dropout_mask(dim: usize, rate: f64, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(
        (0..dim)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    )
}

/// Trains a HArch model in place on the corpus's train split.
///
/// Batch order is a seeded permutation reshuffled each epoch; the last
/// partial batch is kept. Per-epoch mean train loss is recorded; a
/// checkpoint is written at the end when `checkpoint_path` is given.
pub fn train(
    model: &mut HArchModel,
    corpus: &Corpus,
    config: &TrainConfig,
    seed: u64,
    checkpoint_path: Option<&Path>,
) -> Result<RunRecord, TrainError> {
    config.validate()?;
    let start = Instant::now();
    let instances = corpus.select(Some(Split::Train), config.language_filter.as_ref());
    if instances.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }

    // The stub encoder is frozen; pooled representations are fixed per run.
    let pooled: Vec<Vec<f64>> = instances
        .iter()
        .map(|i| model.encode_pair(&i.item_id, &i.arg1, &i.arg2))
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let dim = model.dim();
    let n_params = model.params.flatten().len();
    let mut adam = Adam::new(config.learning_rate, n_params);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = HArchGrads::zeros(dim);
            let weight = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let inst = instances[i];
                let mask = dropout_mask(dim, model.config.dropout, &mut rng);
                let (out, cache) = model.params.forward(&pooled[i], mask.as_deref())?;
                batch_loss +=
                    weight * total_loss(&out, (&inst.gold1, &inst.gold2, &inst.gold3))?;
                let dp1 = mae_grad(&out.p1.values, &inst.gold1.values, weight);
                let dp2 = mae_grad(&out.p2.values, &inst.gold2.values, weight);
                let dp3 = mae_grad(&out.p3.values, &inst.gold3.values, weight);
                model.params.backward(&cache, &dp1, &dp2, &dp3, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_no });
            }
            let mut flat = model.params.flatten();
            adam.step(&mut flat, &grads.flatten());
            model.params.assign(&flat);
            epoch_loss += batch_loss;
            n_batches += 1;
        }
        epoch_losses.push(epoch_loss / n_batches as f64);
    }

    if let Some(path) = checkpoint_path {
        model.save_checkpoint(path)?;
    }
    Ok(RunRecord {
        seed,
        epoch_losses,
        checkpoint: checkpoint_path.map(Path::to_path_buf),
        duration_secs: start.elapsed().as_secs_f64(),
    })
}

/// Trains a single-head ablation model in place.
pub fn train_individual(
    model: &mut IndividualModel,
    corpus: &Corpus,
    config: &TrainConfig,
    seed: u64,
) -> Result<RunRecord, TrainError> {
    config.validate()?;
    let start = Instant::now();
    let instances = corpus.select(Some(Split::Train), config.language_filter.as_ref());
    if instances.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    let pooled: Vec<Vec<f64>> = instances
        .iter()
        .map(|i| model.encode_pair(&i.item_id, &i.arg1, &i.arg2))
        .collect::<Result<_, _>>()?;
    let level = model.level;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let dim = model.params.shared.cols;
    let mut adam = Adam::new(config.learning_rate, model.params.flatten().len());
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = IndividualGrads::zeros(dim, level);
            let weight = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let inst = instances[i];
                let gold = inst.gold(level);
                let mask = dropout_mask(dim, model.config.dropout, &mut rng);
                let (p, cache) = model.params.forward(&pooled[i], mask.as_deref())?;
                batch_loss += weight * mae_loss(&p, gold)?;
                let dp = mae_grad(&p.values, &gold.values, weight);
                model.params.backward(&cache, &dp, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_no });
            }
            let mut flat = model.params.flatten();
            adam.step(&mut flat, &grads.flatten());
            model.params.assign(&flat);
            epoch_loss += batch_loss;
            n_batches += 1;
        }
        epoch_losses.push(epoch_loss / n_batches as f64);
    }
    Ok(RunRecord {
        seed,
        epoch_losses,
        checkpoint: None,
        duration_secs: start.elapsed().as_secs_f64(),
    })
}

/// Result of a multi-seed experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    pub reports: Vec<EvalReport>,
    pub aggregate: EvalReport,
    /// Seeds whose runs failed, with the error text.
    pub failed_seeds: Vec<(u64, String)>,
}

/// One full train+eval per seed; aggregate is mean ± sample std across the
/// seeds that completed. A failing seed is recorded and skipped; the
/// aggregate is then marked partial.
pub fn run_experiment(
    corpus: &Corpus,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentResult, TrainError> {
    config.validate()?;
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for &seed in &config.seeds {
        let attempt = (|| -> Result<(RunRecord, EvalReport), TrainError> {
            let mut model = HArchModel::build(config.model.clone(), seed)?;
            let ckpt = out_dir.map(|d| d.join(format!("harch-seed{seed}.json")));
            let record = train(&mut model, corpus, config, seed, ckpt.as_deref())?;
            let (_, report) = evaluate(
                &model,
                corpus,
                config.eval_split,
                config.language_filter.as_ref(),
            )?;
            Ok((record, report))
        })();
        match attempt {
            Ok((record, report)) => {
                runs.push(record);
                reports.push(report);
            }
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                failed.push((seed, e.to_string()));
            }
        }
    }
    if reports.is_empty() {
        return Err(TrainError::InvalidConfig("all seeds failed".into()));
    }
    let mut aggregate = aggregate_runs(&reports)?;
    aggregate.partial = !failed.is_empty();
    Ok(ExperimentResult {
        runs,
        reports,
        aggregate,
        failed_seeds: failed,
    })
}
