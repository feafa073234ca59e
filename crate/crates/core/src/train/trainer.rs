//! Mini-batch Adam training with early stopping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::data::{EmbeddingTable, LabeledSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::mc::{mc_accuracy, standard_accuracy, AggregationStrategy};
use crate::model::{Classifier, ClassifierParams, DropoutMasks, ModelConfig, ParamGrads};
use crate::rng::{derive_stream, Rng, RngState};

/// Keep probability for SST-style runs (drop 0.5).
pub const SST_KEEP_PROB: f64 = 0.5;
/// Keep probability for IMDB-style runs (drop 0.7).
pub const IMDB_KEEP_PROB: f64 = 0.3;
/// Default number of samples for MC evaluation.
pub const DEFAULT_MC_SAMPLES: usize = 60;

const TAG_INIT: u64 = 0x1417;
const TAG_SHUFFLE: u64 = 0x5_4f1e;
const TAG_DROPOUT: u64 = 0xd_0b0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub model: ModelConfig,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    /// Keep the embedding table fixed.
    #[serde(default)]
    pub freeze_embeddings: bool,
}

fn default_batch_size() -> usize {
    32
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_patience() -> usize {
    10
}

impl TrainSpec {
    pub fn new(model: ModelConfig, epochs: usize, seed: u64) -> Self {
        Self {
            model,
            epochs,
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            seed,
            early_stop_patience: default_patience(),
            freeze_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs < 1 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if self.early_stop_patience < 1 {
            return Err(Error::config("early_stop_patience", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub valid_acc: f64,
}

/// Full training state: enough to resume exactly where a run stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: TrainSpec,
    pub params: ClassifierParams,
    /// Parameters from the epoch with the best validation accuracy so far.
    pub best_params: ClassifierParams,
    pub optimizer: Adam,
    /// Stream the next epoch will draw from.
    pub rng: RngState,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_valid_acc: f64,
    pub stale_epochs: usize,
    pub vocabulary: Option<Vocabulary>,
}

impl Checkpoint {
    /// Freshly initialized state; `embeddings` replaces the random table.
    pub fn init(spec: TrainSpec, vocab_size: usize, embeddings: Option<&EmbeddingTable>) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(spec.seed, TAG_INIT);
        let mut params = ClassifierParams::random(&spec.model, vocab_size, &mut rng);
        if let Some(table) = embeddings {
            if table.matrix.shape() != params.embedding.shape() {
                return Err(Error::config(
                    "embed_dim",
                    format!(
                        "embedding table is {:?}, model needs {:?}",
                        table.matrix.shape(),
                        params.embedding.shape()
                    ),
                ));
            }
            params.embedding = table.matrix.clone();
        }
        let optimizer = Adam::new(AdamConfig::with_learning_rate(spec.learning_rate), params.tensors());
        Ok(Self {
            rng: RngState {
                seed: spec.seed,
                stream_id: 0,
            },
            best_params: params.clone(),
            params,
            optimizer,
            epoch: 0,
            history: Vec::new(),
            best_epoch: 0,
            best_valid_acc: f64::NEG_INFINITY,
            stale_epochs: 0,
            vocabulary: None,
            spec,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.spec.model
    }

    /// The best-validation model.
    pub fn best_model(&self) -> Classifier {
        Classifier {
            config: self.spec.model.clone(),
            params: self.best_params.clone(),
        }
    }

    pub fn current_model(&self) -> Classifier {
        Classifier {
            config: self.spec.model.clone(),
            params: self.params.clone(),
        }
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.spec.epochs || self.stale_epochs >= self.spec.early_stop_patience
    }
}

fn check_data(config: &ModelConfig, name: &str, data: &[LabeledSequence]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Protocol(format!("{name} set is empty")));
    }
    if let Some(ex) = data.iter().find(|e| e.label >= config.num_classes) {
        return Err(Error::config(
            "num_classes",
            format!("{name} set has label {} but the model has {} classes", ex.label, config.num_classes),
        ));
    }
    Ok(())
}

/// Trains from scratch for `spec.epochs` epochs (or until early stopping).
pub fn train(
    spec: TrainSpec,
    train_data: &[LabeledSequence],
    valid_data: &[LabeledSequence],
    vocab_size: usize,
    embeddings: Option<&EmbeddingTable>,
) -> Result<Checkpoint> {
    let ckpt = Checkpoint::init(spec, vocab_size, embeddings)?;
    resume(ckpt, train_data, valid_data)
}

/// Continues training until `ckpt.spec.epochs` or early stopping.
pub fn resume(mut ckpt: Checkpoint, train_data: &[LabeledSequence], valid_data: &[LabeledSequence]) -> Result<Checkpoint> {
    ckpt.spec.validate()?;
    check_data(&ckpt.spec.model, "training", train_data)?;
    check_data(&ckpt.spec.model, "validation", valid_data)?;
    while !ckpt.finished() {
        run_epoch(&mut ckpt, train_data, valid_data)?;
    }
    Ok(ckpt)
}

fn diverged(ckpt: &Checkpoint, batch: usize, detail: &str) -> Error {
    let norms: Vec<String> = ckpt
        .params
        .named()
        .iter()
        .map(|(n, t)| format!("{n}={:.4e}", t.norm()))
        .collect();
    Error::Diverged(format!(
        "epoch {} batch {batch}: {detail}; parameter norms: {}",
        ckpt.epoch + 1,
        norms.join(", ")
    ))
}

/// One pass over `train_data`, then validation and best-model bookkeeping.
pub fn run_epoch(ckpt: &mut Checkpoint, train_data: &[LabeledSequence], valid_data: &[LabeledSequence]) -> Result<EpochMetrics> {
    let epoch = ckpt.epoch as u64;
    let seed = ckpt.spec.seed;
    let config = ckpt.spec.model.clone();
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    Rng::new(seed, derive_stream(epoch, TAG_SHUFFLE, 0)).shuffle(&mut order);

    let mut loss_sum = 0.0;
    for (b, batch) in order.chunks(ckpt.spec.batch_size).enumerate() {
        let model = Classifier {
            config: config.clone(),
            params: ckpt.params.clone(),
        };
        let results: Vec<Result<(f64, ParamGrads)>> = batch
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let position = (b * ckpt.spec.batch_size + j) as u64;
                let mut rng = Rng::new(seed, derive_stream(epoch, TAG_DROPOUT, position));
                let ex = &train_data[i];
                let masks = DropoutMasks::sample(&config, ex.token_ids.len(), &mut rng)?;
                let (loss, _, grads) = model.loss_and_grads(&ex.token_ids, ex.label, &masks)?;
                Ok((loss, grads))
            })
            .collect();

        let mut total = ParamGrads::zeros_for(&ckpt.params);
        for r in results {
            let (loss, grads) = match r {
                Ok(v) => v,
                Err(Error::NonFinite { op }) => return Err(diverged(ckpt, b, &format!("non-finite value in {op}"))),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(ckpt, b, &format!("loss is {loss}")));
            }
            loss_sum += loss;
            total.add_assign(&grads)?;
        }
        total.scale(1.0 / batch.len() as f64);
        if !total.is_finite() {
            return Err(diverged(ckpt, b, "non-finite gradient"));
        }
        let mut dense_embedding = total.dense_embedding(ckpt.params.vocab_size(), config.embed_dim);
        if ckpt.spec.freeze_embeddings {
            dense_embedding.data_mut().fill(0.0);
        }
        let grads = std::iter::once(&dense_embedding).chain(total.dense.iter());
        ckpt.optimizer.step(ckpt.params.tensors_mut(), grads)?;
    }

    let model = ckpt.current_model();
    let metrics = EpochMetrics {
        epoch: ckpt.epoch + 1,
        train_loss: loss_sum / train_data.len() as f64,
        train_acc: standard_accuracy(&model, train_data)?,
        valid_acc: standard_accuracy(&model, valid_data)?,
    };
    if metrics.valid_acc > ckpt.best_valid_acc {
        ckpt.best_valid_acc = metrics.valid_acc;
        ckpt.best_epoch = metrics.epoch;
        ckpt.best_params = ckpt.params.clone();
        ckpt.stale_epochs = 0;
    } else {
        ckpt.stale_epochs += 1;
    }
    ckpt.epoch += 1;
    ckpt.rng.stream_id = ckpt.epoch as u64;
    ckpt.history.push(metrics.clone());
    Ok(metrics)
}

/// Mean cross-entropy with all-ones masks.
pub fn mean_loss(model: &Classifier, data: &[LabeledSequence]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Protocol("empty dataset".into()));
    }
    let losses = data
        .par_iter()
        .map(|ex| {
            let masks = DropoutMasks::ones(&model.config, ex.token_ids.len());
            Ok(model.loss_and_grads(&ex.token_ids, ex.label, &masks)?.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Inference {
    Standard,
    Mc {
        k: usize,
        strategy: AggregationStrategy,
        seed: u64,
    },
}

impl Inference {
    pub fn mc_default(seed: u64) -> Self {
        Inference::Mc {
            k: DEFAULT_MC_SAMPLES,
            strategy: AggregationStrategy::MajorityVote,
            seed,
        }
    }
}

/// Fraction of `data` classified correctly.
pub fn evaluate(model: &Classifier, data: &[LabeledSequence], inference: Inference) -> Result<f64> {
    check_data(&model.config, "evaluation", data)?;
    match inference {
        Inference::Standard => standard_accuracy(model, data),
        Inference::Mc { k, strategy, seed } => mc_accuracy(model, data, k, strategy, seed),
    }
}
