//! MLM pretraining: masking, the sampled-softmax loss, the learning-rate
//! schedule, projection pretraining, checkpoints and the step loop.

mod checkpoint;
pub mod finetune;
mod masking;
mod projection;
mod schedule;

use std::io::Write;

use rand::RngCore;

use crate::config::{parse, KeyValueConfig};
use crate::error::{Error, Result};
use crate::model::{EmbeddingVariant, PackedBatch, WordBertModel};
use crate::numerics::{ops, Adam, AdamConfig, Tensor};
use crate::rng;
use crate::sampling::{remap_targets, sample_batch_vocab, BatchVocab, NeighborIndex};
use crate::vocabulary::{is_special, EncodedSequence};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_HEADER};
pub use masking::{apply_masking, maskable_positions, MaskedBatch, MaskingPolicy};
pub use projection::{
    overlap_pairs, pretrain_projection, projection_loss, ProjectionFit, ProjectionOptions, ProjectionPair, WordVectors,
};
pub use schedule::lr_at;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f32,
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Decay linearly to zero after warmup; otherwise hold the peak.
    pub linear_decay: bool,
    pub batch_size: usize,
    pub seed: u64,
    /// Uniform component of each batch vocabulary.
    pub sample_size: usize,
    /// Neighbours added per masked target; 0 disables them.
    pub neighbors: usize,
    pub max_length: usize,
    pub masking: MaskingPolicy,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 5e-5,
            warmup_steps: 5_000,
            total_steps: 200_000,
            linear_decay: true,
            batch_size: 32,
            seed: 0,
            sample_size: crate::sampling::DEFAULT_SAMPLE_SIZE,
            neighbors: crate::sampling::DEFAULT_NEIGHBORS,
            max_length: crate::vocabulary::DEFAULT_MAX_LENGTH,
            masking: MaskingPolicy::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl KeyValueConfig for TrainConfig {
    const SECTION: &'static str = "train";

    fn keys() -> &'static [&'static str] {
        &[
            "peak_lr",
            "warmup_steps",
            "total_steps",
            "linear_decay",
            "batch_size",
            "seed",
            "sample_size",
            "neighbors",
            "max_length",
            "mask_ratio",
            "replace_mask",
            "replace_random",
            "keep_original",
            "beta1",
            "beta2",
            "adam_eps",
        ]
    }

    fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "peak_lr" => self.peak_lr.to_string(),
            "warmup_steps" => self.warmup_steps.to_string(),
            "total_steps" => self.total_steps.to_string(),
            "linear_decay" => self.linear_decay.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "sample_size" => self.sample_size.to_string(),
            "neighbors" => self.neighbors.to_string(),
            "max_length" => self.max_length.to_string(),
            "mask_ratio" => self.masking.mask_ratio.to_string(),
            "replace_mask" => self.masking.replace_mask.to_string(),
            "replace_random" => self.masking.replace_random.to_string(),
            "keep_original" => self.masking.keep_original.to_string(),
            "beta1" => self.adam.beta1.to_string(),
            "beta2" => self.adam.beta2.to_string(),
            "adam_eps" => self.adam.eps.to_string(),
            _ => return None,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "peak_lr" => self.peak_lr = parse(value)?,
            "warmup_steps" => self.warmup_steps = parse(value)?,
            "total_steps" => self.total_steps = parse(value)?,
            "linear_decay" => self.linear_decay = parse(value)?,
            "batch_size" => self.batch_size = parse(value)?,
            "seed" => self.seed = parse(value)?,
            "sample_size" => self.sample_size = parse(value)?,
            "neighbors" => self.neighbors = parse(value)?,
            "max_length" => self.max_length = parse(value)?,
            "mask_ratio" => self.masking.mask_ratio = parse(value)?,
            "replace_mask" => self.masking.replace_mask = parse(value)?,
            "replace_random" => self.masking.replace_random = parse(value)?,
            "keep_original" => self.masking.keep_original = parse(value)?,
            "beta1" => self.adam.beta1 = parse(value)?,
            "beta2" => self.adam.beta2 = parse(value)?,
            "adam_eps" => self.adam.eps = parse(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            errs.push(format!("train.peak_lr: {} must be positive", self.peak_lr));
        }
        if self.total_steps == 0 {
            errs.push("train.total_steps: must be positive".into());
        }
        if self.warmup_steps > self.total_steps {
            errs.push(format!(
                "train.warmup_steps: {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if self.batch_size == 0 {
            errs.push("train.batch_size: must be positive".into());
        }
        if self.sample_size == 0 {
            errs.push("train.sample_size: must be positive".into());
        }
        if self.max_length < 3 {
            errs.push(format!("train.max_length: {} leaves no room for words", self.max_length));
        }
        errs.extend(self.masking.validate());
        for (key, b) in [("train.beta1", self.adam.beta1), ("train.beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errs.push(format!("{key}: {b} outside [0, 1)"));
            }
        }
        if !(self.adam.eps > 0.0) {
            errs.push("train.adam_eps: must be positive".into());
        }
        errs
    }
}

/// Mean cross-entropy of the masked targets under the batch vocabulary.
pub fn mlm_loss(
    model: &WordBertModel,
    masked: &MaskedBatch,
    batch_vocab: &BatchVocab,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<Tensor> {
    let hidden = masked_hidden(model, masked, dropout_rng)?;
    let logits = model.mlm_logits(&hidden, batch_vocab)?;
    let targets = remap_targets(&masked.target_global_ids, batch_vocab)?;
    ops::cross_entropy(&logits, &targets)
}

/// The same loss scored against every word, without any vocabulary sampling.
pub fn full_vocab_mlm_loss(model: &WordBertModel, masked: &MaskedBatch) -> Result<Tensor> {
    let hidden = masked_hidden(model, masked, None)?;
    let logits = model.full_logits(&hidden)?;
    let targets: Vec<usize> = masked.target_global_ids.iter().map(|&g| g as usize).collect();
    ops::cross_entropy(&logits, &targets)
}

/// Encoder states `[num_targets, H]` at the masked positions.
fn masked_hidden(
    model: &WordBertModel,
    masked: &MaskedBatch,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<Tensor> {
    if masked.target_positions.is_empty() {
        return Err(Error::contract("batch has no masked targets"));
    }
    let packed = PackedBatch::from_encoded(&masked.inputs);
    let hidden = model.forward(&packed, dropout_rng)?;
    let rows: Vec<usize> = masked
        .target_positions
        .iter()
        .map(|&(s, p)| packed.offsets[s] + p)
        .collect();
    ops::gather_rows(&hidden, &rows)
}

/// Fraction of masked targets whose top-scoring word (over the full
/// vocabulary, specials excluded) is the original word.
pub fn masked_accuracy(model: &WordBertModel, masked: &MaskedBatch) -> Result<f64> {
    let hidden = masked_hidden(model, masked, None)?;
    let logits = model.full_logits(&hidden)?;
    let v = model.config().vocab_size;
    let data = logits.data();
    let hits = masked
        .target_global_ids
        .iter()
        .enumerate()
        .filter(|&(i, &gold)| {
            let row = &data[i * v..(i + 1) * v];
            let best = (0..v)
                .filter(|&j| !is_special(j as u32))
                .fold(None::<usize>, |best, j| match best {
                    Some(b) if row[b] >= row[j] => Some(b),
                    _ => Some(j),
                });
            best == Some(gold as usize)
        })
        .count();
    Ok(hits as f64 / masked.num_targets() as f64)
}

/// Outcome of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f32,
    pub loss: f32,
    pub num_targets: usize,
    pub batch_vocab_size: usize,
}

/// Deterministic MLM training over a fixed encoded corpus.
///
/// Every random draw of step `s` comes from streams keyed by the seed, a
/// purpose name and `s`, so resuming at step `s` replays the same batches.
pub struct Trainer {
    model: WordBertModel,
    optimizer: Adam,
    config: TrainConfig,
    corpus: Vec<EncodedSequence>,
    neighbors: Option<NeighborIndex>,
    step: u64,
}

impl Trainer {
    /// Sequences without a maskable word are dropped from the corpus.
    pub fn new(model: WordBertModel, corpus: Vec<EncodedSequence>, config: TrainConfig) -> Result<Self> {
        let optimizer = Adam::new(model.trainable_parameters(), config.adam);
        Self::assemble(model, optimizer, corpus, config, 0)
    }

    fn assemble(
        model: WordBertModel,
        optimizer: Adam,
        corpus: Vec<EncodedSequence>,
        config: TrainConfig,
        step: u64,
    ) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::contract(errs.join("; ")));
        }
        let corpus: Vec<EncodedSequence> = corpus
            .into_iter()
            .filter(|s| !maskable_positions(s).is_empty())
            .collect();
        if corpus.is_empty() {
            return Err(Error::contract("training corpus has no maskable words"));
        }
        if let Some(s) = corpus.iter().find(|s| s.real_len() > model.config().max_positions) {
            return Err(Error::Length {
                length: s.real_len(),
                max: model.config().max_positions,
            });
        }
        let neighbors = if model.config().variant == EmbeddingVariant::Projected && config.neighbors > 0 {
            let table = model.word_embedding();
            Some(NeighborIndex::new(table.to_vec(), table.shape()[1])?)
        } else {
            None
        };
        Ok(Self {
            model,
            optimizer,
            config,
            corpus,
            neighbors,
            step,
        })
    }

    /// Restores model, optimizer moments and step counter.
    pub fn resume(checkpoint: Checkpoint, corpus: Vec<EncodedSequence>) -> Result<Self> {
        let Checkpoint {
            model,
            train_config,
            step,
            adam_states,
        } = checkpoint;
        let mut optimizer = Adam::new(model.trainable_parameters(), train_config.adam);
        let names: Vec<String> = optimizer.params().iter().map(|(n, _)| n.clone()).collect();
        for (name, state) in names.iter().zip(optimizer.states_mut()) {
            match adam_states.iter().find(|(n, _)| n == name) {
                Some((_, s)) => *state = s.clone(),
                None => return Err(Error::contract(format!("checkpoint has no optimizer state for {name}"))),
            }
        }
        Self::assemble(model, optimizer, corpus, train_config, step)
    }

    pub fn model(&self) -> &WordBertModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    /// Steps completed so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn corpus(&self) -> &[EncodedSequence] {
        &self.corpus
    }

    /// Indices of the sequences used at step `s`.
    pub fn batch_indices(&self, s: u64) -> Vec<usize> {
        let n = self.corpus.len();
        if self.config.batch_size >= n {
            return (0..n).collect();
        }
        let mut r = rng::stream(self.config.seed, "batch", s);
        rand::seq::index::sample(&mut r, n, self.config.batch_size).into_vec()
    }

    /// The masked batch of step `s`.
    pub fn masked_batch(&self, s: u64) -> Result<MaskedBatch> {
        let batch: Vec<EncodedSequence> = self
            .batch_indices(s)
            .into_iter()
            .map(|i| self.corpus[i].clone())
            .collect();
        apply_masking(
            &batch,
            &self.config.masking,
            self.model.config().vocab_size,
            &mut rng::stream(self.config.seed, "mask", s),
        )
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let s = self.step + 1;
        let masked = self.masked_batch(s)?;
        let batch_words: Vec<u32> = self
            .batch_indices(s)
            .into_iter()
            .flat_map(|i| {
                let seq = &self.corpus[i];
                seq.ids[seq.word_positions()].to_vec()
            })
            .collect();
        let bv = sample_batch_vocab(
            &batch_words,
            &masked.target_global_ids,
            self.model.config().vocab_size,
            self.config.sample_size,
            self.neighbors.as_ref().map(|n| (n, self.config.neighbors)),
            &mut rng::stream(self.config.seed, "vocab", s),
        )?;
        self.optimizer.zero_grad();
        let mut dropout_rng = rng::stream(self.config.seed, "dropout", s);
        let loss = mlm_loss(&self.model, &masked, &bv, Some(&mut dropout_rng))?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step: s,
                batch: format!("{:?}", self.batch_indices(s)),
            });
        }
        loss.backward()?;
        let lr = lr_at(s, &self.config);
        self.optimizer.step(lr)?;
        self.step = s;
        Ok(StepRecord {
            step: s,
            lr,
            loss: value,
            num_targets: masked.num_targets(),
            batch_vocab_size: bv.len(),
        })
    }

    /// Runs `steps` steps, writing `step\tlr\tloss` lines to `metrics`.
    pub fn run<W: Write>(&mut self, steps: u64, mut metrics: Option<&mut W>) -> Result<Vec<StepRecord>> {
        let mut out = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let rec = self.step()?;
            if let Some(w) = metrics.as_deref_mut() {
                writeln!(w, "{}\t{}\t{}", rec.step, rec.lr, rec.loss)
                    .map_err(|e| Error::io("metrics", e))?;
            }
            if rec.step % 100 == 0 {
                log::info!("step {} lr {:.3e} loss {:.4}", rec.step, rec.lr, rec.loss);
            }
            out.push(rec);
        }
        Ok(out)
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        save_checkpoint(path, &self.model, Some(&self.optimizer), &self.config, self.step)
    }

    pub fn into_model(self) -> WordBertModel {
        self.model
    }
}
