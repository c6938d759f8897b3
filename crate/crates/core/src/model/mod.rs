//! The word-level transformer encoder.
//!
//! Input rows come from a word table (direct variant) or from frozen
//! pretrained vectors pushed through a projection `W` (projected variant).
//! The MLM head is tied to the same rows: the logit for word `j` is
//! `hidden · row(j) + bias[j]`, where `row(j)` is the embedding row or its
//! projection. There is no separate output matrix.

mod config;
pub mod heads;
mod layers;

use std::collections::HashMap;

use rand::{Rng, RngCore};
use sha2::{Digest, Sha256};

pub use config::{EmbeddingVariant, ModelConfig, ParameterCounts};
pub use heads::{label_logits, span_logits, LabelHead, SpanHead};
pub use layers::{EncoderLayer, LayerNorm, Linear};

use crate::config::KeyValueConfig;
use crate::error::{Error, Result};
use crate::numerics::ops::{self, AttentionLayout};
use crate::numerics::Tensor;
use crate::sampling::BatchVocab;
use crate::vocabulary::EncodedSequence;
pub(crate) use layers::{normal, INIT_STD};
use layers::{maybe_dropout, truncated_normal};

/// Several sequences laid end to end for one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBatch {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub layout: AttentionLayout,
    /// Row offset of each sequence.
    pub offsets: Vec<usize>,
}

impl PackedBatch {
    /// Packs unpadded id sequences; every position attends.
    pub fn from_ids<S: AsRef<[u32]>>(seqs: &[S]) -> Self {
        let mut batch = Self {
            ids: Vec::new(),
            positions: Vec::new(),
            layout: AttentionLayout {
                segments: Vec::new(),
                key_valid: Vec::new(),
            },
            offsets: Vec::new(),
        };
        for s in seqs {
            let s = s.as_ref();
            let start = batch.ids.len();
            batch.offsets.push(start);
            batch.ids.extend_from_slice(s);
            batch.positions.extend(0..s.len());
            batch.layout.key_valid.extend(std::iter::repeat_n(true, s.len()));
            batch.layout.segments.push(start..start + s.len());
        }
        batch
    }

    /// Packs the attended prefix (`[CLS]`..`[SEP]`) of each sequence. Padding
    /// is dropped; masked keys contribute nothing, so outputs are unchanged.
    pub fn from_encoded(seqs: &[EncodedSequence]) -> Self {
        let trimmed: Vec<&[u32]> = seqs.iter().map(|s| &s.ids[..s.real_len()]).collect();
        Self::from_ids(&trimmed)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct WordBertModel {
    config: ModelConfig,
    word_embedding: Tensor,
    projection: Option<Tensor>,
    position_embedding: Tensor,
    input_norm: LayerNorm,
    layers: Vec<EncoderLayer>,
    mlm_bias: Tensor,
}

impl WordBertModel {
    /// Random initialisation: truncated normal (σ = 0.02) for transformer
    /// weights, normal (σ = 0.02) for the word table.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let (v, e) = (config.vocab_size, config.embed_dim);
        let table = normal(rng, v * e, INIT_STD);
        Self::build(config, table, None, rng)
    }

    /// Uses `embeddings [V, E]` as the word table and, when given,
    /// `projection [E, H]` as the initial `W`.
    pub fn with_pretrained<R: Rng + ?Sized>(
        config: ModelConfig,
        embeddings: Vec<f32>,
        projection: Option<Vec<f32>>,
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(config, embeddings, projection, rng)
    }

    fn build<R: Rng + ?Sized>(
        config: ModelConfig,
        table: Vec<f32>,
        projection: Option<Vec<f32>>,
        rng: &mut R,
    ) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::contract(errs.join("; ")));
        }
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden);
        let word_embedding = if config.freeze_embeddings {
            Tensor::new(&[v, e], table)?
        } else {
            Tensor::parameter(&[v, e], table)?
        };
        let projection = match config.variant {
            EmbeddingVariant::Direct => {
                if projection.is_some() {
                    return Err(Error::contract("direct variant takes no projection"));
                }
                None
            }
            EmbeddingVariant::Projected => {
                let w = projection.unwrap_or_else(|| truncated_normal(rng, e * h, INIT_STD));
                Some(Tensor::parameter(&[e, h], w)?)
            }
        };
        let position_embedding = Tensor::parameter(
            &[config.max_positions, h],
            truncated_normal(rng, config.max_positions * h, INIT_STD),
        )?;
        let input_norm = LayerNorm::init(h, config.layer_norm_eps)?;
        let layers = (0..config.num_layers)
            .map(|_| EncoderLayer::init(rng, h, config.ffn_dim, config.layer_norm_eps))
            .collect::<Result<Vec<_>>>()?;
        let mlm_bias = Tensor::parameter(&[v], vec![0.0; v])?;
        Ok(Self {
            config,
            word_embedding,
            projection,
            position_embedding,
            input_norm,
            layers,
            mlm_bias,
        })
    }

    /// Rebuilds a model from named parameter payloads.
    pub fn from_tensors(config: ModelConfig, tensors: &HashMap<String, Vec<f32>>) -> Result<Self> {
        let placeholder = vec![0.0; config.vocab_size * config.embed_dim];
        let model = Self::build(config, placeholder, None, &mut crate::rng::stream(0, "placeholder", 0))?;
        for (name, t) in model.named_parameters() {
            let data = tensors
                .get(&name)
                .ok_or_else(|| Error::contract(format!("missing tensor {name}")))?;
            if data.len() != t.numel() {
                return Err(Error::shape("from_tensors", t.shape(), &[data.len()]));
            }
            t.data_mut().copy_from_slice(data);
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn word_embedding(&self) -> &Tensor {
        &self.word_embedding
    }

    pub fn projection(&self) -> Option<&Tensor> {
        self.projection.as_ref()
    }

    pub fn position_embedding(&self) -> &Tensor {
        &self.position_embedding
    }

    pub fn mlm_bias(&self) -> &Tensor {
        &self.mlm_bias
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    pub fn input_norm(&self) -> &LayerNorm {
        &self.input_norm
    }

    /// Every tensor, frozen ones included, in a fixed order.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("embeddings.word".to_string(), self.word_embedding.clone())];
        if let Some(w) = &self.projection {
            out.push(("embeddings.projection".into(), w.clone()));
        }
        out.push(("embeddings.position".into(), self.position_embedding.clone()));
        out.push(("encoder.input_norm.gamma".into(), self.input_norm.gamma.clone()));
        out.push(("encoder.input_norm.beta".into(), self.input_norm.beta.clone()));
        for (i, layer) in self.layers.iter().enumerate() {
            layer.named_parameters(&format!("encoder.layer.{i}"), &mut out);
        }
        out.push(("mlm.bias".into(), self.mlm_bias.clone()));
        out
    }

    pub fn trainable_parameters(&self) -> Vec<(String, Tensor)> {
        self.named_parameters()
            .into_iter()
            .filter(|(_, t)| t.requires_grad())
            .collect()
    }

    pub fn parameter_count(&self) -> u64 {
        self.named_parameters().iter().map(|(_, t)| t.numel() as u64).sum()
    }

    /// SHA-256 over every parameter's bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.named_parameters() {
            h.update(name.as_bytes());
            for v in t.data().iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn zero_grad(&self) {
        self.named_parameters().iter().for_each(|(_, t)| t.zero_grad());
    }

    /// Input rows (word part only) for the given ids: `[n, H]`.
    fn word_rows(&self, ids: &[u32]) -> Result<Tensor> {
        let idx = self.checked_ids(ids)?;
        let rows = ops::gather_rows(&self.word_embedding, &idx)?;
        match &self.projection {
            None => Ok(rows),
            Some(w) => ops::matmul(&rows, w),
        }
    }

    fn checked_ids(&self, ids: &[u32]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|&id| {
                let id = id as usize;
                if id < self.config.vocab_size {
                    Ok(id)
                } else {
                    Err(Error::Index {
                        what: "word id",
                        index: id,
                        bound: self.config.vocab_size,
                    })
                }
            })
            .collect()
    }

    /// Word rows plus position rows for packed input.
    pub fn embed_packed(&self, ids: &[u32], positions: &[usize]) -> Result<Tensor> {
        if let Some(&p) = positions.iter().max() {
            if p >= self.config.max_positions {
                return Err(Error::Length {
                    length: p + 1,
                    max: self.config.max_positions,
                });
            }
        }
        let words = self.word_rows(ids)?;
        let pos = ops::gather_rows(&self.position_embedding, positions)?;
        ops::add(&words, &pos)
    }

    /// `[T, H]` input embeddings for one encoded sequence (padding included).
    pub fn embed(&self, seq: &EncodedSequence) -> Result<Tensor> {
        let t = seq.ids.len();
        if t > self.config.max_positions {
            return Err(Error::Length {
                length: t,
                max: self.config.max_positions,
            });
        }
        self.embed_packed(&seq.ids, &(0..t).collect::<Vec<_>>())
    }

    /// Runs the encoder stack over packed rows. Dropout is active only when
    /// an rng is supplied.
    pub fn encode_packed(
        &self,
        embeddings: &Tensor,
        layout: &AttentionLayout,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Tensor> {
        let c = &self.config;
        let mut x = self.input_norm.forward(embeddings)?;
        x = maybe_dropout(x, c.dropout, &mut dropout_rng)?;
        for layer in &self.layers {
            x = layer.forward(&x, layout, c.num_heads, c.gelu, c.dropout, &mut dropout_rng)?;
        }
        Ok(x)
    }

    /// Contextual states `[T, H]` for one sequence in evaluation mode.
    pub fn encode_sequence(&self, embeddings: &Tensor, attention_mask: &[bool]) -> Result<Tensor> {
        if embeddings.shape().first() != Some(&attention_mask.len()) {
            return Err(Error::shape("encode_sequence", embeddings.shape(), &[attention_mask.len()]));
        }
        self.encode_packed(embeddings, &AttentionLayout::single(attention_mask), None)
    }

    /// Embedding plus encoder for a packed batch.
    pub fn forward(&self, batch: &PackedBatch, dropout_rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
        let emb = self.embed_packed(&batch.ids, &batch.positions)?;
        self.encode_packed(&emb, &batch.layout, dropout_rng)
    }

    /// Output rows `[n, H]` for the given global ids (tied to the input side).
    pub fn output_rows(&self, ids: &[u32]) -> Result<Tensor> {
        self.word_rows(ids)
    }

    /// `hidden [M, H] → [M, ids.len()]` scores over the listed words.
    pub fn logits_for_ids(&self, hidden: &Tensor, ids: &[u32]) -> Result<Tensor> {
        if ids.is_empty() {
            return Err(Error::contract("empty output vocabulary"));
        }
        let rows = self.output_rows(ids)?;
        let idx = self.checked_ids(ids)?;
        let bias = ops::gather_rows(&self.mlm_bias, &idx)?;
        ops::add_bias(&ops::matmul_nt(hidden, &rows)?, &bias)
    }

    /// MLM scores restricted to a per-batch vocabulary; column `j` is word
    /// `batch_vocab.global_ids[j]`.
    pub fn mlm_logits(&self, hidden: &Tensor, batch_vocab: &BatchVocab) -> Result<Tensor> {
        self.logits_for_ids(hidden, batch_vocab.global_ids())
    }

    /// Scores over the whole vocabulary.
    pub fn full_logits(&self, hidden: &Tensor) -> Result<Tensor> {
        let all: Vec<u32> = (0..self.config.vocab_size as u32).collect();
        self.logits_for_ids(hidden, &all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny() -> WordBertModel {
        WordBertModel::new(ModelConfig::tiny(20, 2, 8, 2, 16), &mut rng::stream(1, "init", 0)).unwrap()
    }

    #[test]
    fn parameter_count_matches_formula() {
        let m = tiny();
        assert_eq!(m.parameter_count(), m.config().parameter_counts().total());
        let mut c = ModelConfig::tiny(20, 1, 8, 2, 16);
        c.variant = EmbeddingVariant::Projected;
        c.freeze_embeddings = true;
        c.embed_dim = 5;
        let m = WordBertModel::new(c, &mut rng::stream(1, "init", 0)).unwrap();
        assert_eq!(m.parameter_count(), m.config().parameter_counts().total());
    }

    #[test]
    fn embed_rejects_long_sequences() {
        let m = tiny();
        let seq = EncodedSequence {
            ids: vec![2; 17],
            attention_mask: vec![1; 17],
            word_count: 15,
        };
        assert!(matches!(m.embed(&seq), Err(Error::Length { length: 17, max: 16 })));
    }

    #[test]
    fn rejects_out_of_range_ids() {
        let m = tiny();
        assert!(matches!(
            m.embed_packed(&[2, 20], &[0, 1]),
            Err(Error::Index { index: 20, .. })
        ));
    }

    #[test]
    fn empty_output_vocabulary_is_error() {
        let m = tiny();
        let h = Tensor::zeros(&[1, 8]).unwrap();
        assert!(matches!(m.logits_for_ids(&h, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn from_tensors_restores_parameters() {
        let m = tiny();
        let map: HashMap<String, Vec<f32>> = m
            .named_parameters()
            .into_iter()
            .map(|(n, t)| (n, t.to_vec()))
            .collect();
        let r = WordBertModel::from_tensors(m.config().clone(), &map).unwrap();
        assert_eq!(r.checksum(), m.checksum());
    }
}
