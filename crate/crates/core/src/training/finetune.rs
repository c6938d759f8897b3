//! Task heads trained on top of the encoder: word-level tagging and
//! extractive span prediction. Fine-tuning updates the encoder's trainable
//! parameters in place together with the head.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::evaluation::{SpanItem, TaggedSequence};
use crate::model::{label_logits, span_logits, LabelHead, SpanHead, WordBertModel};
use crate::numerics::{ops, Adam, AdamConfig, Tensor};
use crate::rng;
use crate::vocabulary::{WordVocab, CLS_ID, SEP_ID};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    pub lr: f32,
    pub epochs: usize,
    pub seed: u64,
    pub max_length: usize,
    /// Longest predicted answer, in words.
    pub max_answer_len: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            epochs: 3,
            seed: 0,
            max_length: crate::vocabulary::DEFAULT_MAX_LENGTH,
            max_answer_len: 30,
        }
    }
}

fn optimizer(model: &WordBertModel, head: Vec<(String, Tensor)>) -> Adam {
    let mut params = model.trainable_parameters();
    params.extend(head);
    Adam::new(params, AdamConfig::default())
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "finetune", epoch as u64));
    order
}

#[derive(Debug, Clone)]
pub struct Tagger {
    pub head: LabelHead,
    /// Label strings by class index.
    pub labels: Vec<String>,
}

impl Tagger {
    fn word_logits(&self, model: &WordBertModel, vocab: &WordVocab, words: &[String], max_length: usize) -> Result<(Tensor, usize)> {
        let seq = vocab.encode(words, max_length)?;
        let ids = &seq.ids[..seq.real_len()];
        let emb = model.embed_packed(ids, &(0..ids.len()).collect::<Vec<_>>())?;
        let hidden = model.encode_sequence(&emb, &vec![true; ids.len()])?;
        let rows = ops::gather_rows(&hidden, &seq.word_positions().collect::<Vec<_>>())?;
        Ok((label_logits(&rows, &self.head)?, seq.word_count))
    }

    /// One label per word; words cut off by `max_length` get `O`.
    pub fn predict(&self, model: &WordBertModel, vocab: &WordVocab, words: &[String], max_length: usize) -> Result<Vec<String>> {
        if words.is_empty() {
            return Ok(Vec::new());
        }
        let (logits, kept) = self.word_logits(model, vocab, words, max_length)?;
        let c = self.labels.len();
        let data = logits.data();
        let mut out: Vec<String> = (0..kept)
            .map(|i| {
                let row = &data[i * c..(i + 1) * c];
                let best = (0..c).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                self.labels[best].clone()
            })
            .collect();
        out.resize(words.len(), "O".to_owned());
        Ok(out)
    }
}

pub fn finetune_tagger(
    model: &WordBertModel,
    vocab: &WordVocab,
    data: &[TaggedSequence],
    cfg: &FinetuneConfig,
) -> Result<Tagger> {
    let mut labels: Vec<String> = data.iter().flat_map(|s| s.gold_labels.iter().cloned()).collect();
    labels.sort();
    labels.dedup();
    if labels.is_empty() {
        return Err(Error::contract("tagging data has no labels"));
    }
    let head = LabelHead::new(model.config().hidden, labels.len(), &mut rng::stream(cfg.seed, "head", 0))?;
    let tagger = Tagger { head, labels };
    let mut opt = optimizer(model, tagger.head.parameters());
    for epoch in 0..cfg.epochs {
        for i in epoch_order(data.len(), cfg.seed, epoch) {
            let ex = &data[i];
            if ex.words.len() != ex.gold_labels.len() {
                return Err(Error::shape("tagged_sequence", &[ex.words.len()], &[ex.gold_labels.len()]));
            }
            if ex.words.is_empty() {
                continue;
            }
            let (logits, kept) = tagger.word_logits(model, vocab, &ex.words, cfg.max_length)?;
            let targets: Vec<usize> = ex.gold_labels[..kept]
                .iter()
                .map(|l| tagger.labels.binary_search(l).expect("label set covers training data"))
                .collect();
            opt.zero_grad();
            ops::cross_entropy(&logits, &targets)?.backward()?;
            opt.step(cfg.lr)?;
        }
    }
    Ok(tagger)
}

#[derive(Debug, Clone)]
pub struct SpanReader {
    pub head: SpanHead,
    pub max_answer_len: usize,
}

/// `[CLS] question [SEP] context [SEP]` with the context trimmed to fit.
struct SpanInput {
    ids: Vec<u32>,
    context_offset: usize,
    context_kept: usize,
}

fn span_input(vocab: &WordVocab, item: &SpanItem, max_length: usize) -> Result<SpanInput> {
    if max_length < 5 {
        return Err(Error::contract("span inputs need max_length of at least 5"));
    }
    let q_kept = item.question_words.len().min((max_length - 3) / 2);
    let context_kept = item.context_words.len().min(max_length - 3 - q_kept);
    let mut ids = vec![CLS_ID];
    ids.extend(item.question_words[..q_kept].iter().map(|w| vocab.id_or_unk(w)));
    ids.push(SEP_ID);
    let context_offset = ids.len();
    ids.extend(item.context_words[..context_kept].iter().map(|w| vocab.id_or_unk(w)));
    ids.push(SEP_ID);
    Ok(SpanInput {
        ids,
        context_offset,
        context_kept,
    })
}

impl SpanReader {
    fn logits(&self, model: &WordBertModel, input: &SpanInput) -> Result<(Tensor, Tensor)> {
        let n = input.ids.len();
        let emb = model.embed_packed(&input.ids, &(0..n).collect::<Vec<_>>())?;
        let hidden = model.encode_sequence(&emb, &vec![true; n])?;
        span_logits(&hidden, &self.head)
    }

    /// Best context span, or `None` when the `[CLS]` score wins.
    pub fn predict(&self, model: &WordBertModel, vocab: &WordVocab, item: &SpanItem, max_length: usize) -> Result<Option<(usize, usize)>> {
        let input = span_input(vocab, item, max_length)?;
        let (start, end) = self.logits(model, &input)?;
        let (start, end) = (start.to_vec(), end.to_vec());
        let null = start[0] + end[0];
        let mut best: Option<(f32, usize, usize)> = None;
        for s in 0..input.context_kept {
            let ps = input.context_offset + s;
            for e in s..input.context_kept.min(s + self.max_answer_len) {
                let score = start[ps] + end[input.context_offset + e];
                if best.is_none_or(|(b, _, _)| score > b) {
                    best = Some((score, s, e));
                }
            }
        }
        Ok(best.filter(|&(score, _, _)| score > null).map(|(_, s, e)| (s, e)))
    }
}

pub fn finetune_span(
    model: &WordBertModel,
    vocab: &WordVocab,
    data: &[SpanItem],
    cfg: &FinetuneConfig,
) -> Result<SpanReader> {
    let reader = SpanReader {
        head: SpanHead::new(model.config().hidden, &mut rng::stream(cfg.seed, "head", 0))?,
        max_answer_len: cfg.max_answer_len,
    };
    let mut opt = optimizer(model, reader.head.parameters());
    for epoch in 0..cfg.epochs {
        for i in epoch_order(data.len(), cfg.seed, epoch) {
            let item = &data[i];
            item.validate()?;
            let input = span_input(vocab, item, cfg.max_length)?;
            let (s, e) = match item.gold_spans.first() {
                Some(&(s, e)) if e < input.context_kept => (input.context_offset + s, input.context_offset + e),
                _ => (0, 0),
            };
            let (start, end) = reader.logits(model, &input)?;
            let loss = ops::scale(
                &ops::add(&ops::softmax_cross_entropy(&start, s)?, &ops::softmax_cross_entropy(&end, e)?)?,
                0.5,
            );
            opt.zero_grad();
            loss.backward()?;
            opt.step(cfg.lr)?;
        }
    }
    Ok(reader)
}
