//! A small synthetic corpus whose masked words are recoverable from context.
//!
//! Each sentence is a run along a fixed successor permutation of the word
//! list, the word `then`, and the same run again. A masked word can be read
//! off its neighbours in the chain or off its copy in the other half.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use wordlm::evaluation::{ClozeItem, BLANK};
use wordlm::model::{ModelConfig, WordBertModel};
use wordlm::rng;
use wordlm::training::{TrainConfig, Trainer};
use wordlm::vocabulary::{count_frequencies, EncodedSequence, WordVocab};

pub const TOY_WORDS: usize = 200;
pub const TOY_RUN: usize = 8;
pub const TOY_MAX_LENGTH: usize = 32;

pub struct Toy {
    pub sentences: Vec<Vec<String>>,
    pub vocab: WordVocab,
    pub encoded: Vec<EncodedSequence>,
    successor: Vec<usize>,
}

fn word(i: usize) -> String {
    format!("w{i:03}")
}

pub fn toy_corpus(n: usize, seed: u64) -> Toy {
    let mut r = rng::stream(seed, "toy", 0);
    let mut successor: Vec<usize> = (0..TOY_WORDS).collect();
    successor.shuffle(&mut r);
    let sentences: Vec<Vec<String>> = (0..n)
        .map(|_| {
            let mut w = r.random_range(0..TOY_WORDS);
            let mut run = Vec::with_capacity(TOY_RUN);
            for _ in 0..TOY_RUN {
                run.push(word(w));
                w = successor[w];
            }
            let mut s = run.clone();
            s.push("then".into());
            s.extend(run);
            s
        })
        .collect();
    let lines: Vec<String> = sentences.iter().map(|s| s.join(" ")).collect();
    let vocab = WordVocab::build(&count_frequencies(&lines, true), 10_000, true).unwrap();
    let encoded = sentences
        .iter()
        .map(|s| vocab.encode(s, TOY_MAX_LENGTH).unwrap())
        .collect();
    Toy {
        sentences,
        vocab,
        encoded,
        successor,
    }
}

impl Toy {
    /// Cloze items that blank one word of the second run; the answer also
    /// appears in the first run. Distractors are other corpus words.
    pub fn cloze_items(&self, count: usize, seed: u64) -> Vec<ClozeItem> {
        let mut r = rng::stream(seed, "cloze", 0);
        (0..count)
            .map(|i| {
                let s = &self.sentences[i % self.sentences.len()];
                let blank = TOY_RUN + 1 + r.random_range(0..TOY_RUN);
                let answer = s[blank].clone();
                let mut options = vec![answer.clone()];
                while options.len() < 4 {
                    let cand = word(r.random_range(0..TOY_WORDS));
                    if !options.contains(&cand) && self.vocab.id(&cand).is_some() {
                        options.push(cand);
                    }
                }
                options.shuffle(&mut r);
                let mut passage = s.clone();
                passage[blank] = BLANK.into();
                ClozeItem {
                    answer_index: options.iter().position(|o| *o == answer).unwrap(),
                    passage_words: passage,
                    options,
                }
            })
            .collect()
    }

    pub fn successor_of(&self, w: usize) -> usize {
        self.successor[w]
    }
}

pub fn toy_model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig::tiny(vocab_size, 2, 64, 4, TOY_MAX_LENGTH)
}

pub fn toy_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        peak_lr: 2e-3,
        warmup_steps: 100,
        total_steps: 2_000,
        batch_size: 32,
        seed,
        neighbors: 0,
        max_length: TOY_MAX_LENGTH,
        ..TrainConfig::default()
    }
}

pub fn toy_trainer(toy: &Toy, seed: u64) -> Trainer {
    let config = toy_model_config(toy.vocab.len());
    let model = WordBertModel::new(config, &mut rng::stream(seed, "init", 0)).unwrap();
    Trainer::new(model, toy.encoded.clone(), toy_train_config(seed)).unwrap()
}

/// The 100-sentence toy corpus and a model trained on it for the full
/// 2,000 steps; computed once per test binary.
pub fn trained_toy() -> (&'static Toy, WordBertModel) {
    static TOY: OnceLock<Toy> = OnceLock::new();
    static PARAMS: OnceLock<HashMap<String, Vec<f32>>> = OnceLock::new();
    let toy = TOY.get_or_init(|| toy_corpus(100, 11));
    let params = PARAMS.get_or_init(|| {
        let mut t = toy_trainer(toy, 11);
        t.run::<Vec<u8>>(2_000, None).unwrap();
        t.model()
            .named_parameters()
            .into_iter()
            .map(|(n, p)| (n, p.to_vec()))
            .collect()
    });
    let model = WordBertModel::from_tensors(toy_model_config(toy.vocab.len()), params).unwrap();
    (toy, model)
}
