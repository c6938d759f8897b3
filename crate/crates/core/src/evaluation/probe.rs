use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buckets::{Bucket, FrequencyBuckets};
use crate::error::{Error, Result};
use crate::model::WordBertModel;
use crate::numerics::ops;
use crate::vocabulary::{is_special, WordVocab, MASK_ID};

/// A sentence with some words hidden.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeExample {
    pub words: Vec<String>,
    pub masked_positions: Vec<usize>,
    pub gold_words: Vec<String>,
    /// The stratum the masks were drawn from; `None` when every word was eligible.
    pub bucket: Option<Bucket>,
}

impl ProbeExample {
    pub fn validate(&self) -> Result<()> {
        if self.masked_positions.len() != self.gold_words.len() {
            return Err(Error::contract("masked_positions and gold_words differ in length"));
        }
        if self.masked_positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("masked_positions must be strictly increasing"));
        }
        if let Some(&p) = self.masked_positions.last() {
            if p >= self.words.len() {
                return Err(Error::Index {
                    what: "masked position",
                    index: p,
                    bound: self.words.len(),
                });
            }
        }
        Ok(())
    }
}

/// Masks each word of the chosen bucket (any word when `bucket` is `None`)
/// independently with probability `p`. Sentences without a mask are dropped.
pub fn build_probe_set<R: Rng + ?Sized>(
    corpus: &[Vec<String>],
    buckets: &FrequencyBuckets,
    bucket: Option<Bucket>,
    p: f64,
    rng: &mut R,
) -> Result<Vec<ProbeExample>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::contract(format!("mask probability {p} outside [0, 1]")));
    }
    let mut out = Vec::new();
    for words in corpus {
        let mut masked_positions = Vec::new();
        for (i, w) in words.iter().enumerate() {
            let eligible = bucket.is_none_or(|b| buckets.bucket_of(w) == b);
            if eligible && rng.random::<f64>() < p {
                masked_positions.push(i);
            }
        }
        if masked_positions.is_empty() {
            continue;
        }
        out.push(ProbeExample {
            gold_words: masked_positions.iter().map(|&i| words[i].clone()).collect(),
            words: words.clone(),
            masked_positions,
            bucket,
        });
    }
    Ok(out)
}

/// Per-bucket counts; `hits[i]` counts golds ranked within `ks[i]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BucketTally {
    pub masked: usize,
    pub oov: usize,
    pub hits: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub ks: Vec<usize>,
    /// Buckets are assigned per gold word by reference frequency.
    pub buckets: BTreeMap<Bucket, BucketTally>,
    /// Masked positions beyond the encoder's length limit, not scored.
    pub truncated: usize,
}

impl ProbeReport {
    pub fn accuracy(&self, bucket: Bucket, k_index: usize) -> Option<f64> {
        let t = self.buckets.get(&bucket)?;
        (t.masked > 0).then(|| t.hits[k_index] as f64 / t.masked as f64)
    }

    pub fn total_masked(&self) -> usize {
        self.buckets.values().map(|t| t.masked).sum()
    }

    /// Accuracy over every scored position.
    pub fn overall_accuracy(&self, k_index: usize) -> Option<f64> {
        let total = self.total_masked();
        let hits: usize = self.buckets.values().map(|t| t.hits[k_index]).sum();
        (total > 0).then(|| hits as f64 / total as f64)
    }
}

/// Ranks the full vocabulary (specials excluded) at every masked position;
/// equal logits rank the lower id first. OOV golds count as misses and are
/// tallied separately. Parameters are only read.
pub fn probe_topk(
    model: &WordBertModel,
    vocab: &WordVocab,
    buckets: &FrequencyBuckets,
    probes: &[ProbeExample],
    ks: &[usize],
    max_length: usize,
) -> Result<ProbeReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::contract("ks must be nonempty and positive"));
    }
    let mut report = ProbeReport {
        ks: ks.to_vec(),
        buckets: Bucket::ALL
            .iter()
            .map(|&b| {
                (
                    b,
                    BucketTally {
                        hits: vec![0; ks.len()],
                        ..BucketTally::default()
                    },
                )
            })
            .collect(),
        truncated: 0,
    };
    let v = model.config().vocab_size;
    for ex in probes {
        ex.validate()?;
        let mut seq = vocab.encode(&ex.words, max_length)?;
        let mut rows = Vec::new();
        for (&pos, gold) in ex.masked_positions.iter().zip(&ex.gold_words) {
            if pos >= seq.word_count {
                report.truncated += 1;
                continue;
            }
            seq.ids[pos + 1] = MASK_ID;
            rows.push((pos + 1, gold));
        }
        if rows.is_empty() {
            continue;
        }
        let emb = model.embed(&seq)?;
        let hidden = model.encode_sequence(&emb, &seq.mask_bools())?;
        let at = ops::gather_rows(&hidden, &rows.iter().map(|r| r.0).collect::<Vec<_>>())?;
        let logits = model.full_logits(&at)?;
        let data = logits.data();
        for (i, (_, gold)) in rows.iter().enumerate() {
            let tally = report.buckets.get_mut(&buckets.bucket_of(gold)).expect("all buckets present");
            tally.masked += 1;
            let Some(g) = vocab.id(gold).filter(|&g| !is_special(g)) else {
                tally.oov += 1;
                continue;
            };
            let row = &data[i * v..(i + 1) * v];
            let target = row[g as usize];
            let rank = (0..v as u32)
                .filter(|&j| !is_special(j))
                .filter(|&j| {
                    let l = row[j as usize];
                    l > target || (l == target && j < g)
                })
                .count();
            for (h, &k) in tally.hits.iter_mut().zip(ks) {
                if rank < k {
                    *h += 1;
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_owned).collect()
    }

    fn buckets() -> FrequencyBuckets {
        let reference: HashMap<String, u64> = [("the", 5000), ("cat", 400), ("sat", 10)]
            .into_iter()
            .map(|(w, c)| (w.to_owned(), c))
            .collect();
        FrequencyBuckets::new(reference)
    }

    #[test]
    fn certain_masking_hits_every_bucket_member() {
        let corpus = vec![words("the cat sat on the mat"), words("sat sat")];
        let set = build_probe_set(&corpus, &buckets(), Some(Bucket::High), 1.0, &mut crate::rng::stream(0, "p", 0)).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set[0].masked_positions, vec![0, 4]);
        assert_eq!(set[0].gold_words, vec!["the", "the"]);
        let rare = build_probe_set(&corpus, &buckets(), Some(Bucket::Rare), 1.0, &mut crate::rng::stream(0, "p", 0)).unwrap();
        assert_eq!(rare[0].masked_positions, vec![3, 5]);
    }

    #[test]
    fn zero_probability_drops_everything() {
        let corpus = vec![words("the cat")];
        let set = build_probe_set(&corpus, &buckets(), None, 0.0, &mut crate::rng::stream(0, "p", 0)).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn validate_rejects_unsorted_positions() {
        let ex = ProbeExample {
            words: words("a b c"),
            masked_positions: vec![2, 1],
            gold_words: words("c b"),
            bucket: None,
        };
        assert!(ex.validate().is_err());
    }
}
