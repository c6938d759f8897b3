//! MLM input corruption.

use rand::Rng;

use crate::error::{Error, Result};
use crate::vocabulary::{is_special, EncodedSequence, MASK_ID, NUM_SPECIAL};

/// Which words become targets and how their inputs are corrupted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskingPolicy {
    pub mask_ratio: f64,
    pub replace_mask: f64,
    pub replace_random: f64,
    pub keep_original: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self {
            mask_ratio: 0.15,
            replace_mask: 0.8,
            replace_random: 0.1,
            keep_original: 0.1,
        }
    }
}

impl MaskingPolicy {
    /// Every selected word becomes `[MASK]`.
    pub fn mask_only(mask_ratio: f64) -> Self {
        Self {
            mask_ratio,
            replace_mask: 1.0,
            replace_random: 0.0,
            keep_original: 0.0,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            errs.push(format!("train.mask_ratio: {} outside (0, 1]", self.mask_ratio));
        }
        let parts = [self.replace_mask, self.replace_random, self.keep_original];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            errs.push("train.replace_*: each corruption fraction must lie in [0, 1]".into());
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            errs.push(format!(
                "train.replace_mask: corruption fractions sum to {total}, expected 1"
            ));
        }
        errs
    }
}

/// A corrupted batch plus the words to recover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    /// Corrupted copies of the input sequences (attention masks unchanged).
    pub inputs: Vec<EncodedSequence>,
    /// `(sequence, position)` of every target.
    pub target_positions: Vec<(usize, usize)>,
    /// Original ids at the target positions.
    pub target_global_ids: Vec<u32>,
}

impl MaskedBatch {
    pub fn num_targets(&self) -> usize {
        self.target_positions.len()
    }
}

/// Positions eligible for masking: in-vocabulary words.
pub fn maskable_positions(seq: &EncodedSequence) -> Vec<usize> {
    seq.word_positions().filter(|&p| !is_special(seq.ids[p])).collect()
}

/// Selects each maskable word with probability `mask_ratio`, forcing one
/// uniformly chosen word when a sequence would otherwise have none, then
/// corrupts the selection by the policy's mask/random/keep split. Random
/// replacements are uniform over non-special ids.
pub fn apply_masking<R: Rng + ?Sized>(
    batch: &[EncodedSequence],
    policy: &MaskingPolicy,
    vocab_size: usize,
    rng: &mut R,
) -> Result<MaskedBatch> {
    if batch.is_empty() {
        return Err(Error::contract("apply_masking needs a nonempty batch"));
    }
    let errs = policy.validate();
    if !errs.is_empty() {
        return Err(Error::contract(errs.join("; ")));
    }
    if vocab_size <= NUM_SPECIAL as usize {
        return Err(Error::contract("vocabulary has no ordinary words"));
    }
    let mut out = MaskedBatch {
        inputs: batch.to_vec(),
        target_positions: Vec::new(),
        target_global_ids: Vec::new(),
    };
    for (s, seq) in batch.iter().enumerate() {
        let candidates = maskable_positions(seq);
        if candidates.is_empty() {
            continue;
        }
        let mut chosen: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < policy.mask_ratio)
            .collect();
        if chosen.is_empty() {
            chosen.push(candidates[rng.random_range(0..candidates.len())]);
        }
        for p in chosen {
            out.target_positions.push((s, p));
            out.target_global_ids.push(seq.ids[p]);
            let u = rng.random::<f64>();
            if u < policy.replace_mask {
                out.inputs[s].ids[p] = MASK_ID;
            } else if u < policy.replace_mask + policy.replace_random {
                out.inputs[s].ids[p] = rng.random_range(NUM_SPECIAL..vocab_size as u32);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::vocabulary::{CLS_ID, PAD_ID, SEP_ID, UNK_ID};

    fn seq(words: &[u32], len: usize) -> EncodedSequence {
        let mut ids = vec![CLS_ID];
        ids.extend_from_slice(words);
        ids.push(SEP_ID);
        let mut mask = vec![1; ids.len()];
        ids.resize(len, PAD_ID);
        mask.resize(len, 0);
        EncodedSequence {
            ids,
            attention_mask: mask,
            word_count: words.len(),
        }
    }

    #[test]
    fn full_mask_policy_masks_everything() {
        let batch = vec![seq(&[5, 6, 7], 8), seq(&[8, 9], 8)];
        let m = apply_masking(&batch, &MaskingPolicy::mask_only(1.0), 10, &mut rng::stream(1, "m", 0)).unwrap();
        assert_eq!(m.num_targets(), 5);
        assert_eq!(m.inputs[0].ids[1..4], [MASK_ID; 3]);
        assert_eq!(m.target_global_ids, vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn keep_policy_leaves_inputs() {
        let batch = vec![seq(&[5, 6, 7, 8, 9], 9)];
        let keep = MaskingPolicy {
            mask_ratio: 0.5,
            replace_mask: 0.0,
            replace_random: 0.0,
            keep_original: 1.0,
        };
        let m = apply_masking(&batch, &keep, 10, &mut rng::stream(1, "m", 0)).unwrap();
        assert_eq!(m.inputs, batch);
        assert!(m.num_targets() >= 1);
    }

    #[test]
    fn specials_and_unknowns_are_never_targets() {
        let batch = vec![seq(&[UNK_ID, 5, UNK_ID], 7), seq(&[UNK_ID], 4)];
        for trial in 0..50 {
            let m = apply_masking(&batch, &MaskingPolicy::default(), 10, &mut rng::stream(2, "m", trial)).unwrap();
            assert_eq!(m.target_positions, vec![(0, 2)]);
            assert_eq!(m.inputs[0].ids[0], CLS_ID);
            assert_eq!(m.inputs[0].ids[4], SEP_ID);
            assert_eq!(m.inputs[0].ids[5..], [PAD_ID; 2]);
            assert_eq!(m.inputs[1], batch[1]);
        }
    }

    #[test]
    fn rejects_bad_policy_and_empty_batch() {
        let bad = MaskingPolicy {
            replace_mask: 0.5,
            ..MaskingPolicy::default()
        };
        let batch = vec![seq(&[5], 3)];
        assert!(apply_masking(&batch, &bad, 10, &mut rng::stream(0, "m", 0)).is_err());
        assert!(apply_masking(&[], &MaskingPolicy::default(), 10, &mut rng::stream(0, "m", 0)).is_err());
    }
}
