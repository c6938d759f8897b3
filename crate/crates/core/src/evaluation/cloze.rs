use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::WordBertModel;
use crate::numerics::ops;
use crate::vocabulary::{is_special, WordVocab, MASK_ID};

/// Marks the blank in a cloze passage.
pub const BLANK: &str = "_";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClozeItem {
    pub passage_words: Vec<String>,
    pub options: Vec<String>,
    pub answer_index: usize,
}

impl ClozeItem {
    pub fn blank_position(&self) -> Result<usize> {
        let mut blanks = self.passage_words.iter().enumerate().filter(|(_, w)| *w == BLANK);
        match (blanks.next(), blanks.next()) {
            (Some((i, _)), None) => Ok(i),
            _ => Err(Error::contract(format!("cloze passage needs exactly one {BLANK:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.blank_position()?;
        if self.options.len() != 4 {
            return Err(Error::contract(format!("cloze item has {} options, expected 4", self.options.len())));
        }
        for (i, o) in self.options.iter().enumerate() {
            if self.options[..i].contains(o) {
                return Err(Error::contract(format!("duplicate cloze option {o:?}")));
            }
        }
        if self.answer_index >= 4 {
            return Err(Error::Index {
                what: "answer index",
                index: self.answer_index,
                bound: 4,
            });
        }
        Ok(())
    }
}

/// Highest-scoring option; `None` scores −∞ and ties go to the lower index.
pub fn choose_option(scores: &[Option<f32>]) -> Result<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::contract("every cloze option is out of vocabulary"))
}

/// MLM logits of each option at the blank (`None` for OOV options).
///
/// Options share the softmax normaliser, so ranking raw logits is the same
/// as ranking log-probabilities.
pub fn cloze_option_logits(
    model: &WordBertModel,
    vocab: &WordVocab,
    item: &ClozeItem,
    max_length: usize,
) -> Result<Vec<Option<f32>>> {
    item.validate()?;
    let blank = item.blank_position()?;
    let mut seq = vocab.encode(&item.passage_words, max_length)?;
    if blank >= seq.word_count {
        return Err(Error::Length {
            length: blank + 3,
            max: max_length,
        });
    }
    seq.ids[blank + 1] = MASK_ID;
    let emb = model.embed(&seq)?;
    let hidden = model.encode_sequence(&emb, &seq.mask_bools())?;
    let at = ops::gather_rows(&hidden, &[blank + 1])?;
    let ids: Vec<Option<u32>> = item
        .options
        .iter()
        .map(|o| vocab.id(o).filter(|&id| !is_special(id)))
        .collect();
    let known: Vec<u32> = ids.iter().flatten().copied().collect();
    if known.is_empty() {
        return Err(Error::contract("every cloze option is out of vocabulary"));
    }
    let logits = model.logits_for_ids(&at, &known)?.to_vec();
    let mut next = logits.into_iter();
    Ok(ids.iter().map(|id| id.and_then(|_| next.next())).collect())
}

pub fn score_cloze(model: &WordBertModel, vocab: &WordVocab, item: &ClozeItem, max_length: usize) -> Result<usize> {
    choose_option(&cloze_option_logits(model, vocab, item, max_length)?)
}

pub fn cloze_accuracy(model: &WordBertModel, vocab: &WordVocab, items: &[ClozeItem], max_length: usize) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::contract("no cloze items"));
    }
    let mut correct = 0;
    for item in items {
        if score_cloze(model, vocab, item, max_length)? == item.answer_index {
            correct += 1;
        }
    }
    Ok(correct as f64 / items.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_pick_first_and_oov_loses() {
        assert_eq!(choose_option(&[Some(1.0); 4]).unwrap(), 0);
        assert_eq!(choose_option(&[None, Some(-5.0), Some(2.0), Some(2.0)]).unwrap(), 2);
        assert!(choose_option(&[None; 4]).is_err());
    }

    #[test]
    fn shift_does_not_change_choice() {
        let s = [Some(0.3f32), Some(1.7), Some(-2.0), Some(1.69)];
        let shifted: Vec<Option<f32>> = s.iter().map(|x| x.map(|v| v + 1000.0)).collect();
        assert_eq!(choose_option(&s).unwrap(), 1);
        assert_eq!(choose_option(&shifted).unwrap(), 1);
    }

    #[test]
    fn item_validation() {
        let item = ClozeItem {
            passage_words: vec!["a".into(), BLANK.into()],
            options: vec!["x".into(), "y".into(), "x".into(), "z".into()],
            answer_index: 0,
        };
        assert!(item.validate().is_err());
    }
}
