use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSequence {
    pub words: Vec<String>,
    pub gold_labels: Vec<String>,
}

impl TaggedSequence {
    pub fn validate(&self, mode: TagMode) -> Result<()> {
        if self.words.len() != self.gold_labels.len() {
            return Err(Error::shape("tagged_sequence", &[self.words.len()], &[self.gold_labels.len()]));
        }
        if mode == TagMode::Span {
            parse_bio(&self.gold_labels, false)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagMode {
    /// Exact BIO span matching (chunking, NER).
    Span,
    /// Per-token labels (POS); `O` is the null label.
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TagCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl TagCounts {
    pub fn add(&mut self, other: TagCounts) {
        self.correct += other.correct;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    /// Undefined ratios count as 0.
    pub fn prf(&self) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.correct, self.predicted);
        let recall = ratio(self.correct, self.gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

/// `(type, start, end)` spans, end inclusive. With `repair`, an `I-X` that
/// does not continue an `X` span opens one; otherwise it is an error.
pub fn bio_spans(labels: &[String], repair: bool) -> Result<Vec<(String, usize, usize)>> {
    parse_bio(labels, repair)
}

fn parse_bio(labels: &[String], repair: bool) -> Result<Vec<(String, usize, usize)>> {
    let mut spans: Vec<(String, usize, usize)> = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, label) in labels.iter().enumerate() {
        let (prefix, kind) = match label.as_str() {
            "O" => ("O", ""),
            l => l
                .split_once('-')
                .filter(|(p, k)| (*p == "B" || *p == "I") && !k.is_empty())
                .ok_or_else(|| Error::contract(format!("label {l:?} at {i} is not BIO")))?,
        };
        let continues = prefix == "I" && open.as_ref().is_some_and(|(k, _)| k == kind);
        if continues {
            continue;
        }
        if let Some((k, s)) = open.take() {
            spans.push((k, s, i - 1));
        }
        match prefix {
            "B" => open = Some((kind.to_owned(), i)),
            "I" if repair => {
                log::debug!("repairing stray {label} at position {i}");
                open = Some((kind.to_owned(), i));
            }
            "I" => return Err(Error::contract(format!("{label} at {i} does not continue a span"))),
            _ => {}
        }
    }
    if let Some((k, s)) = open {
        spans.push((k, s, labels.len() - 1));
    }
    Ok(spans)
}

pub fn tag_counts(pred: &[String], gold: &[String], mode: TagMode) -> Result<TagCounts> {
    if pred.len() != gold.len() {
        return Err(Error::shape("tag_f1", &[pred.len()], &[gold.len()]));
    }
    Ok(match mode {
        TagMode::Token => TagCounts {
            correct: pred.iter().zip(gold).filter(|(p, g)| p == g && *g != "O").count(),
            predicted: pred.iter().filter(|p| *p != "O").count(),
            gold: gold.iter().filter(|g| *g != "O").count(),
        },
        TagMode::Span => {
            let g = parse_bio(gold, false)?;
            let p = parse_bio(pred, true)?;
            TagCounts {
                correct: p.iter().filter(|s| g.contains(s)).count(),
                predicted: p.len(),
                gold: g.len(),
            }
        }
    })
}

pub fn tag_f1(pred: &[String], gold: &[String], mode: TagMode) -> Result<Prf> {
    Ok(tag_counts(pred, gold, mode)?.prf())
}

/// Micro-averaged over all sequences.
pub fn tag_f1_corpus(preds: &[Vec<String>], golds: &[Vec<String>], mode: TagMode) -> Result<Prf> {
    if preds.len() != golds.len() {
        return Err(Error::shape("tag_f1_corpus", &[preds.len()], &[golds.len()]));
    }
    let mut total = TagCounts::default();
    for (p, g) in preds.iter().zip(golds) {
        total.add(tag_counts(p, g, mode)?);
    }
    Ok(total.prf())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn two_predicted_one_correct() {
        let gold = l("B-PER I-PER O B-LOC O B-ORG");
        let pred = l("B-PER I-PER O O B-LOC O");
        let m = tag_f1(&pred, &gold, TagMode::Span).unwrap();
        assert_eq!(m.precision, 0.5);
        assert!((m.recall - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn no_predictions_scores_zero() {
        let m = tag_f1(&l("O O"), &l("B-X I-X"), TagMode::Span).unwrap();
        assert_eq!(m, Prf::default());
    }

    #[test]
    fn stray_inside_is_repaired_in_predictions_only() {
        let gold = l("B-X I-X O");
        let pred = l("I-X I-X O");
        assert_eq!(tag_f1(&pred, &gold, TagMode::Span).unwrap().f1, 1.0);
        assert!(tag_f1(&gold, &pred, TagMode::Span).is_err());
        assert_eq!(bio_spans(&l("B-X I-Y"), true).unwrap(), vec![("X".into(), 0, 0), ("Y".into(), 1, 1)]);
    }

    #[test]
    fn token_mode_is_accuracy_without_null() {
        let m = tag_f1(&l("NN VB DT NN"), &l("NN VB NN NN"), TagMode::Token).unwrap();
        assert_eq!(m.f1, 0.75);
    }
}
