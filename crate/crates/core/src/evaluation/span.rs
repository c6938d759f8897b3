use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanItem {
    pub context_words: Vec<String>,
    pub question_words: Vec<String>,
    /// Inclusive word ranges in the context; empty means unanswerable.
    pub gold_spans: Vec<(usize, usize)>,
}

impl SpanItem {
    pub fn validate(&self) -> Result<()> {
        for &(s, e) in &self.gold_spans {
            if s > e || e >= self.context_words.len() {
                return Err(Error::contract(format!(
                    "gold span ({s}, {e}) invalid for a {}-word context",
                    self.context_words.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SpanScore {
    pub em: f64,
    pub f1: f64,
}

/// `pred` of `None` is the no-answer prediction; an empty `golds` list is
/// the no-answer gold.
pub fn span_em_f1(pred: Option<(usize, usize)>, golds: &[(usize, usize)]) -> SpanScore {
    let Some((ps, pe)) = pred else {
        let hit = golds.is_empty() as u8 as f64;
        return SpanScore { em: hit, f1: hit };
    };
    let mut best = SpanScore::default();
    for &(gs, ge) in golds {
        if (gs, ge) == (ps, pe) {
            best.em = 1.0;
        }
        let lo = ps.max(gs);
        let hi = pe.min(ge);
        if hi < lo {
            continue;
        }
        let overlap = (hi - lo + 1) as f64;
        let precision = overlap / (pe - ps + 1) as f64;
        let recall = overlap / (ge - gs + 1) as f64;
        best.f1 = best.f1.max(2.0 * precision * recall / (precision + recall));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_arithmetic() {
        assert_eq!(span_em_f1(Some((3, 6)), &[(4, 7)]), SpanScore { em: 0.0, f1: 0.75 });
        assert_eq!(span_em_f1(Some((2, 2)), &[(2, 2)]), SpanScore { em: 1.0, f1: 1.0 });
        assert_eq!(span_em_f1(None, &[]), SpanScore { em: 1.0, f1: 1.0 });
        assert_eq!(span_em_f1(None, &[(0, 0)]), SpanScore::default());
        assert_eq!(span_em_f1(Some((0, 0)), &[]), SpanScore::default());
        assert_eq!(span_em_f1(Some((0, 1)), &[(5, 6), (1, 1)]).f1, 2.0 / 3.0);
    }
}
