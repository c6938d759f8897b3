//! Task heads over encoder states. One word is one position, so tagging and
//! span extraction read the encoder output directly without sub-token pooling.

use rand::Rng;

use super::layers::{truncated_normal, INIT_STD};
use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::Tensor;

/// Per-position affine classifier `[H] → [C]`.
#[derive(Debug, Clone)]
pub struct LabelHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LabelHead {
    pub fn new<R: Rng + ?Sized>(hidden: usize, num_labels: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            weight: Tensor::parameter(&[hidden, num_labels], truncated_normal(rng, hidden * num_labels, INIT_STD))?,
            bias: Tensor::parameter(&[num_labels], vec![0.0; num_labels])?,
        })
    }

    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        vec![
            ("head.label.weight".into(), self.weight.clone()),
            ("head.label.bias".into(), self.bias.clone()),
        ]
    }
}

/// `hidden [T, H] → [T, C]`.
pub fn label_logits(hidden: &Tensor, head: &LabelHead) -> Result<Tensor> {
    ops::add_bias(&ops::matmul(hidden, &head.weight)?, &head.bias)
}

/// Start and end scoring vectors for answer spans. Position 0 (`[CLS]`)
/// stands for "no answer".
#[derive(Debug, Clone)]
pub struct SpanHead {
    pub start: Tensor,
    pub end: Tensor,
}

impl SpanHead {
    pub fn new<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            start: Tensor::parameter(&[hidden], truncated_normal(rng, hidden, INIT_STD))?,
            end: Tensor::parameter(&[hidden], truncated_normal(rng, hidden, INIT_STD))?,
        })
    }

    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        vec![
            ("head.span.start".into(), self.start.clone()),
            ("head.span.end".into(), self.end.clone()),
        ]
    }
}

/// `start[t] = hidden[t]·w_start`, `end[t] = hidden[t]·w_end`, each `[T]`.
pub fn span_logits(hidden: &Tensor, head: &SpanHead) -> Result<(Tensor, Tensor)> {
    let h = head.start.numel();
    if hidden.shape().len() != 2 || hidden.shape()[1] != h || head.end.numel() != h {
        return Err(Error::shape("span_logits", hidden.shape(), head.start.shape()));
    }
    let t = hidden.shape()[0];
    let score = |w: &Tensor| -> Result<Tensor> {
        let col = ops::reshape(w, &[h, 1])?;
        ops::reshape(&ops::matmul(hidden, &col)?, &[t])
    };
    Ok((score(&head.start)?, score(&head.end)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_label_head_yields_bias() {
        let hidden = Tensor::new(&[3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let head = LabelHead {
            weight: Tensor::zeros(&[2, 3]).unwrap(),
            bias: Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap(),
        };
        let y = label_logits(&hidden, &head).unwrap().to_vec();
        assert_eq!(y, [0.1, 0.2, 0.3].repeat(3));
        let bad = LabelHead {
            weight: Tensor::zeros(&[3, 3]).unwrap(),
            bias: Tensor::zeros(&[3]).unwrap(),
        };
        assert!(matches!(label_logits(&hidden, &bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn identity_label_head_reproduces_features() {
        let hidden = Tensor::new(&[1, 2], vec![0.7, -1.5]).unwrap();
        let head = LabelHead {
            weight: Tensor::new(&[2, 2], vec![1., 0., 0., 1.]).unwrap(),
            bias: Tensor::zeros(&[2]).unwrap(),
        };
        assert_eq!(label_logits(&hidden, &head).unwrap().to_vec(), vec![0.7, -1.5]);
    }

    #[test]
    fn span_head_cases() {
        let hidden = Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let w = Tensor::new(&[2], vec![0.5, -1.0]).unwrap();
        let head = SpanHead {
            start: w.clone(),
            end: w,
        };
        let (s, e) = span_logits(&hidden, &head).unwrap();
        assert_eq!(s.to_vec(), e.to_vec());
        assert_eq!(s.shape(), [2]);
        let zero = SpanHead {
            start: Tensor::zeros(&[2]).unwrap(),
            end: Tensor::zeros(&[2]).unwrap(),
        };
        let (s, e) = span_logits(&hidden, &zero).unwrap();
        assert_eq!(s.to_vec(), vec![0.0; 2]);
        assert_eq!(e.to_vec(), vec![0.0; 2]);
    }
}
