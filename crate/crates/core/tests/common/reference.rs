//! A straight-line f64 re-implementation of the encoder and MLM loss that
//! reads parameters by name. Used as the forward oracle and, through central
//! differences, as the gradient oracle.

use std::collections::HashMap;

use wordlm::model::{EmbeddingVariant, ModelConfig, WordBertModel};
use wordlm::numerics::GeluKind;

#[derive(Clone)]
pub struct Reference {
    pub config: ModelConfig,
    pub params: HashMap<String, (Vec<usize>, Vec<f64>)>,
}

type Mat = Vec<Vec<f64>>;

impl Reference {
    pub fn of(model: &WordBertModel) -> Self {
        Self {
            config: model.config().clone(),
            params: model
                .named_parameters()
                .into_iter()
                .map(|(n, t)| (n, (t.shape().to_vec(), t.to_vec().into_iter().map(f64::from).collect())))
                .collect(),
        }
    }

    fn p(&self, name: &str) -> &[f64] {
        &self.params.get(name).unwrap_or_else(|| panic!("no parameter {name}")).1
    }

    /// Tied output row for word `id`.
    pub fn word_row(&self, id: u32) -> Vec<f64> {
        let e = self.config.embed_dim;
        let table = self.p("embeddings.word");
        let row = &table[id as usize * e..(id as usize + 1) * e];
        match self.config.variant {
            EmbeddingVariant::Direct => row.to_vec(),
            EmbeddingVariant::Projected => {
                let h = self.config.hidden;
                let w = self.p("embeddings.projection");
                (0..h).map(|j| (0..e).map(|i| row[i] * w[i * h + j]).sum()).collect()
            }
        }
    }

    fn linear(&self, x: &Mat, name: &str) -> Mat {
        let w = self.p(&format!("{name}.weight"));
        let b = self.p(&format!("{name}.bias"));
        let out = b.len();
        let inp = w.len() / out;
        x.iter()
            .map(|r| {
                (0..out)
                    .map(|j| b[j] + (0..inp).map(|i| r[i] * w[i * out + j]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn norm(&self, x: &Mat, name: &str) -> Mat {
        let g = self.p(&format!("{name}.gamma"));
        let b = self.p(&format!("{name}.beta"));
        let eps = self.config.layer_norm_eps as f64;
        x.iter()
            .map(|r| {
                let n = r.len() as f64;
                let mu = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                let inv = 1.0 / (var + eps).sqrt();
                r.iter().enumerate().map(|(j, v)| (v - mu) * inv * g[j] + b[j]).collect()
            })
            .collect()
    }

    fn gelu(&self, v: f64) -> f64 {
        match self.config.gelu {
            GeluKind::Exact => 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)),
            GeluKind::Tanh => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * v * (1.0 + (c * (v + 0.044715 * v.powi(3))).tanh())
            }
        }
    }

    /// Contextual states for one sequence; `mask[j]` says whether key `j`
    /// may be attended to.
    pub fn encode(&self, ids: &[u32], mask: &[bool]) -> Mat {
        let c = &self.config;
        let h = c.hidden;
        let pos = self.p("embeddings.position");
        let emb: Mat = ids
            .iter()
            .enumerate()
            .map(|(t, &id)| {
                let w = self.word_row(id);
                (0..h).map(|j| w[j] + pos[t * h + j]).collect()
            })
            .collect();
        let mut x = self.norm(&emb, "encoder.input_norm");
        let heads = c.num_heads;
        let d = h / heads;
        for l in 0..c.num_layers {
            let pre = format!("encoder.layer.{l}");
            let q = self.linear(&x, &format!("{pre}.attention.query"));
            let k = self.linear(&x, &format!("{pre}.attention.key"));
            let v = self.linear(&x, &format!("{pre}.attention.value"));
            let mut ctx = vec![vec![0.0; h]; x.len()];
            for a in 0..heads {
                let cols = a * d..(a + 1) * d;
                for i in 0..x.len() {
                    let scores: Vec<f64> = (0..x.len())
                        .map(|j| {
                            if mask[j] {
                                cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (d as f64).sqrt()
                            } else {
                                f64::NEG_INFINITY
                            }
                        })
                        .collect();
                    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                    let z: f64 = w.iter().sum();
                    for c in cols.clone() {
                        ctx[i][c] = (0..x.len()).map(|j| w[j] / z * v[j][c]).sum();
                    }
                }
            }
            let attn = self.linear(&ctx, &format!("{pre}.attention.output"));
            let res: Mat = x.iter().zip(&attn).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect()).collect();
            x = self.norm(&res, &format!("{pre}.attention.norm"));
            let mut inner = self.linear(&x, &format!("{pre}.ffn.in"));
            inner.iter_mut().flatten().for_each(|v| *v = self.gelu(*v));
            let ffn = self.linear(&inner, &format!("{pre}.ffn.out"));
            let res: Mat = x.iter().zip(&ffn).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect()).collect();
            x = self.norm(&res, &format!("{pre}.ffn.norm"));
        }
        x
    }

    /// Mean cross-entropy over `targets = (sequence, position, gold id)`
    /// with the output restricted to `vocab` (which must contain each gold).
    pub fn mlm_loss(&self, seqs: &[Vec<u32>], targets: &[(usize, usize, u32)], vocab: &[u32]) -> f64 {
        let bias = self.p("mlm.bias");
        let rows: Vec<Vec<f64>> = vocab.iter().map(|&id| self.word_row(id)).collect();
        let hidden: Vec<Mat> = seqs.iter().map(|s| self.encode(s, &vec![true; s.len()])).collect();
        let total: f64 = targets
            .iter()
            .map(|&(s, p, gold)| {
                let hrow = &hidden[s][p];
                let logits: Vec<f64> = vocab
                    .iter()
                    .zip(&rows)
                    .map(|(&id, r)| bias[id as usize] + hrow.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
                let g = vocab.iter().position(|&v| v == gold).expect("gold in vocab");
                lse - logits[g]
            })
            .sum();
        total / targets.len() as f64
    }

    pub fn perturbed(&self, name: &str, index: usize, delta: f64) -> Self {
        let mut r = self.clone();
        r.params.get_mut(name).unwrap().1[index] += delta;
        r
    }
}
