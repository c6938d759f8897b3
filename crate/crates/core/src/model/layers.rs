use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::numerics::ops::{self, AttentionLayout};
use crate::numerics::{GeluKind, Tensor};

pub(crate) const INIT_STD: f32 = 0.02;

/// Normal samples with standard deviation `std`, resampled beyond two deviations.
pub(crate) fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f32) -> Vec<f32> {
    let normal = Normal::new(0.0f32, std).expect("positive std");
    (0..n)
        .map(|_| loop {
            let x = normal.sample(rng);
            if x.abs() <= 2.0 * std {
                break x;
            }
        })
        .collect()
}

pub(crate) fn normal<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f32) -> Vec<f32> {
    let normal = Normal::new(0.0f32, std).expect("positive std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub(crate) fn init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor::parameter(&[fan_in, fan_out], truncated_normal(rng, fan_in * fan_out, INIT_STD))?,
            bias: Tensor::parameter(&[fan_out], vec![0.0; fan_out])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::add_bias(&ops::matmul(x, &self.weight)?, &self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f32,
}

impl LayerNorm {
    pub(crate) fn init(h: usize, eps: f32) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::parameter(&[h], vec![1.0; h])?,
            beta: Tensor::parameter(&[h], vec![0.0; h])?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::layer_norm(x, &self.gamma, &self.beta, self.eps)
    }
}

/// One post-norm transformer block.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attention_output: Linear,
    pub attention_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ffn_norm: LayerNorm,
}

pub(crate) fn maybe_dropout(x: Tensor, p: f32, rng: &mut Option<&mut dyn RngCore>) -> Result<Tensor> {
    match rng {
        Some(r) if p > 0.0 => ops::dropout(&x, p, &mut **r),
        _ => Ok(x),
    }
}

impl EncoderLayer {
    pub(crate) fn init<R: Rng + ?Sized>(rng: &mut R, hidden: usize, ffn: usize, eps: f32) -> Result<Self> {
        Ok(Self {
            query: Linear::init(rng, hidden, hidden)?,
            key: Linear::init(rng, hidden, hidden)?,
            value: Linear::init(rng, hidden, hidden)?,
            attention_output: Linear::init(rng, hidden, hidden)?,
            attention_norm: LayerNorm::init(hidden, eps)?,
            ffn_in: Linear::init(rng, hidden, ffn)?,
            ffn_out: Linear::init(rng, ffn, hidden)?,
            ffn_norm: LayerNorm::init(hidden, eps)?,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        layout: &AttentionLayout,
        heads: usize,
        gelu: GeluKind,
        dropout: f32,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<Tensor> {
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let ctx = ops::attention(&q, &k, &v, layout, heads)?;
        let attn = maybe_dropout(self.attention_output.forward(&ctx)?, dropout, rng)?;
        let x = self.attention_norm.forward(&ops::add(x, &attn)?)?;
        let inner = ops::gelu(&self.ffn_in.forward(&x)?, gelu);
        let ffn = maybe_dropout(self.ffn_out.forward(&inner)?, dropout, rng)?;
        self.ffn_norm.forward(&ops::add(&x, &ffn)?)
    }

    pub(crate) fn named_parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (name, lin) in [
            ("attention.query", &self.query),
            ("attention.key", &self.key),
            ("attention.value", &self.value),
            ("attention.output", &self.attention_output),
        ] {
            out.push((format!("{prefix}.{name}.weight"), lin.weight.clone()));
            out.push((format!("{prefix}.{name}.bias"), lin.bias.clone()));
        }
        out.push((format!("{prefix}.attention.norm.gamma"), self.attention_norm.gamma.clone()));
        out.push((format!("{prefix}.attention.norm.beta"), self.attention_norm.beta.clone()));
        for (name, lin) in [("ffn.in", &self.ffn_in), ("ffn.out", &self.ffn_out)] {
            out.push((format!("{prefix}.{name}.weight"), lin.weight.clone()));
            out.push((format!("{prefix}.{name}.bias"), lin.bias.clone()));
        }
        out.push((format!("{prefix}.ffn.norm.gamma"), self.ffn_norm.gamma.clone()));
        out.push((format!("{prefix}.ffn.norm.beta"), self.ffn_norm.beta.clone()));
    }
}
