use std::fmt;
use std::str::FromStr;

use crate::config::{parse, KeyValueConfig};
use crate::numerics::GeluKind;

/// How word ids become `H`-dimensional inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbeddingVariant {
    /// A trainable `[V, H]` table.
    #[default]
    Direct,
    /// A frozen `[V, E]` table of pretrained vectors mapped through `W [E, H]`.
    Projected,
}

impl fmt::Display for EmbeddingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Direct => "direct",
            Self::Projected => "projected",
        })
    }
}

impl FromStr for EmbeddingVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "direct" => Ok(Self::Direct),
            "projected" => Ok(Self::Projected),
            _ => Err(format!("expected direct or projected, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub variant: EmbeddingVariant,
    pub freeze_embeddings: bool,
    pub dropout: f32,
    pub layer_norm_eps: f32,
    pub gelu: GeluKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::reference(30_005)
    }
}

impl ModelConfig {
    /// BERT-base shape: 12 layers, 12 heads, 768 hidden, 512 positions.
    pub fn reference(vocab_size: usize) -> Self {
        Self {
            num_layers: 12,
            num_heads: 12,
            hidden: 768,
            embed_dim: 768,
            ffn_dim: 3072,
            max_positions: 512,
            vocab_size,
            variant: EmbeddingVariant::Direct,
            freeze_embeddings: false,
            dropout: 0.1,
            layer_norm_eps: 1e-12,
            gelu: GeluKind::Exact,
        }
    }

    /// The pretrained-vector variant: 300-dimensional frozen embeddings.
    pub fn reference_projected(vocab_size: usize) -> Self {
        Self {
            embed_dim: 300,
            variant: EmbeddingVariant::Projected,
            freeze_embeddings: true,
            ..Self::reference(vocab_size)
        }
    }

    /// A small direct-variant encoder with `ffn_dim = 4·hidden` and no dropout.
    pub fn tiny(vocab_size: usize, num_layers: usize, hidden: usize, num_heads: usize, max_positions: usize) -> Self {
        Self {
            num_layers,
            num_heads,
            hidden,
            embed_dim: hidden,
            ffn_dim: 4 * hidden,
            max_positions,
            vocab_size,
            dropout: 0.0,
            ..Self::reference(vocab_size)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.num_heads
    }

    pub fn parameter_counts(&self) -> ParameterCounts {
        let (h, f, e, v) = (
            self.hidden as u64,
            self.ffn_dim as u64,
            self.embed_dim as u64,
            self.vocab_size as u64,
        );
        let attention = 4 * (h * h + h);
        let ffn = h * f + f + f * h + h;
        let norms = 2 * 2 * h;
        let per_layer = attention + ffn + norms;
        let projection = match self.variant {
            EmbeddingVariant::Direct => 0,
            EmbeddingVariant::Projected => e * h,
        };
        ParameterCounts {
            transformer: self.num_layers as u64 * per_layer
                + self.max_positions as u64 * h
                + 2 * h
                + projection,
            embedding: v * e,
            output_bias: v,
        }
    }
}

/// Parameter totals split the way model tables usually report them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterCounts {
    /// Encoder layers, position table, input norm and (if any) projection.
    pub transformer: u64,
    /// The word embedding table.
    pub embedding: u64,
    /// Per-word MLM output bias.
    pub output_bias: u64,
}

impl ParameterCounts {
    pub fn total(&self) -> u64 {
        self.transformer + self.embedding + self.output_bias
    }
}

impl KeyValueConfig for ModelConfig {
    const SECTION: &'static str = "model";

    fn keys() -> &'static [&'static str] {
        &[
            "layers",
            "heads",
            "hidden",
            "embed_dim",
            "ffn_dim",
            "max_positions",
            "vocab_size",
            "variant",
            "freeze_embeddings",
            "dropout",
            "layer_norm_eps",
            "gelu",
        ]
    }

    fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "layers" => self.num_layers.to_string(),
            "heads" => self.num_heads.to_string(),
            "hidden" => self.hidden.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "ffn_dim" => self.ffn_dim.to_string(),
            "max_positions" => self.max_positions.to_string(),
            "vocab_size" => self.vocab_size.to_string(),
            "variant" => self.variant.to_string(),
            "freeze_embeddings" => self.freeze_embeddings.to_string(),
            "dropout" => self.dropout.to_string(),
            "layer_norm_eps" => self.layer_norm_eps.to_string(),
            "gelu" => match self.gelu {
                GeluKind::Exact => "exact".into(),
                GeluKind::Tanh => "tanh".into(),
            },
            _ => return None,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "layers" => self.num_layers = parse(value)?,
            "heads" => self.num_heads = parse(value)?,
            "hidden" => self.hidden = parse(value)?,
            "embed_dim" => self.embed_dim = parse(value)?,
            "ffn_dim" => self.ffn_dim = parse(value)?,
            "max_positions" => self.max_positions = parse(value)?,
            "vocab_size" => self.vocab_size = parse(value)?,
            "variant" => self.variant = parse(value)?,
            "freeze_embeddings" => self.freeze_embeddings = parse(value)?,
            "dropout" => self.dropout = parse(value)?,
            "layer_norm_eps" => self.layer_norm_eps = parse(value)?,
            "gelu" => {
                self.gelu = match value.trim() {
                    "exact" => GeluKind::Exact,
                    "tanh" => GeluKind::Tanh,
                    other => return Err(format!("expected exact or tanh, got {other:?}")),
                }
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (key, v) in [
            ("model.layers", self.num_layers),
            ("model.heads", self.num_heads),
            ("model.hidden", self.hidden),
            ("model.embed_dim", self.embed_dim),
            ("model.ffn_dim", self.ffn_dim),
            ("model.max_positions", self.max_positions),
            ("model.vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                errs.push(format!("{key}: must be positive"));
            }
        }
        if self.num_heads > 0 && !self.hidden.is_multiple_of(self.num_heads) {
            errs.push(format!(
                "model.heads: hidden size {} is not divisible by {} heads",
                self.hidden, self.num_heads
            ));
        }
        if self.variant == EmbeddingVariant::Direct && self.embed_dim != self.hidden {
            errs.push(format!(
                "model.embed_dim: direct variant needs embed_dim == hidden ({} != {})",
                self.embed_dim, self.hidden
            ));
        }
        if self.variant == EmbeddingVariant::Projected && !self.freeze_embeddings {
            errs.push("model.freeze_embeddings: projected variant requires frozen embeddings".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("model.dropout: {} outside [0, 1)", self.dropout));
        }
        if !(self.layer_norm_eps > 0.0) {
            errs.push("model.layer_norm_eps: must be positive".into());
        }
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_are_reported_by_key() {
        let mut c = ModelConfig::tiny(50, 2, 16, 3, 32);
        assert!(c.validate().iter().any(|e| e.starts_with("model.heads")));
        c.num_heads = 2;
        assert!(c.validate().is_empty());
        c.embed_dim = 8;
        assert!(c.validate().iter().any(|e| e.starts_with("model.embed_dim")));
        c.variant = EmbeddingVariant::Projected;
        assert!(c.validate().iter().any(|e| e.starts_with("model.freeze_embeddings")));
        c.freeze_embeddings = true;
        assert!(c.validate().is_empty());
    }

    #[test]
    fn kv_round_trip() {
        let c = ModelConfig::reference_projected(1234);
        let mut d = ModelConfig::default();
        let kv = c.to_kv();
        d.apply_kv(kv.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(c, d);
    }
}
