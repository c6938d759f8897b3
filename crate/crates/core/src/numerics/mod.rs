//! Tensor algebra, reverse-mode differentiation and Adam.

pub mod ops;
pub mod optim;
mod tensor;

pub use ops::{AttentionLayout, GeluKind};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use tensor::Tensor;
