//! Bias-corrected Adam.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f32>,
    pub second_moment: Vec<f32>,
    pub step_count: u64,
}

impl AdamState {
    pub fn for_param(param: &Tensor) -> Self {
        Self {
            first_moment: vec![0.0; param.numel()],
            second_moment: vec![0.0; param.numel()],
            step_count: 0,
        }
    }
}

/// Applies one Adam update to `param` in place using its accumulated gradient.
pub fn adam_step(param: &Tensor, state: &mut AdamState, lr: f32, beta1: f32, beta2: f32, eps: f32) -> Result<()> {
    let grad = param
        .grad()
        .ok_or_else(|| Error::contract("adam_step on a parameter without a gradient"))?;
    if state.first_moment.len() != grad.len() || state.second_moment.len() != grad.len() {
        return Err(Error::shape(
            "adam_step",
            &[state.first_moment.len()],
            &[grad.len()],
        ));
    }
    apply_update(&mut param.data_mut(), &grad, state, lr, beta1, beta2, eps);
    Ok(())
}

fn apply_update(data: &mut [f32], grad: &[f32], state: &mut AdamState, lr: f32, beta1: f32, beta2: f32, eps: f32) {
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - (beta1 as f64).powi(t);
    let c2 = 1.0 - (beta2 as f64).powi(t);
    for i in 0..grad.len() {
        let g = grad[i];
        let m = beta1 * state.first_moment[i] + (1.0 - beta1) * g;
        let v = beta2 * state.second_moment[i] + (1.0 - beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m as f64 / c1;
        let v_hat = v as f64 / c2;
        data[i] -= (lr as f64 * m_hat / (v_hat.sqrt() + eps as f64)) as f32;
    }
}

/// Adam over a fixed, named parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    params: Vec<(String, Tensor)>,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(params: Vec<(String, Tensor)>, config: AdamConfig) -> Self {
        let states = params.iter().map(|(_, p)| AdamState::for_param(p)).collect();
        Self {
            config,
            params,
            states,
        }
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|(_, p)| p.zero_grad());
    }

    /// Updates every parameter. A parameter the loss did not reach is treated
    /// as having a zero gradient.
    pub fn step(&mut self, lr: f32) -> Result<()> {
        let AdamConfig { beta1, beta2, eps } = self.config;
        for ((_, p), s) in self.params.iter().zip(self.states.iter_mut()) {
            let g = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            apply_update(&mut p.data_mut(), &g, s, lr, beta1, beta2, eps);
        }
        Ok(())
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [AdamState] {
        &mut self.states
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(data: Vec<f32>, grad: Vec<f32>) -> Tensor {
        let p = Tensor::parameter(&[data.len()], data).unwrap();
        let g = Tensor::new(&[grad.len()], grad).unwrap();
        crate::numerics::ops::sum(&crate::numerics::ops::mul(&p, &g).unwrap())
            .backward()
            .unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let p = with_grad(vec![1.0, -2.0, 3.0], vec![0.0; 3]);
        let mut s = AdamState::for_param(&p);
        adam_step(&p, &mut s, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(p.to_vec(), vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let p = with_grad(vec![0.0; 3], vec![0.5, -3.0, 1e-2]);
        let mut s = AdamState::for_param(&p);
        adam_step(&p, &mut s, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        let d = p.to_vec();
        assert!((d[0] + 1e-3).abs() < 1e-8);
        assert!((d[1] - 1e-3).abs() < 1e-8);
        assert!((d[2] + 1e-3).abs() < 1e-7);
    }

    #[test]
    fn missing_grad_is_contract_error() {
        let p = Tensor::parameter(&[2], vec![0.0; 2]).unwrap();
        let mut s = AdamState::for_param(&p);
        assert!(matches!(
            adam_step(&p, &mut s, 1e-3, 0.9, 0.999, 1e-8),
            Err(Error::Contract(_))
        ));
    }
}
