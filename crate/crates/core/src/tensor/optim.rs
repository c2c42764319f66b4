use serde::{Deserialize, Serialize};

use super::{lit, ParamSet, Result, Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub beta1: T,
    pub beta2: T,
    pub lr: T,
    pub weight_decay: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(len: usize, cfg: &AdamWConfig) -> Self {
        Self {
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            beta1: lit(cfg.beta1),
            beta2: lit(cfg.beta2),
            lr: lit(cfg.lr),
            weight_decay: lit(cfg.weight_decay),
            epsilon: lit(cfg.epsilon),
        }
    }
}

/// One decoupled-weight-decay Adam update with bias correction.
///
/// The grad is checked before anything is touched, so a rejected update
/// leaves both `param` and `state` as they were.
pub fn adamw_step<T: Scalar>(param: &mut Tensor<T>, grad: &Tensor<T>, state: &mut AdamWState<T>) -> Result<()> {
    if param.shape() != grad.shape() || state.m.len() != param.numel() || state.v.len() != param.numel() {
        return Err(TensorError::ShapeMismatch {
            op: "adamw_step",
            lhs: param.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    if !grad.is_finite() {
        return Err(TensorError::NonFinite { op: "adamw_step" });
    }
    state.step += 1;
    let t = T::from_u64(state.step).unwrap();
    let bc1 = T::one() - state.beta1.powf(t);
    let bc2 = T::one() - state.beta2.powf(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for ((w, &g), (m, v)) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        let decay = state.lr * state.weight_decay * *w;
        *w = *w - state.lr * m_hat / (v_hat.sqrt() + state.epsilon) - decay;
    }
    Ok(())
}

/// Global L2 norm over a collection of tensors.
pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> T {
    grads.iter().fold(T::zero(), |acc, g| acc + g.sq_norm()).sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: T) -> T {
    let norm = global_norm(grads);
    if norm > max_norm && norm > T::zero() {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x = *x * k;
            }
        }
    }
    norm
}

/// AdamW over a whole [`ParamSet`], one state per parameter in sorted order.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    states: Vec<AdamWState<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamSet<T>, config: AdamWConfig) -> Self {
        let states = params.iter().map(|(_, t)| AdamWState::new(t.numel(), &config)).collect();
        Self { config, states }
    }

    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step)
    }

    /// `grads` must follow the parameter set's iteration order.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != self.states.len() || params.len() != self.states.len() {
            return Err(TensorError::Invalid(format!(
                "optimizer tracks {} tensors, got {} grads for {} params",
                self.states.len(),
                grads.len(),
                params.len()
            )));
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            log::warn!("non-finite gradient in tensor {bad}; update skipped");
            return Err(TensorError::NonFinite { op: "adamw_step" });
        }
        for (((_, p), g), s) in params.iter_mut().zip(grads).zip(self.states.iter_mut()) {
            adamw_step(p, g, s)?;
        }
        Ok(())
    }
}
