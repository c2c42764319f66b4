use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, greedy_action, AgentError, ReplayBuffer, Result, Transition};
use crate::nn::{Model, ObsBatch, N_ACTIONS};
use crate::tensor::{clip_grad_norm, AdamW, AdamWConfig, Tape};
use crate::{ParamSet, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdqnHyper {
    pub gamma: f64,
    pub epsilon_start: f64,
    /// Multiplier applied to epsilon after every environment step.
    pub epsilon_decay: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Environment steps collected between update rounds.
    pub horizon_len: usize,
    pub repeat_times: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Accepted for search-space compatibility; has no effect.
    #[serde(default)]
    pub state_value_tau: f64,
}

impl Default for DdqnHyper {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epsilon_start: 0.1,
            epsilon_decay: 0.99999,
            tau: 5e-3,
            batch_size: 128,
            replay_capacity: 4 * 6000,
            horizon_len: 6000,
            repeat_times: 1,
            lr: 1e-4,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            state_value_tau: 0.0,
        }
    }
}

impl DdqnHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AgentError::Hyper(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_decay) {
            return bad("epsilon settings must lie in [0, 1]".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.horizon_len == 0 || self.repeat_times == 0 {
            return bad("batch, capacity, horizon and repeat counts must be positive".into());
        }
        if !(self.lr > 0.0 && self.weight_decay >= 0.0 && self.grad_clip > 0.0) {
            return bad("lr and grad_clip must be positive, weight_decay non-negative".into());
        }
        Ok(())
    }

    /// Gradient steps after each horizon.
    pub fn updates_per_horizon(&self) -> usize {
        (self.horizon_len * self.repeat_times).div_ceil(self.batch_size)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Epsilon-greedy action; exploration draws are uniform over the actions.
pub fn ddqn_act<M: Model<f64>>(model: &M, obs: &Tensor, epsilon: f64, rng: &mut impl Rng) -> Result<usize> {
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..N_ACTIONS));
    }
    greedy_action(model, obs)
}

/// Double-DQN targets: the online network picks the next action and the
/// target network values it; terminal transitions use the reward alone.
pub fn ddqn_targets<M: Model<f64>>(batch: &[&Transition], online: &M, target: &M, gamma: f64) -> Result<Vec<f64>> {
    let next = ObsBatch::from_windows(batch.iter().map(|t| &t.next_state))?;
    let q_online = online.scores(&next)?;
    let q_target = target.scores(&next)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done {
                t.reward
            } else {
                let row = &q_online.data()[i * N_ACTIONS..(i + 1) * N_ACTIONS];
                t.reward + gamma * q_target.data()[i * N_ACTIONS + argmax(row)]
            }
        })
        .collect())
}

/// `target <- (1 - tau) * target + tau * online`, parameter-wise.
pub fn soft_update(online: &ParamSet, target: &mut ParamSet, tau: f64) {
    for ((_, t), (_, o)) in target.iter_mut().zip(online.iter()) {
        for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = (1.0 - tau) * *tv + tau * ov;
        }
    }
}

/// Online and target networks, replay, optimizer and exploration state.
#[derive(Clone, Debug)]
pub struct Ddqn<M> {
    pub online: M,
    pub target: M,
    pub hyper: DdqnHyper,
    pub epsilon: f64,
    pub buffer: ReplayBuffer,
    opt: AdamW<f64>,
    rng: ChaCha8Rng,
    pub grad_steps: u64,
}

impl<M: Model<f64>> Ddqn<M> {
    pub fn new(model: M, hyper: DdqnHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let opt = AdamW::new(model.params(), hyper.adamw());
        Ok(Self {
            target: model.clone(),
            online: model,
            epsilon: hyper.epsilon_start,
            buffer: ReplayBuffer::new(hyper.replay_capacity),
            opt,
            rng: ChaCha8Rng::seed_from_u64(seed),
            hyper,
            grad_steps: 0,
        })
    }

    /// Exploring action; decays epsilon by one environment step.
    pub fn act(&mut self, obs: &Tensor) -> Result<usize> {
        let a = ddqn_act(&self.online, obs, self.epsilon, &mut self.rng)?;
        self.epsilon = (self.epsilon * self.hyper.epsilon_decay).max(0.0);
        Ok(a)
    }

    pub fn observe(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// TD loss of `batch` against fixed targets `y`, with its gradients.
    pub fn td_loss(&self, batch: &[&Transition], y: &[f64]) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.online.params().bind(&mut tape, true)?;
        let obs = ObsBatch::from_windows(batch.iter().map(|t| &t.state))?;
        let q = self.online.forward(&mut tape, &bound, &obs)?;
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let q_sa = tape.pick(q, &actions)?;
        let y = tape.constant(Tensor::vector(y.to_vec()))?;
        let diff = tape.sub(q_sa, y)?;
        let sq = tape.square(diff)?;
        let loss = tape.mean(sq)?;
        let value = tape.value(loss).data()[0];
        let grads = bound.grads(&tape.backward(loss)?);
        Ok((value, grads))
    }

    /// One gradient step on a uniform minibatch followed by a soft target
    /// update. `None` while the buffer holds fewer than `batch_size` items.
    pub fn update(&mut self) -> Result<Option<f64>> {
        if self.buffer.len() < self.hyper.batch_size {
            return Ok(None);
        }
        let idx = self.buffer.sample_indices(self.hyper.batch_size, &mut self.rng);
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect();
        let y = ddqn_targets(&batch, &self.online, &self.target, self.hyper.gamma)?;
        let (loss, mut grads) = self.td_loss(&batch, &y)?;
        if !loss.is_finite() {
            return Err(AgentError::NonFinite(loss));
        }
        clip_grad_norm(&mut grads, self.hyper.grad_clip);
        self.opt.step(self.online.params_mut(), &grads)?;
        soft_update(self.online.params(), self.target.params_mut(), self.hyper.tau);
        self.grad_steps += 1;
        Ok(Some(loss))
    }

    pub fn greedy(&self, obs: &Tensor) -> Result<usize> {
        greedy_action(&self.online, obs)
    }
}
