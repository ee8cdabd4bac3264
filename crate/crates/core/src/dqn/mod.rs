//! Deep Q-network agent: MLP, Adam, replay, soft target updates and
//! double-DQN targets.

mod adam;
mod io;
mod mlp;
mod replay;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::N_ACTIONS;
use crate::error::{Error, Result};

pub use adam::Adam;
pub use io::{agent_from_bytes, agent_to_bytes, load_agent, save_agent, MODEL_MAGIC, MODEL_VERSION};
pub use mlp::{argmax, ForwardCache, Mlp};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentHyperparams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub double_dqn: bool,
    pub buffer_capacity: usize,
    /// Transitions stored before the first update.
    pub warmup: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: usize,
    /// Factor applied to rewards before they enter the replay buffer.
    pub reward_scale: f64,
    /// Share of each batch drawn from a separate buffer of event transitions
    /// (fault active or a trip command), when that buffer holds enough.
    pub event_fraction: f64,
    pub event_capacity: usize,
}

impl Default for AgentHyperparams {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            learning_rate: 5e-4,
            gamma: 0.95,
            batch_size: 32,
            tau: 0.005,
            double_dqn: true,
            buffer_capacity: 10_000,
            warmup: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 150,
            reward_scale: 0.01,
            event_fraction: 0.5,
            event_capacity: 5_000,
        }
    }
}

impl AgentHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad("batch size must be positive and at most the buffer capacity");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.event_fraction) || self.event_capacity == 0 {
            return bad("event fraction must be in [0, 1] and event capacity positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon must be in [0, 1]");
            }
        }
        Ok(())
    }

    /// Layer sizes for a given state length.
    pub fn dims(&self, input: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(&self.hidden);
        d.push(N_ACTIONS);
        d
    }

    /// Linear decay from start to end over the decay window, then constant.
    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.epsilon_decay_episodes == 0 || episode >= self.epsilon_decay_episodes {
            return self.epsilon_end;
        }
        let frac = episode as f64 / self.epsilon_decay_episodes as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// With probability `epsilon` a uniform action, otherwise the greedy one
/// (lowest index on ties). No randomness is drawn when `epsilon` is 0.
pub fn act_epsilon_greedy<R: Rng + ?Sized>(net: &Mlp, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..net.output_dim()));
    }
    Ok(argmax(&net.forward(state)?))
}

/// `r` for terminal transitions, otherwise `r + gamma * Q_target(s', a*)`
/// with `a*` the online argmax (double DQN) or the target argmax.
pub fn td_targets(batch: &[&Transition], online: &Mlp, target: &Mlp, gamma: f64, double_dqn: bool) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let dim = target.input_dim();
    let mut next = Vec::with_capacity(batch.len() * dim);
    for t in batch {
        if t.next_state.len() != dim {
            return Err(Error::Usage(
                "transition state length does not match the network".into(),
            ));
        }
        next.extend_from_slice(&t.next_state);
    }
    let q_target = target.forward_batch(&next, batch.len())?;
    let q_online = if double_dqn {
        Some(online.forward_batch(&next, batch.len())?)
    } else {
        None
    };
    let k = target.output_dim();
    Ok(batch
        .iter()
        .enumerate()
        .map(|(b, t)| {
            if t.done {
                return t.reward;
            }
            let qt = &q_target.output()[b * k..(b + 1) * k];
            let a = match &q_online {
                Some(qo) => argmax(&qo.output()[b * k..(b + 1) * k]),
                None => argmax(qt),
            };
            t.reward + gamma * qt[a]
        })
        .collect())
}

/// Mean squared error over the chosen actions and its gradient with respect
/// to the network parameters.
pub fn loss_and_grad(net: &Mlp, batch: &[&Transition], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let dim = net.input_dim();
    let mut states = Vec::with_capacity(batch.len() * dim);
    for t in batch {
        if t.state.len() != dim || t.action >= net.output_dim() {
            return Err(Error::Usage("transition does not fit the network".into()));
        }
        states.extend_from_slice(&t.state);
    }
    let cache = net.forward_batch(&states, batch.len())?;
    let k = net.output_dim();
    let n = batch.len() as f64;
    let mut grad_out = vec![0.0; batch.len() * k];
    let mut loss = 0.0;
    for (b, (t, y)) in batch.iter().zip(targets).enumerate() {
        let q = cache.output()[b * k + t.action];
        loss += (q - y).powi(2) / n;
        grad_out[b * k + t.action] = 2.0 * (q - y) / n;
    }
    Ok((loss, net.backward(&cache, &grad_out)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnAgent {
    pub online: Mlp,
    pub target: Mlp,
    pub adam: Adam,
    pub hp: AgentHyperparams,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hp: AgentHyperparams, rng: &mut R) -> Result<Self> {
        hp.validate()?;
        let online = Mlp::init(&hp.dims(state_dim), rng)?;
        let target = online.clone();
        let adam = Adam::new(online.params().len(), hp.learning_rate);
        Ok(Self {
            online,
            target,
            adam,
            hp,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.online.input_dim()
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        act_epsilon_greedy(&self.online, state, epsilon, rng)
    }

    pub fn greedy(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.online.forward(state)?))
    }

    /// One replay update followed by a soft target update. Returns `None`
    /// without touching anything if the buffer holds fewer than a batch.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<Option<f64>> {
        match buffer.sample(self.hp.batch_size, rng) {
            Some(batch) => self.train_on_batch(&batch).map(Some),
            None => Ok(None),
        }
    }

    /// Like [`Self::train_step`], with `event_fraction` of the batch taken
    /// from `events` once it holds that many transitions.
    pub fn train_step_mixed<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        events: &ReplayBuffer,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        let n = self.hp.batch_size;
        let k = (self.hp.event_fraction * n as f64).round() as usize;
        if k == 0 || events.len() < k {
            return self.train_step(buffer, rng);
        }
        let Some(mut batch) = buffer.sample(n - k, rng) else {
            return Ok(None);
        };
        batch.extend(events.sample(k, rng).expect("checked length"));
        self.train_on_batch(&batch).map(Some)
    }

    /// Gradient step on the given batch, then the soft target update. Returns the loss.
    pub fn train_on_batch(&mut self, batch: &[&Transition]) -> Result<f64> {
        let targets = td_targets(batch, &self.online, &self.target, self.hp.gamma, self.hp.double_dqn)?;
        let (loss, grad) = loss_and_grad(&self.online, batch, &targets)?;
        self.adam.update(self.online.params_mut(), &grad);
        self.target.soft_update_from(&self.online, self.hp.tau);
        Ok(loss)
    }
}
