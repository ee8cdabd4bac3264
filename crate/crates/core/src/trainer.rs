//! Nested training: relays are trained one at a time from the leaves toward
//! the source. Relays trained earlier act greedily with frozen weights,
//! relays not yet trained emit the null action.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dqn::{load_agent, save_agent, AgentHyperparams, DqnAgent, ReplayBuffer, Transition};
use crate::env::{
    classify_trace, encode_state_into, sample_fault, sample_plan, BreakerBehavior, Controller, EpisodeConfig,
    EpisodeEnv, EpisodePlan, EpisodeTrace, RelayAction, RelayObservation, Verdict,
};
use crate::error::{Error, Result};
use crate::feeder::{FeederTopology, RelayId};

/// Leaf-first order on the backup relation, ties broken by lowest relay id.
pub fn training_order(topology: &FeederTopology) -> Result<Vec<RelayId>> {
    let relays = topology.relays();
    // a relay is ready once the relay it backs up has been placed
    let mut placed = BTreeSet::new();
    let mut order = Vec::with_capacity(relays.len());
    while order.len() < relays.len() {
        let next = relays
            .iter()
            .filter(|r| !placed.contains(&r.id))
            .filter(|r| r.downstream.is_none_or(|d| placed.contains(&d)))
            .map(|r| r.id)
            .min()
            .ok_or_else(|| Error::Topology("backup relation is cyclic".into()))?;
        placed.insert(next);
        order.push(next);
    }
    Ok(order)
}

/// Greedy frozen policies for some relays; the rest emit the null action.
#[derive(Debug, Clone, Default)]
pub struct PolicySet {
    pub agents: BTreeMap<RelayId, DqnAgent>,
}

impl PolicySet {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (id, agent) in &self.agents {
            save_agent(agent, &dir.join(model_file_name(*id)))?;
        }
        Ok(())
    }

    /// Loads one model per relay of the topology.
    pub fn load(dir: &Path, topology: &FeederTopology) -> Result<Self> {
        let mut agents = BTreeMap::new();
        for id in topology.relay_ids() {
            let path = dir.join(model_file_name(id));
            let agent = load_agent(&path).map_err(|e| match e {
                Error::Io(io) => Error::Model(format!("{}: {io}", path.display())),
                other => other,
            })?;
            agents.insert(id, agent);
        }
        Ok(Self { agents })
    }
}

pub fn model_file_name(id: RelayId) -> String {
    format!("relay_{id}.model")
}

impl Controller for PolicySet {
    fn act(&mut self, env: &EpisodeEnv, observations: &[RelayObservation]) -> Vec<RelayAction> {
        let window = env.config().window;
        let mut state = Vec::with_capacity(2 * window + 2);
        env.topology()
            .relays()
            .iter()
            .zip(observations)
            .map(|(r, obs)| match self.agents.get(&r.id) {
                Some(agent) => {
                    encode_state_into(obs, window, &mut state);
                    let a = agent.greedy(&state).expect("agent matches the state size");
                    RelayAction::from_index(a).expect("network has one output per action")
                }
                None => RelayAction::NULL,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub episodes_per_relay: usize,
    /// Independent runs, for mean and spread of learning curves.
    pub runs: usize,
    /// Share of training episodes whose fault is placed where the relay
    /// under training must act: on its own segment, or on the segment of
    /// the relay it backs up with that relay's breaker failing.
    pub focus_fraction: f64,
    /// Window (episodes) over which training failures are counted to pick
    /// the kept snapshot of each agent. 0 keeps the final agent.
    pub checkpoint_window: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            episodes_per_relay: 500,
            runs: 1,
            focus_fraction: 0.5,
            checkpoint_window: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayCurve {
    pub relay: RelayId,
    /// `runs x episodes` episodic rewards of the relay under training.
    pub rewards: Vec<Vec<f64>>,
    /// Whether the relay under training misoperated in each episode.
    pub failures: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub order: Vec<RelayId>,
    pub curves: Vec<RelayCurve>,
    /// Master seed of each run.
    pub seeds: Vec<u64>,
    pub wall_clock_secs: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trailing moving average with a window that grows up to `window`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

impl TrainingReport {
    pub fn curve(&self, relay: RelayId) -> Option<&RelayCurve> {
        self.curves.iter().find(|c| c.relay == relay)
    }

    /// Mean and standard deviation across runs per episode.
    pub fn reward_stats(&self, relay: RelayId) -> Vec<(f64, f64)> {
        let Some(c) = self.curve(relay) else {
            return Vec::new();
        };
        let m = c.rewards.first().map_or(0, Vec::len);
        (0..m).map(|e| mean_std(c.rewards.iter().map(move |r| r[e]))).collect()
    }

    /// `episode,mean_reward,std_reward,failure_rate_ma50`.
    pub fn to_csv(&self, relay: RelayId) -> Option<String> {
        let c = self.curve(relay)?;
        let stats = self.reward_stats(relay);
        let runs = c.failures.len() as f64;
        let fail: Vec<f64> = (0..stats.len())
            .map(|e| c.failures.iter().filter(|f| f[e]).count() as f64 / runs)
            .collect();
        let fail_ma = moving_average(&fail, 50);
        let mut out = String::from("episode,mean_reward,std_reward,failure_rate_ma50\n");
        for (e, ((mean, std), f)) in stats.iter().zip(&fail_ma).enumerate() {
            let _ = writeln!(out, "{e},{mean},{std},{f}");
        }
        Some(out)
    }
}

/// Sum of one relay's per-step rewards over an episode.
pub fn episodic_reward(trace: &EpisodeTrace, relay: RelayId) -> Result<f64> {
    let i = trace
        .relay_position(relay)
        .ok_or_else(|| Error::Usage(format!("relay {relay} not in trace")))?;
    Ok(trace.total_reward(i))
}

/// Progress callback: `(run, relay, episode, episodic reward)`.
pub type Progress<'a> = &'a (dyn Fn(usize, RelayId, usize, f64) + Sync);

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.episodes_per_relay == 0 {
            return Err(Error::Parameter("runs and episodes per relay must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.focus_fraction) {
            return Err(Error::Parameter("focus fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Episode plan for training `relay`. With probability `focus` the fault is
/// placed where the relay's decision matters: on its own segment, or on the
/// segment of the relay it backs up, whose breaker then fails or works with
/// equal odds. Otherwise the plan is a draw from the ordinary distribution.
pub fn training_plan<R: Rng + ?Sized>(
    topology: &FeederTopology,
    config: &EpisodeConfig,
    relay: RelayId,
    focus: f64,
    rng: &mut R,
) -> Result<EpisodePlan> {
    let r = *topology
        .relay(relay)
        .ok_or_else(|| Error::Usage(format!("unknown relay {relay}")))?;
    let mut plan = sample_plan(topology, config, rng)?;
    if focus > 0.0 && rng.random_bool(focus) {
        let segment = match r.downstream {
            Some(n) if rng.random_bool(2.0 / 3.0) => {
                let behavior = if rng.random_bool(0.5) {
                    BreakerBehavior::AlwaysFail
                } else {
                    BreakerBehavior::NeverFail
                };
                plan.breakers.insert(n, behavior);
                topology.relay(n).expect("neighbor exists").segment
            }
            _ => r.segment,
        };
        plan.fault = Some(sample_fault(topology, config, &[segment], rng));
    }
    Ok(plan)
}

/// One run of the nested loop. Returns the frozen policies and per-relay curves.
pub fn train_run(
    topology: &FeederTopology,
    env_config: &EpisodeConfig,
    hp: &AgentHyperparams,
    trainer: &TrainerConfig,
    seed: u64,
    run: usize,
    progress: Option<Progress<'_>>,
) -> Result<(PolicySet, Vec<(RelayId, Vec<f64>, Vec<bool>)>)> {
    hp.validate()?;
    trainer.validate()?;
    let order = training_order(topology)?;
    let mut env = EpisodeEnv::new(topology.clone(), env_config.clone())?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut policies = PolicySet::default();
    let mut curves = Vec::new();

    for &relay in &order {
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let (agent, rewards, failures) =
            train_relay(&mut env, &mut policies, hp, trainer, relay, &mut rng, &|e, total| {
                if let Some(p) = progress {
                    p(run, relay, e, total);
                }
            })?;
        policies.agents.insert(relay, agent);
        curves.push((relay, rewards, failures));
    }
    Ok((policies, curves))
}

/// Trains one relay against the frozen `policies` for the configured number
/// of episodes. Returns the agent with its per-episode rewards and failure flags.
pub fn train_relay<R: Rng + ?Sized>(
    env: &mut EpisodeEnv,
    policies: &mut PolicySet,
    hp: &AgentHyperparams,
    trainer: &TrainerConfig,
    relay: RelayId,
    rng: &mut R,
    on_episode: &dyn Fn(usize, f64),
) -> Result<(DqnAgent, Vec<f64>, Vec<bool>)> {
    let topology = env.topology().clone();
    let env_config = env.config().clone();
    let window = env_config.window;
    let idx = topology
        .relay_index(relay)
        .ok_or_else(|| Error::Usage(format!("unknown relay {relay}")))?;
    let episodes = trainer.episodes_per_relay;
    let mut agent = DqnAgent::new(env_config.state_dim(), hp.clone(), rng)?;
    let mut buffer = ReplayBuffer::new(hp.buffer_capacity);
    let mut events = ReplayBuffer::new(hp.event_capacity);
    let mut rewards = Vec::with_capacity(episodes);
    let mut failures = Vec::with_capacity(episodes);
    let mut state = Vec::new();
    let mut next_state = Vec::new();
    // (failures in window, snapshot), considered once exploration has decayed
    let mut best: Option<(usize, DqnAgent)> = None;
    let w = trainer.checkpoint_window;

    for episode in 0..episodes {
        let epsilon = hp.epsilon(episode);
        let plan = training_plan(&topology, &env_config, relay, trainer.focus_fraction, rng)?;
        let mut obs = env.reset_with_plan(plan, rng.random())?;
        encode_state_into(&obs[idx], window, &mut state);
        let mut total = 0.0;
        loop {
            let mut actions = policies.act(env, &obs);
            let a = agent.act(&state, epsilon, rng)?;
            actions[idx] = RelayAction::from_index(a)?;
            let res = env.step(&actions)?;
            encode_state_into(&res.observations[idx], window, &mut next_state);
            let r = res.rewards[idx];
            total += r;
            let t = Transition {
                state: state.clone(),
                action: a,
                reward: r * hp.reward_scale,
                next_state: next_state.clone(),
                done: res.done,
            };
            let tripped = res.info.trip_commands.iter().any(|(id, _)| *id == relay);
            if res.info.fault_active || tripped {
                events.push(t.clone());
            }
            buffer.push(t);
            if buffer.len() >= hp.warmup.max(hp.batch_size) {
                agent.train_step_mixed(&buffer, &events, rng)?;
            }
            std::mem::swap(&mut state, &mut next_state);
            obs = res.observations;
            if res.done {
                break;
            }
        }
        let verdicts = classify_trace(&topology, env.trace())?;
        rewards.push(total);
        failures.push(verdicts[idx] != Verdict::Correct);
        on_episode(episode, total);
        if w > 0 && episode + 1 >= w && episode >= hp.epsilon_decay_episodes {
            let recent = failures[episode + 1 - w..].iter().filter(|f| **f).count();
            if best.as_ref().is_none_or(|(b, _)| recent <= *b) {
                best = Some((recent, agent.clone()));
            }
        }
    }
    let agent = best.map_or(agent, |(_, a)| a);
    Ok((agent, rewards, failures))
}

/// Runs the nested loop `runs` times with seeds derived from the master
/// seed, in parallel threads. Returns the policies of the first run.
pub fn train_all(
    topology: &FeederTopology,
    env_config: &EpisodeConfig,
    hp: &AgentHyperparams,
    trainer: &TrainerConfig,
    seed: u64,
    progress: Option<Progress<'_>>,
) -> Result<(PolicySet, TrainingReport)> {
    trainer.validate()?;
    env_config.validate()?;
    let started = Instant::now();
    let order = training_order(topology)?;
    let seeds: Vec<u64> = (0..trainer.runs as u64)
        .map(|r| seed.wrapping_add(r.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
        .collect();
    let results: Vec<Result<_>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .enumerate()
            .map(|(run, &seed)| s.spawn(move || train_run(topology, env_config, hp, trainer, seed, run, progress)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let mut policies = None;
    let mut curves: Vec<RelayCurve> = order
        .iter()
        .map(|&relay| RelayCurve {
            relay,
            rewards: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    for result in results {
        let (p, run_curves) = result?;
        policies.get_or_insert(p);
        for (c, (relay, rewards, failures)) in curves.iter_mut().zip(run_curves) {
            debug_assert_eq!(c.relay, relay);
            c.rewards.push(rewards);
            c.failures.push(failures);
        }
    }
    let report = TrainingReport {
        order,
        curves,
        seeds,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((policies.expect("at least one run"), report))
}
