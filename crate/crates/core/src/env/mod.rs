//! Episodic multi-relay environment: measurement windows, counter-based
//! actions, breaker mechanics and per-relay rewards.
//!
//! Step `t` proceeds as: breakers whose trip command was issued at `t - 1`
//! open; actions are applied to the counters (an expiring countdown issues a
//! trip command); the circuit is solved with the fault present iff
//! `t >= onset`; windows shift; rewards are computed against this step's
//! fault state.

mod oracle;
mod reward;
mod trace;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{sample_load_profile, solve_circuit, FaultSpec, FeederTopology, Interval, LoadProfile, RelayId};

pub use oracle::{classify_trace, episode_failed, ideal_actions, IdealActionInput, OracleController, Verdict};
pub use reward::{reward, ActionEffect, Condition};
pub use trace::{EpisodeTrace, TraceStep};

pub const N_ACTIONS: usize = 11;
pub const MAX_COUNTER: u8 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelayAction {
    /// Decrement an active counter; no-op when inactive. The null action.
    Countdown,
    /// Start (or overwrite) the counter at 1..=9.
    Set(u8),
    /// Deactivate the counter.
    Reset,
}

impl RelayAction {
    pub const NULL: RelayAction = RelayAction::Countdown;

    pub fn index(self) -> usize {
        match self {
            Self::Countdown => 0,
            Self::Set(k) => k as usize,
            Self::Reset => 10,
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(Self::Countdown),
            1..=9 => Ok(Self::Set(index as u8)),
            10 => Ok(Self::Reset),
            _ => Err(Error::Usage(format!("action index {index} outside 0..{N_ACTIONS}"))),
        }
    }
}

impl fmt::Display for RelayAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Countdown => write!(f, "countdown"),
            Self::Set(k) => write!(f, "set{k}"),
            Self::Reset => write!(f, "reset"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub horizon: usize,
    /// Seconds per step.
    pub timestep: f64,
    /// Number of past measurements in each window.
    pub window: usize,
    pub fault_probability: f64,
    /// Inclusive step range for fault onset.
    pub onset_window: (usize, usize),
    pub breaker_failure_prob: f64,
    pub trend_range: Interval,
    pub local_range: Interval,
    /// Resistive fault impedance range (pu).
    pub fault_resistance: Interval,
    /// Standard deviation of the per-step multiplicative load noise.
    pub load_jitter: f64,
    /// Steps the episode continues after the fault is cleared.
    pub settle_steps: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon: 240,
            timestep: 1.0 / 600.0,
            window: 10,
            fault_probability: 0.8,
            onset_window: (60, 120),
            breaker_failure_prob: 0.1,
            trend_range: Interval::new(0.7, 1.3),
            local_range: Interval::new(0.8, 1.2),
            fault_resistance: Interval::new(0.05, 2.0),
            load_jitter: 0.01,
            settle_steps: 20,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if self.window < 2 {
            return bad("window must be at least 2");
        }
        if self.onset_window.0 > self.onset_window.1 {
            return bad("onset window is empty");
        }
        if self.horizon <= self.onset_window.1 + 30 {
            return bad("horizon must exceed the onset window by more than 30 steps");
        }
        for (name, p) in [
            ("fault_probability", self.fault_probability),
            ("breaker_failure_prob", self.breaker_failure_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parameter(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.timestep > 0.0) {
            return bad("timestep must be positive");
        }
        if !(self.load_jitter >= 0.0) {
            return bad("load jitter must be non-negative");
        }
        self.trend_range.validate_positive("trend range")?;
        self.local_range.validate_positive("local range")?;
        if !(self.fault_resistance.lo >= 0.0 && self.fault_resistance.lo <= self.fault_resistance.hi) {
            return bad("fault resistance range must be non-negative and non-empty");
        }
        Ok(())
    }

    /// Length of an encoded state vector.
    pub fn state_dim(&self) -> usize {
        2 * self.window + 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BreakerBehavior {
    /// Ignore a trip command with the configured failure probability.
    #[default]
    Random,
    AlwaysFail,
    NeverFail,
}

/// Everything random about an episode that is fixed at reset.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePlan {
    pub profile: LoadProfile,
    pub fault: Option<FaultSpec>,
    /// Relays not listed use [`BreakerBehavior::Random`].
    pub breakers: BTreeMap<RelayId, BreakerBehavior>,
}

/// Samples a fault uniformly over protected segments, position, resistance and onset.
pub fn sample_fault<R: Rng + ?Sized>(
    topology: &FeederTopology,
    config: &EpisodeConfig,
    segments: &[usize],
    rng: &mut R,
) -> FaultSpec {
    let segment = segments[rng.random_range(0..segments.len())];
    let position = rng.random_range(0.0..=1.0);
    let r = config.fault_resistance.sample(rng);
    let onset_step = rng.random_range(config.onset_window.0..=config.onset_window.1);
    debug_assert!(segment < topology.segments().len());
    FaultSpec {
        segment,
        position,
        impedance: num_complex::Complex64::new(r, 0.0),
        onset_step,
    }
}

pub fn sample_plan<R: Rng + ?Sized>(
    topology: &FeederTopology,
    config: &EpisodeConfig,
    rng: &mut R,
) -> Result<EpisodePlan> {
    let profile = sample_load_profile(topology, rng, config.trend_range, config.local_range)?;
    let fault = if config.fault_probability > 0.0 && rng.random_bool(config.fault_probability) {
        Some(sample_fault(topology, config, &topology.protected_segments(), rng))
    } else {
        None
    };
    Ok(EpisodePlan {
        profile,
        fault,
        breakers: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayObservation {
    /// Oldest first.
    pub voltage_window: Vec<f64>,
    pub current_window: Vec<f64>,
    pub breaker_closed: bool,
    /// 0 when inactive.
    pub counter: u8,
}

/// `[V window, I window / 10, breaker closed, counter / 9]`.
pub fn encode_state(obs: &RelayObservation, window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * window + 2);
    encode_state_into(obs, window, &mut out);
    out
}

pub fn encode_state_into(obs: &RelayObservation, window: usize, out: &mut Vec<f64>) {
    debug_assert_eq!(obs.voltage_window.len(), window);
    out.clear();
    out.extend_from_slice(&obs.voltage_window);
    out.extend(obs.current_window.iter().map(|i| i / 10.0));
    out.push(if obs.breaker_closed { 1.0 } else { 0.0 });
    out.push(f64::from(obs.counter) / f64::from(MAX_COUNTER));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripOutcome {
    /// Breaker opens at the next step.
    Honored,
    /// Breaker failed; it stays closed for the rest of the episode.
    Ignored,
    /// Breaker was already open or stuck.
    NoEffect,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepInfo {
    pub fault_active: bool,
    pub opened: Vec<RelayId>,
    pub trip_commands: Vec<(RelayId, TripOutcome)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<RelayObservation>,
    pub rewards: Vec<f64>,
    pub global_reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Hidden state of one relay, visible to privileged controllers.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayStatus {
    pub id: RelayId,
    pub counter: u8,
    pub breaker_open: bool,
    pub pending_open: bool,
    /// Breaker ignored a trip command and is stuck closed.
    pub stuck: bool,
    pub failed_at: Option<usize>,
    pub tripped_at: Option<usize>,
    pub opened_at: Option<usize>,
}

#[derive(Debug, Clone)]
struct RelaySlot {
    status: RelayStatus,
    behavior: BreakerBehavior,
    voltages: VecDeque<f64>,
    currents: VecDeque<f64>,
    neighbor: Option<usize>,
}

pub struct EpisodeEnv {
    topology: FeederTopology,
    config: EpisodeConfig,
    plan: Option<EpisodePlan>,
    rng: ChaCha8Rng,
    step: usize,
    done: bool,
    slots: Vec<RelaySlot>,
    /// Relay indices on the path from the source to the faulted segment.
    fault_path: Vec<usize>,
    cleared_at: Option<usize>,
    trace: EpisodeTrace,
}

impl EpisodeEnv {
    pub fn new(topology: FeederTopology, config: EpisodeConfig) -> Result<Self> {
        config.validate()?;
        let relays = topology.relay_ids();
        let trace = EpisodeTrace::empty(&relays, &config);
        Ok(Self {
            topology,
            config,
            plan: None,
            rng: ChaCha8Rng::seed_from_u64(0),
            step: 0,
            done: true,
            slots: Vec::new(),
            fault_path: Vec::new(),
            cleared_at: None,
            trace,
        })
    }

    pub fn topology(&self) -> &FeederTopology {
        &self.topology
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn n_relays(&self) -> usize {
        self.topology.relays().len()
    }

    /// Samples a fresh episode from the configured distribution.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<RelayObservation>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = sample_plan(&self.topology, &self.config, &mut rng)?;
        self.start(plan, rng)
    }

    /// Starts an episode from an explicit plan; `seed` drives load noise and breaker failures.
    pub fn reset_with_plan(&mut self, plan: EpisodePlan, seed: u64) -> Result<Vec<RelayObservation>> {
        if let Some(f) = &plan.fault {
            if !self.topology.protected_segments().contains(&f.segment) {
                return Err(Error::Parameter(format!(
                    "fault segment {} is not protected",
                    f.segment
                )));
            }
            if f.onset_step >= self.config.horizon {
                return Err(Error::Parameter("fault onset beyond the horizon".into()));
            }
        }
        self.start(plan, ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_e91_50de))
    }

    fn start(&mut self, plan: EpisodePlan, rng: ChaCha8Rng) -> Result<Vec<RelayObservation>> {
        self.rng = rng;
        self.step = 0;
        self.done = false;
        self.cleared_at = None;
        let m = self.config.window;
        let relays = self.topology.relays().to_vec();
        self.slots = relays
            .iter()
            .map(|r| RelaySlot {
                status: RelayStatus {
                    id: r.id,
                    counter: 0,
                    breaker_open: false,
                    pending_open: false,
                    stuck: false,
                    failed_at: None,
                    tripped_at: None,
                    opened_at: None,
                },
                behavior: plan.breakers.get(&r.id).copied().unwrap_or_default(),
                voltages: VecDeque::with_capacity(m),
                currents: VecDeque::with_capacity(m),
                neighbor: r.downstream.and_then(|n| self.topology.relay_index(n)),
            })
            .collect();
        self.fault_path = match &plan.fault {
            Some(f) => {
                let path = self.topology.path_to(f.segment);
                relays
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| path.contains(&r.segment))
                    .map(|(i, _)| i)
                    .collect()
            }
            None => Vec::new(),
        };
        self.trace = EpisodeTrace::empty(&self.topology.relay_ids(), &self.config);
        self.trace.fault = plan.fault;
        self.plan = Some(plan);

        for _ in 0..m {
            let meas = self.solve_now(None)?;
            self.push_measurements(&meas);
        }
        Ok(self.observations())
    }

    fn jittered_profile(&mut self) -> LoadProfile {
        let plan = self.plan.as_ref().expect("episode started");
        let mut profile = plan.profile.clone();
        if self.config.load_jitter > 0.0 {
            for m in profile.local_multipliers.values_mut() {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *m *= (1.0 + self.config.load_jitter * z).max(0.0);
            }
        }
        profile
    }

    fn solve_now(&mut self, fault: Option<FaultSpec>) -> Result<Vec<(f64, f64)>> {
        let profile = self.jittered_profile();
        let open: BTreeSet<RelayId> = self
            .slots
            .iter()
            .filter(|s| s.status.breaker_open)
            .map(|s| s.status.id)
            .collect();
        let sol = solve_circuit(&self.topology, &profile, fault.as_ref(), &open)?;
        Ok(self
            .slots
            .iter()
            .map(|s| sol.relay_measurements[&s.status.id])
            .collect())
    }

    fn push_measurements(&mut self, meas: &[(f64, f64)]) {
        let m = self.config.window;
        for (slot, &(v, i)) in self.slots.iter_mut().zip(meas) {
            if slot.voltages.len() == m {
                slot.voltages.pop_front();
                slot.currents.pop_front();
            }
            slot.voltages.push_back(v);
            slot.currents.push_back(i);
        }
    }

    pub fn observations(&self) -> Vec<RelayObservation> {
        self.slots
            .iter()
            .map(|s| RelayObservation {
                voltage_window: s.voltages.iter().copied().collect(),
                current_window: s.currents.iter().copied().collect(),
                breaker_closed: !s.status.breaker_open,
                counter: s.status.counter,
            })
            .collect()
    }

    /// Index of the next step to be played.
    pub fn current_step(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn plan(&self) -> Option<&EpisodePlan> {
        self.plan.as_ref()
    }

    pub fn relay_status(&self) -> Vec<RelayStatus> {
        self.slots.iter().map(|s| s.status.clone()).collect()
    }

    /// Whether the fault will be energized during the next step.
    pub fn fault_active_next(&self) -> bool {
        match self.plan.as_ref().and_then(|p| p.fault.as_ref()) {
            Some(f) => {
                self.step >= f.onset_step
                    && !self
                        .fault_path
                        .iter()
                        .any(|&j| self.slots[j].status.breaker_open || self.slots[j].status.pending_open)
            }
            None => false,
        }
    }

    pub fn trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    pub fn into_trace(self) -> EpisodeTrace {
        self.trace
    }

    fn condition(&self, i: usize, fault_active: bool) -> Condition {
        let Some(f) = self
            .plan
            .as_ref()
            .and_then(|p| p.fault.as_ref())
            .filter(|_| fault_active)
        else {
            return Condition::Normal;
        };
        let zone = self.topology.zone(self.slots[i].status.id).expect("relay has a zone");
        if zone.in_primary(f.segment, f.position) {
            Condition::MainRegion
        } else if zone.in_backup(f.segment, f.position)
            && self.slots[i]
                .neighbor
                .and_then(|n| self.slots[n].status.failed_at)
                .is_some_and(|fail| fail <= self.step)
        {
            Condition::Backup
        } else {
            Condition::Outside
        }
    }

    pub fn step(&mut self, actions: &[RelayAction]) -> Result<StepResult> {
        if self.plan.is_none() {
            return Err(Error::Usage("step before reset".into()));
        }
        if self.done {
            return Err(Error::Usage("episode is done; reset first".into()));
        }
        if actions.len() != self.slots.len() {
            return Err(Error::Usage(format!(
                "expected {} actions, got {}",
                self.slots.len(),
                actions.len()
            )));
        }
        if let Some(a) = actions
            .iter()
            .find(|a| matches!(a, RelayAction::Set(k) if !(1..=MAX_COUNTER).contains(k)))
        {
            return Err(Error::Usage(format!("invalid action {a}")));
        }
        let t = self.step;
        let mut info = StepInfo::default();

        for slot in &mut self.slots {
            if slot.status.pending_open {
                slot.status.pending_open = false;
                slot.status.breaker_open = true;
                slot.status.opened_at = Some(t);
                info.opened.push(slot.status.id);
            }
        }

        let mut tripped = vec![false; self.slots.len()];
        for (i, action) in actions.iter().enumerate() {
            let fail_prob = self.config.breaker_failure_prob;
            let slot = &mut self.slots[i];
            let expired = match *action {
                RelayAction::Set(k) => {
                    slot.status.counter = k;
                    false
                }
                RelayAction::Reset => {
                    slot.status.counter = 0;
                    false
                }
                RelayAction::Countdown if slot.status.counter > 0 => {
                    slot.status.counter -= 1;
                    slot.status.counter == 0
                }
                RelayAction::Countdown => false,
            };
            if !expired {
                continue;
            }
            let outcome = if slot.status.breaker_open || slot.status.stuck {
                TripOutcome::NoEffect
            } else {
                let fails = match slot.behavior {
                    BreakerBehavior::AlwaysFail => true,
                    BreakerBehavior::NeverFail => false,
                    BreakerBehavior::Random => fail_prob > 0.0 && self.rng.random_bool(fail_prob),
                };
                slot.status.tripped_at = Some(t);
                tripped[i] = true;
                if fails {
                    slot.status.stuck = true;
                    slot.status.failed_at = Some(t);
                    TripOutcome::Ignored
                } else {
                    slot.status.pending_open = true;
                    TripOutcome::Honored
                }
            };
            info.trip_commands.push((slot.status.id, outcome));
        }

        let fault = self.plan.as_ref().and_then(|p| p.fault);
        let fault_active = match &fault {
            Some(f) => t >= f.onset_step && !self.fault_path.iter().any(|&j| self.slots[j].status.breaker_open),
            None => false,
        };
        if let Some(f) = &fault {
            if t >= f.onset_step && !fault_active && self.cleared_at.is_none() {
                self.cleared_at = Some(t);
            }
        }
        info.fault_active = fault_active;

        let meas = self.solve_now(fault.filter(|f| t >= f.onset_step))?;
        self.push_measurements(&meas);

        let rewards: Vec<f64> = (0..self.slots.len())
            .map(|i| {
                let effect = if tripped[i] {
                    ActionEffect::Tripped
                } else {
                    ActionEffect::Held
                };
                reward(self.condition(i, fault_active), effect)
            })
            .collect();
        let global_reward = rewards.iter().sum();

        let settled = self.cleared_at.is_some_and(|c| t >= c + self.config.settle_steps);
        self.done = settled || t + 1 >= self.config.horizon;

        self.trace.steps.push(TraceStep {
            step: t,
            measurements: meas,
            breaker_closed: self.slots.iter().map(|s| !s.status.breaker_open).collect(),
            counters: self.slots.iter().map(|s| s.status.counter).collect(),
            actions: actions.to_vec(),
            rewards: rewards.clone(),
            fault_active,
        });
        if self.done {
            self.trace.tripped_at = self.slots.iter().map(|s| s.status.tripped_at).collect();
            self.trace.failed_at = self.slots.iter().map(|s| s.status.failed_at).collect();
            self.trace.opened_at = self
                .slots
                .iter()
                .map(|s| s.status.opened_at.or(s.status.pending_open.then_some(t + 1)))
                .collect();
            self.trace.cleared_at = self.cleared_at;
            self.trace.complete = true;
        }
        self.step += 1;

        Ok(StepResult {
            observations: self.observations(),
            rewards,
            global_reward,
            done: self.done,
            info,
        })
    }
}

/// Chooses one action per relay each step. Implementations may look at the
/// environment's hidden state (the oracle does); learned and threshold
/// controllers only read the observations.
pub trait Controller {
    fn begin_episode(&mut self, _env: &EpisodeEnv) {}

    fn act(&mut self, env: &EpisodeEnv, observations: &[RelayObservation]) -> Vec<RelayAction>;
}

/// Every relay emits the null action.
pub struct NullController;

impl Controller for NullController {
    fn act(&mut self, env: &EpisodeEnv, _observations: &[RelayObservation]) -> Vec<RelayAction> {
        vec![RelayAction::NULL; env.n_relays()]
    }
}

/// Plays one episode to completion and returns its trace.
pub fn run_episode<C: Controller + ?Sized>(env: &mut EpisodeEnv, controller: &mut C) -> Result<EpisodeTrace> {
    controller.begin_episode(env);
    let mut obs = env.observations();
    loop {
        let actions = controller.act(env, &obs);
        let res = env.step(&actions)?;
        obs = res.observations;
        if res.done {
            return Ok(env.trace().clone());
        }
    }
}

#[cfg(test)]
mod tests;
