use std::fmt::Write as _;

use super::{EpisodeConfig, RelayAction};
use crate::feeder::{FaultSpec, RelayId};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    /// (|V|, |I|) per relay, in relay order.
    pub measurements: Vec<(f64, f64)>,
    /// Breaker state during this step's solve.
    pub breaker_closed: Vec<bool>,
    /// Counter after the action.
    pub counters: Vec<u8>,
    pub actions: Vec<RelayAction>,
    pub rewards: Vec<f64>,
    pub fault_active: bool,
}

/// Full record of one episode. Per-relay vectors follow topology relay order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub relays: Vec<RelayId>,
    pub timestep: f64,
    pub horizon: usize,
    pub fault: Option<FaultSpec>,
    pub steps: Vec<TraceStep>,
    /// Step of each relay's first effective trip command (honored or ignored).
    pub tripped_at: Vec<Option<usize>>,
    /// Step at which the breaker ignored its command.
    pub failed_at: Vec<Option<usize>>,
    pub opened_at: Vec<Option<usize>>,
    /// First step after onset at which the fault was no longer energized.
    pub cleared_at: Option<usize>,
    pub complete: bool,
}

impl EpisodeTrace {
    pub(crate) fn empty(relays: &[RelayId], config: &EpisodeConfig) -> Self {
        let n = relays.len();
        Self {
            relays: relays.to_vec(),
            timestep: config.timestep,
            horizon: config.horizon,
            fault: None,
            steps: Vec::new(),
            tripped_at: vec![None; n],
            failed_at: vec![None; n],
            opened_at: vec![None; n],
            cleared_at: None,
            complete: false,
        }
    }

    pub fn relay_position(&self, id: RelayId) -> Option<usize> {
        self.relays.iter().position(|&r| r == id)
    }

    /// Whether the fault existed and was energized at `step`.
    pub fn fault_active_at(&self, step: usize) -> bool {
        match &self.fault {
            Some(f) => step >= f.onset_step && self.cleared_at.is_none_or(|c| step < c),
            None => false,
        }
    }

    /// A fault that was isolated before its onset never happened electrically.
    pub fn fault_occurred(&self) -> bool {
        self.fault
            .as_ref()
            .is_some_and(|f| self.cleared_at != Some(f.onset_step))
    }

    pub fn total_reward(&self, relay: usize) -> f64 {
        self.steps.iter().map(|s| s.rewards[relay]).sum()
    }

    pub fn global_reward(&self) -> f64 {
        self.steps.iter().flat_map(|s| s.rewards.iter()).sum()
    }

    /// One row per step and relay.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,relay,voltage,current,breaker_closed,counter,action,reward,fault_active\n");
        for s in &self.steps {
            for (i, id) in self.relays.iter().enumerate() {
                let (v, c) = s.measurements[i];
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    s.step,
                    id,
                    v,
                    c,
                    u8::from(s.breaker_closed[i]),
                    s.counters[i],
                    s.actions[i],
                    s.rewards[i],
                    u8::from(s.fault_active)
                );
            }
        }
        out
    }
}
