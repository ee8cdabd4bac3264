use std::collections::BTreeSet;

use super::{Controller, EpisodeEnv, EpisodeTrace, RelayAction, RelayObservation};
use crate::error::{Error, Result};
use crate::feeder::{FeederTopology, RelayId};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdealActionInput {
    /// `(segment, position)` of the fault, if any.
    pub fault: Option<(usize, f64)>,
    /// Relays whose breaker ignored its trip command.
    pub failed_breakers: BTreeSet<RelayId>,
}

/// Ideal trip decision per relay (topology relay order). A relay should trip
/// for a fault in its primary region, or in its backup region when the
/// downstream relay's trip was ineffective.
pub fn ideal_actions(topology: &FeederTopology, input: &IdealActionInput) -> Result<Vec<bool>> {
    let n = topology.relays().len();
    let Some((segment, position)) = input.fault else {
        return Ok(vec![false; n]);
    };
    if segment >= topology.segments().len() || !(0.0..=1.0).contains(&position) {
        return Err(Error::Parameter(format!(
            "invalid fault location ({segment}, {position})"
        )));
    }
    for id in &input.failed_breakers {
        if topology.relay_index(*id).is_none() {
            return Err(Error::Parameter(format!("unknown relay {id}")));
        }
    }
    // Deeper relays first so each neighbor's effective action is known.
    let depth = |i: usize| topology.path_to(topology.relays()[i].segment).len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(depth(i)));

    let mut ideal = vec![false; n];
    let mut effective = vec![false; n];
    for i in order {
        let relay = topology.relays()[i];
        let zone = topology.zone(relay.id).expect("relay has a zone");
        let neighbor_effective = relay
            .downstream
            .and_then(|d| topology.relay_index(d))
            .is_some_and(|j| effective[j]);
        ideal[i] = zone.in_primary(segment, position) || (zone.in_backup(segment, position) && !neighbor_effective);
        effective[i] = ideal[i] && !input.failed_breakers.contains(&relay.id);
    }
    Ok(ideal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Correct,
    FalsePositive,
    FalseNegative,
}

/// Per-relay verdicts for a completed episode. A relay's trip event is its
/// first effective trip command, whether or not the breaker then opened.
pub fn classify_trace(topology: &FeederTopology, trace: &EpisodeTrace) -> Result<Vec<Verdict>> {
    if !trace.complete {
        return Err(Error::Usage("trace is incomplete".into()));
    }
    if trace.relays != topology.relay_ids() {
        return Err(Error::Usage("trace relays do not match the topology".into()));
    }
    let occurred = trace.fault_occurred();
    let fault = trace.fault.filter(|_| occurred);
    let verdicts = topology
        .relays()
        .iter()
        .enumerate()
        .map(|(i, relay)| {
            let zone = topology.zone(relay.id).expect("relay has a zone");
            let trip = trace.tripped_at[i];
            let neighbor_failed = relay
                .downstream
                .and_then(|d| topology.relay_index(d))
                .and_then(|j| trace.failed_at[j]);
            let (primary, backup) = match &fault {
                Some(f) => (
                    zone.in_primary(f.segment, f.position),
                    zone.in_backup(f.segment, f.position),
                ),
                None => (false, false),
            };
            if let Some(c) = trip {
                let premature_backup = !primary && backup && neighbor_failed.is_none_or(|fail| c < fail);
                if !trace.fault_active_at(c) || !(primary || backup) || premature_backup {
                    return Verdict::FalsePositive;
                }
                return Verdict::Correct;
            }
            if primary || (backup && neighbor_failed.is_some()) {
                Verdict::FalseNegative
            } else {
                Verdict::Correct
            }
        })
        .collect();
    Ok(verdicts)
}

pub fn episode_failed(verdicts: &[Verdict]) -> bool {
    verdicts.iter().any(|v| *v != Verdict::Correct)
}

/// Trips exactly the relays the ideal-action rule asks for, as fast as the
/// counter allows. Reads hidden environment state.
pub struct OracleController;

impl Controller for OracleController {
    fn act(&mut self, env: &EpisodeEnv, _observations: &[RelayObservation]) -> Vec<RelayAction> {
        let status = env.relay_status();
        let topology = env.topology();
        let fault = env.plan().and_then(|p| p.fault);
        let active = env.fault_active_next();
        let failed: BTreeSet<RelayId> = status.iter().filter(|s| s.stuck).map(|s| s.id).collect();
        let ideal = match (active, fault) {
            (true, Some(f)) => ideal_actions(
                topology,
                &IdealActionInput {
                    fault: Some((f.segment, f.position)),
                    failed_breakers: failed,
                },
            )
            .expect("plan fault is valid"),
            _ => vec![false; status.len()],
        };
        status
            .iter()
            .zip(ideal)
            .map(|(s, trip)| {
                let can_trip = !s.breaker_open && !s.pending_open && !s.stuck;
                if s.counter == 0 && trip && can_trip {
                    RelayAction::Set(1)
                } else {
                    RelayAction::Countdown
                }
            })
            .collect()
    }
}
