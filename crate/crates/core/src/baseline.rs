//! Fixed-threshold overcurrent relays: the pickup current is the weighted
//! crossing of kernel density estimates of pre-fault and post-fault current,
//! and backup relays wait for graded delays.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::{
    run_episode, Controller, EpisodeConfig, EpisodeEnv, NullController, RelayAction, RelayObservation, MAX_COUNTER,
};
use crate::error::{Error, Result};
use crate::feeder::{FeederTopology, RelayId};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassSamples {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurrentSampleSet {
    pub relays: BTreeMap<RelayId, ClassSamples>,
}

/// Runs episodes in which no relay acts and records each relay's current:
/// before onset (or throughout a fault-free episode) as the pre-fault class,
/// from onset on as the post-fault class when the fault lies in the relay's
/// primary or backup region.
pub fn collect_samples(
    topology: &FeederTopology,
    config: &EpisodeConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<CurrentSampleSet> {
    if n_episodes < 2 {
        return Err(Error::Parameter("need at least 2 episodes".into()));
    }
    let mut env = EpisodeEnv::new(topology.clone(), config.clone())?;
    let mut set = CurrentSampleSet {
        relays: topology
            .relay_ids()
            .into_iter()
            .map(|id| (id, ClassSamples::default()))
            .collect(),
    };
    for k in 0..n_episodes {
        env.reset(seed.wrapping_add(k as u64))?;
        let trace = run_episode(&mut env, &mut NullController)?;
        for (i, relay) in topology.relays().iter().enumerate() {
            let zone = topology.zone(relay.id).expect("relay has a zone");
            let assigned = trace
                .fault
                .is_some_and(|f| zone.in_primary(f.segment, f.position) || zone.in_backup(f.segment, f.position));
            let onset = trace.fault.map_or(usize::MAX, |f| f.onset_step);
            let samples = set.relays.get_mut(&relay.id).expect("relay entry");
            for s in &trace.steps {
                let current = s.measurements[i].1;
                if s.step < onset {
                    samples.pre.push(current);
                } else if assigned {
                    samples.post.push(current);
                }
            }
        }
    }
    Ok(set)
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    samples: Vec<f64>,
    bandwidth: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Kde {
    /// Silverman's rule: `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`.
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Parameter("density estimate of an empty sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let sd = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let mut bandwidth = 0.9 * spread * n.powf(-0.2);
        if !(bandwidth > 0.0) {
            bandwidth = 1e-6 * mean.abs().max(1.0);
        }
        Ok(Self {
            samples: sorted,
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn median(&self) -> f64 {
        quantile(&self.samples, 0.5)
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        // kernels beyond 8 bandwidths contribute nothing at f64 precision
        let lo = self.samples.partition_point(|s| *s < x - 8.0 * h);
        let hi = self.samples.partition_point(|s| *s <= x + 8.0 * h);
        let sum: f64 = self.samples[lo..hi]
            .iter()
            .map(|s| {
                let u = (x - s) / h;
                (-0.5 * u * u).exp()
            })
            .sum();
        sum / (self.samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// Solves `weight * f_post(x) = f_pre(x)` between the class medians by bisection.
pub fn density_crossing(pre: &Kde, post: &Kde, weight_faulty: f64, relay: RelayId) -> Result<f64> {
    let (mut lo, mut hi) = (pre.median(), post.median());
    let g = |x: f64| weight_faulty * post.density(x) - pre.density(x);
    let (glo, ghi) = (g(lo), g(hi));
    if !(lo < hi && glo < 0.0 && ghi > 0.0) {
        return Err(Error::Fit { relay: relay.0, lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grading {
    /// Delay of relays that back up nobody, in steps.
    pub base_delay: usize,
    /// Extra delay per backup level.
    pub margin: usize,
}

impl Default for Grading {
    fn default() -> Self {
        Self {
            base_delay: 3,
            margin: 6,
        }
    }
}

impl Grading {
    /// `base + level * margin`, where a relay's level is the length of its backup chain.
    pub fn delays(&self, topology: &FeederTopology) -> BTreeMap<RelayId, usize> {
        topology
            .relays()
            .iter()
            .map(|r| {
                let mut level = 0;
                let mut next = r.downstream;
                while let Some(n) = next {
                    level += 1;
                    next = topology.relay(n).and_then(|x| x.downstream);
                }
                (r.id, self.base_delay + level * self.margin)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayThreshold {
    pub id: RelayId,
    /// Pickup current (pu).
    pub pickup: f64,
    /// Steps the current must stay above pickup before the trip command.
    pub delay_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickupThreshold {
    pub weight_faulty: f64,
    pub grading: Grading,
    #[serde(rename = "relay")]
    pub relays: Vec<RelayThreshold>,
}

pub fn fit_threshold(
    topology: &FeederTopology,
    samples: &CurrentSampleSet,
    weight_faulty: f64,
    grading: Grading,
) -> Result<PickupThreshold> {
    if !(weight_faulty >= 1.0) {
        return Err(Error::Parameter("faulty-class weight must be at least 1".into()));
    }
    let delays = grading.delays(topology);
    let relays = topology
        .relay_ids()
        .into_iter()
        .map(|id| {
            let s = samples
                .relays
                .get(&id)
                .ok_or_else(|| Error::Parameter(format!("no samples for relay {id}")))?;
            if s.pre.is_empty() || s.post.is_empty() {
                return Err(Error::Parameter(format!(
                    "relay {id}: {} pre-fault and {} post-fault samples; both classes are needed",
                    s.pre.len(),
                    s.post.len()
                )));
            }
            let pickup = density_crossing(&Kde::new(&s.pre)?, &Kde::new(&s.post)?, weight_faulty, id)?;
            Ok(RelayThreshold {
                id,
                pickup,
                delay_steps: delays[&id],
            })
        })
        .collect::<Result<_>>()?;
    Ok(PickupThreshold {
        weight_faulty,
        grading,
        relays,
    })
}

impl PickupThreshold {
    pub fn relay(&self, id: RelayId) -> Option<&RelayThreshold> {
        self.relays.iter().find(|r| r.id == id)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("thresholds serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let t: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(r) = t.relays.iter().find(|r| !(r.pickup > 0.0)) {
            return Err(Error::Config(format!("relay {}: pickup must be positive", r.id)));
        }
        Ok(t)
    }
}

/// `relay,current,pre_density,post_density,weighted_post_density` on a grid per relay.
pub fn density_csv(samples: &CurrentSampleSet, weight_faulty: f64, points: usize) -> Result<String> {
    let mut out = String::from("relay,current,pre_density,post_density,weighted_post_density\n");
    for (id, s) in &samples.relays {
        if s.pre.is_empty() || s.post.is_empty() {
            continue;
        }
        let (pre, post) = (Kde::new(&s.pre)?, Kde::new(&s.post)?);
        let all = s.pre.iter().chain(&s.post);
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        for k in 0..points {
            let x = lo + (hi - lo) * k as f64 / (points.max(2) - 1) as f64;
            let fp = post.density(x);
            let _ = writeln!(out, "{id},{x},{},{fp},{}", pre.density(x), weight_faulty * fp);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
struct RelayTimer {
    /// Consecutive observations above pickup.
    run: usize,
}

/// Trip once the current has stayed above pickup for the relay's delay;
/// reset if it drops back before the command.
pub struct ThresholdController {
    thresholds: Vec<RelayThreshold>,
    timers: Vec<RelayTimer>,
}

impl ThresholdController {
    pub fn new(topology: &FeederTopology, thresholds: &PickupThreshold) -> Result<Self> {
        let t = topology
            .relay_ids()
            .into_iter()
            .map(|id| {
                thresholds
                    .relay(id)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("no threshold for relay {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            timers: vec![RelayTimer::default(); t.len()],
            thresholds: t,
        })
    }

    /// Decision for one relay given its latest current. The command lands
    /// `delay` steps after the first step observed above pickup.
    fn decide(threshold: &RelayThreshold, timer: &mut RelayTimer, obs: &RelayObservation) -> RelayAction {
        let current = *obs.current_window.last().expect("non-empty window");
        if current <= threshold.pickup || !obs.breaker_closed {
            timer.run = 0;
            return if obs.counter > 0 {
                RelayAction::Reset
            } else {
                RelayAction::Countdown
            };
        }
        timer.run += 1;
        if obs.counter > 0 {
            return RelayAction::Countdown;
        }
        let remaining = threshold.delay_steps.saturating_sub(timer.run).max(1);
        if remaining <= MAX_COUNTER as usize && timer.run <= threshold.delay_steps {
            RelayAction::Set(remaining as u8)
        } else {
            RelayAction::Countdown
        }
    }
}

impl Controller for ThresholdController {
    fn begin_episode(&mut self, _env: &EpisodeEnv) {
        self.timers.iter_mut().for_each(|t| *t = RelayTimer::default());
    }

    fn act(&mut self, _env: &EpisodeEnv, observations: &[RelayObservation]) -> Vec<RelayAction> {
        self.thresholds
            .iter()
            .zip(&mut self.timers)
            .zip(observations)
            .map(|((th, timer), obs)| Self::decide(th, timer, obs))
            .collect()
    }
}
