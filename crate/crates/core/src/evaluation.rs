//! Scenario failure rates, load-stress sweeps and response times.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    classify_trace, run_episode, sample_fault, BreakerBehavior, Controller, EpisodeConfig, EpisodeEnv, EpisodePlan,
    RelayAction, RelayObservation, Verdict,
};
use crate::error::{Error, Result};
use crate::feeder::{sample_load_profile, FeederTopology, Interval, RelayId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Fault in the test relay's primary region, all breakers functional.
    LocalFault,
    /// Fault in the downstream neighbor's region with that breaker forced to fail.
    Backup,
    /// Fault outside the test relay's primary and backup regions.
    RemoteFault,
    NoFault,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [Self::LocalFault, Self::Backup, Self::RemoteFault, Self::NoFault];

    pub fn label(self) -> &'static str {
        match self {
            Self::LocalFault => "Local Fault",
            Self::Backup => "Backup",
            Self::RemoteFault => "Remote Fault",
            Self::NoFault => "No Fault",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Self::LocalFault => 1,
            Self::Backup => 2,
            Self::RemoteFault => 3,
            Self::NoFault => 4,
        }
    }

    /// Relays the scenario can be built around.
    pub fn test_relays(self, topology: &FeederTopology) -> Vec<RelayId> {
        let relays = topology.relays().iter();
        match self {
            Self::Backup => relays.filter(|r| r.downstream.is_some()).map(|r| r.id).collect(),
            Self::RemoteFault => relays
                .filter(|r| !remote_segments(topology, r.id).is_empty())
                .map(|r| r.id)
                .collect(),
            _ => relays.map(|r| r.id).collect(),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn remote_segments(topology: &FeederTopology, relay: RelayId) -> Vec<usize> {
    let zone = topology.zone(relay).expect("known relay");
    topology
        .protected_segments()
        .into_iter()
        .filter(|&s| !zone.primary.iter().chain(&zone.backup).any(|z| z.segment == s))
        .collect()
}

/// Builds one scenario episode around `test_relay`. All breakers are
/// functional except the forced failure of a Backup scenario.
pub fn scenario_plan<R: Rng + ?Sized>(
    topology: &FeederTopology,
    config: &EpisodeConfig,
    kind: ScenarioKind,
    test_relay: RelayId,
    rng: &mut R,
) -> Result<EpisodePlan> {
    let relay = *topology
        .relay(test_relay)
        .ok_or_else(|| Error::Usage(format!("unknown relay {test_relay}")))?;
    let profile = sample_load_profile(topology, rng, config.trend_range, config.local_range)?;
    let mut breakers: BTreeMap<RelayId, BreakerBehavior> = topology
        .relay_ids()
        .into_iter()
        .map(|id| (id, BreakerBehavior::NeverFail))
        .collect();
    let fault = match kind {
        ScenarioKind::LocalFault => Some(sample_fault(topology, config, &[relay.segment], rng)),
        ScenarioKind::Backup => {
            let n = relay
                .downstream
                .ok_or_else(|| Error::Usage(format!("relay {test_relay} backs up nobody")))?;
            breakers.insert(n, BreakerBehavior::AlwaysFail);
            let seg = topology.relay(n).expect("neighbor exists").segment;
            Some(sample_fault(topology, config, &[seg], rng))
        }
        ScenarioKind::RemoteFault => {
            let segs = remote_segments(topology, test_relay);
            if segs.is_empty() {
                return Err(Error::Usage(format!("relay {test_relay} has no remote segment")));
            }
            Some(sample_fault(topology, config, &segs, rng))
        }
        ScenarioKind::NoFault => None,
    };
    Ok(EpisodePlan {
        profile,
        fault,
        breakers,
    })
}

fn episode_seed(seed: u64, tag: u64, k: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(k as u64);
    rng.random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub kind: ScenarioKind,
    pub episodes: usize,
    /// Episodes with at least one false positive.
    pub false_positives: usize,
    /// Episodes with at least one false negative.
    pub false_negatives: usize,
    /// Episodes with any misoperation.
    pub failures: usize,
    /// Backup scenarios only: episodes where the backup relay tripped before
    /// the primary's failure.
    pub backup_violations: usize,
}

impl ScenarioReport {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.episodes.max(1) as f64
    }

    pub fn false_negative_rate(&self) -> f64 {
        self.false_negatives as f64 / self.episodes.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureReport {
    pub strategy: String,
    pub scenarios: Vec<ScenarioReport>,
}

/// Runs `n_episodes` of one scenario, cycling over its test relays.
pub fn run_scenario(
    topology: &FeederTopology,
    config: &EpisodeConfig,
    controller: &mut dyn Controller,
    kind: ScenarioKind,
    n_episodes: usize,
    seed: u64,
) -> Result<ScenarioReport> {
    let relays = kind.test_relays(topology);
    if relays.is_empty() {
        return Err(Error::Usage(format!("no relay qualifies for {kind}")));
    }
    let mut env = EpisodeEnv::new(topology.clone(), config.clone())?;
    let mut report = ScenarioReport {
        kind,
        episodes: n_episodes,
        false_positives: 0,
        false_negatives: 0,
        failures: 0,
        backup_violations: 0,
    };
    for k in 0..n_episodes {
        let test = relays[k % relays.len()];
        let s = episode_seed(seed, kind.tag(), k);
        let plan = scenario_plan(topology, config, kind, test, &mut ChaCha8Rng::seed_from_u64(s))?;
        env.reset_with_plan(plan, s)?;
        let trace = run_episode(&mut env, controller)?;
        let verdicts = classify_trace(topology, &trace)?;
        let fp = verdicts.contains(&Verdict::FalsePositive);
        let fneg = verdicts.contains(&Verdict::FalseNegative);
        report.false_positives += usize::from(fp);
        report.false_negatives += usize::from(fneg);
        report.failures += usize::from(fp || fneg);
        if kind == ScenarioKind::Backup {
            let i = topology.relay_index(test).expect("known relay");
            let n = topology
                .relay_index(topology.relays()[i].downstream.expect("backup relay"))
                .expect("known relay");
            let early = match (trace.tripped_at[i], trace.failed_at[n]) {
                (Some(t), Some(f)) => t < f,
                (Some(_), None) => true,
                _ => false,
            };
            report.backup_violations += usize::from(early);
        }
    }
    Ok(report)
}

pub fn run_all_scenarios(
    topology: &FeederTopology,
    config: &EpisodeConfig,
    controller: &mut dyn Controller,
    strategy: &str,
    n_episodes: usize,
    seed: u64,
) -> Result<FailureReport> {
    let scenarios = ScenarioKind::ALL
        .iter()
        .map(|&k| run_scenario(topology, config, controller, k, n_episodes, seed))
        .collect::<Result<_>>()?;
    Ok(FailureReport {
        strategy: strategy.to_string(),
        scenarios,
    })
}

impl FailureReport {
    pub fn scenario(&self, kind: ScenarioKind) -> Option<&ScenarioReport> {
        self.scenarios.iter().find(|s| s.kind == kind)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("strategy,scenario,episodes,false_positives,false_negatives,failures,failure_rate\n");
        for s in &self.scenarios {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.strategy,
                s.kind.label(),
                s.episodes,
                s.false_positives,
                s.false_negatives,
                s.failures,
                s.failure_rate()
            );
        }
        out
    }
}

/// Side-by-side table of two reports over the same scenarios.
pub fn compare_report(rl: &FailureReport, baseline: &FailureReport) -> Result<String> {
    if rl.scenarios.is_empty() {
        return Err(Error::Usage("no scenarios to compare".into()));
    }
    let same = rl.scenarios.len() == baseline.scenarios.len()
        && rl
            .scenarios
            .iter()
            .zip(&baseline.scenarios)
            .all(|(a, b)| a.kind == b.kind && a.episodes == b.episodes);
    if !same {
        return Err(Error::Usage(
            "reports cover different scenarios or episode counts".into(),
        ));
    }
    let mut out = format!(
        "{:<14} {:>10} {:>12} {:>12} {:>10}\n",
        "Scenario", "Episodes", baseline.strategy, rl.strategy, "Delta"
    );
    for (r, b) in rl.scenarios.iter().zip(&baseline.scenarios) {
        let _ = writeln!(
            out,
            "{:<14} {:>10} {:>11.2}% {:>11.2}% {:>9.2}%",
            r.kind.label(),
            r.episodes,
            100.0 * b.failure_rate(),
            100.0 * r.failure_rate(),
            100.0 * (r.failure_rate() - b.failure_rate())
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StressAxis {
    /// Trend factor drawn from `[peak, peak * (1 + x)]`, per-load spread removed.
    Peak,
    /// Whole trend interval scaled by `1 + x`.
    Mean,
}

impl StressAxis {
    /// Episode configuration at stress `percent`.
    pub fn stressed(self, config: &EpisodeConfig, percent: f64) -> EpisodeConfig {
        let x = percent / 100.0;
        let mut c = config.clone();
        match self {
            Self::Peak => {
                let peak = config.trend_range.hi;
                c.trend_range = Interval::new(peak, peak * (1.0 + x));
                c.local_range = Interval::new(1.0, 1.0);
            }
            Self::Mean => c.trend_range = config.trend_range.scaled(1.0 + x),
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessSweep {
    pub axis: StressAxis,
    pub focus: RelayId,
    /// `(percent, failure rate)` per strategy, levels ascending.
    pub rates: BTreeMap<String, Vec<(f64, f64)>>,
}

impl RobustnessSweep {
    pub fn to_csv(&self) -> String {
        let names: Vec<&String> = self.rates.keys().collect();
        let mut out = String::from("stress_percent");
        for n in &names {
            let _ = write!(out, ",rate_{n}");
        }
        out.push('\n');
        let levels = self.rates.values().next().map_or(0, Vec::len);
        for l in 0..levels {
            let _ = write!(out, "{}", self.rates[names[0]][l].0);
            for n in &names {
                let _ = write!(out, ",{}", self.rates[*n][l].1);
            }
            out.push('\n');
        }
        out
    }
}

pub fn stress_levels(max_percent: f64, step_percent: f64) -> Result<Vec<f64>> {
    if !(step_percent > 0.0 && max_percent >= 0.0) {
        return Err(Error::Parameter(
            "stress step must be positive and max non-negative".into(),
        ));
    }
    let n = (max_percent / step_percent + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| i as f64 * step_percent).collect())
}

/// Failure rate of `focus` under load stress, episodes drawn from the
/// stressed configuration (fault sampling unchanged). Policies are not retrained.
pub fn sweep_rates(
    topology: &FeederTopology,
    config: &EpisodeConfig,
    controller: &mut dyn Controller,
    axis: StressAxis,
    levels: &[f64],
    focus: RelayId,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let fi = topology
        .relay_index(focus)
        .ok_or_else(|| Error::Usage(format!("unknown relay {focus}")))?;
    levels
        .iter()
        .map(|&x| {
            let cfg = axis.stressed(config, x);
            let mut env = EpisodeEnv::new(topology.clone(), cfg)?;
            let mut failures = 0;
            for k in 0..n_episodes {
                env.reset(episode_seed(seed, 5, k))?;
                let trace = run_episode(&mut env, controller)?;
                failures += usize::from(classify_trace(topology, &trace)?[fi] != Verdict::Correct);
            }
            Ok((x, failures as f64 / n_episodes.max(1) as f64))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DelayStats {
    pub count: usize,
    /// Episodes where the relay never opened its breaker.
    pub missing: usize,
    pub mean_steps: f64,
    pub max_steps: f64,
    pub mean_secs: f64,
    pub max_secs: f64,
}

impl DelayStats {
    fn from_delays(delays: &[usize], missing: usize, timestep: f64) -> Self {
        let count = delays.len();
        let mean = if count == 0 {
            f64::NAN
        } else {
            delays.iter().sum::<usize>() as f64 / count as f64
        };
        let max = delays.iter().copied().max().map_or(f64::NAN, |m| m as f64);
        Self {
            count,
            missing,
            mean_steps: mean,
            max_steps: max,
            mean_secs: mean * timestep,
            max_secs: max * timestep,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseTimeStats {
    pub primary: DelayStats,
    pub backup: DelayStats,
}

/// Steps from fault onset to breaker opening: the test relay in LocalFault
/// episodes (primary role) and in Backup episodes (backup role).
pub fn response_time(
    topology: &FeederTopology,
    config: &EpisodeConfig,
    controller: &mut dyn Controller,
    n_episodes: usize,
    seed: u64,
) -> Result<ResponseTimeStats> {
    let mut env = EpisodeEnv::new(topology.clone(), config.clone())?;
    let mut measure = |kind: ScenarioKind| -> Result<DelayStats> {
        let relays = kind.test_relays(topology);
        let mut delays = Vec::new();
        let mut missing = 0;
        for k in 0..n_episodes {
            let test = relays[k % relays.len()];
            let s = episode_seed(seed, kind.tag() + 16, k);
            let plan = scenario_plan(topology, config, kind, test, &mut ChaCha8Rng::seed_from_u64(s))?;
            let onset = plan.fault.expect("fault scenario").onset_step;
            env.reset_with_plan(plan, s)?;
            let trace = run_episode(&mut env, controller)?;
            let i = topology.relay_index(test).expect("known relay");
            match trace.opened_at[i] {
                Some(t) if t >= onset => delays.push(t - onset),
                _ => missing += 1,
            }
        }
        Ok(DelayStats::from_delays(&delays, missing, config.timestep))
    };
    Ok(ResponseTimeStats {
        primary: measure(ScenarioKind::LocalFault)?,
        backup: measure(ScenarioKind::Backup)?,
    })
}

/// Every relay trips as soon as it can.
pub struct AlwaysTripController;

impl Controller for AlwaysTripController {
    fn act(&mut self, _env: &EpisodeEnv, observations: &[RelayObservation]) -> Vec<RelayAction> {
        observations
            .iter()
            .map(|o| {
                if o.counter == 0 {
                    RelayAction::Set(1)
                } else {
                    RelayAction::Countdown
                }
            })
            .collect()
    }
}
