use super::*;
use crate::feeder::build_feeder_section;
use num_complex::Complex64;

fn env() -> EpisodeEnv {
    EpisodeEnv::new(build_feeder_section(), EpisodeConfig::default()).unwrap()
}

fn idx(env: &EpisodeEnv, id: u32) -> usize {
    env.topology().relay_index(RelayId(id)).unwrap()
}

fn plan_with_fault(env: &EpisodeEnv, relay: u32, onset: usize) -> EpisodePlan {
    let segment = env.topology().relay(RelayId(relay)).unwrap().segment;
    EpisodePlan {
        profile: LoadProfile::uniform(env.topology(), 1.0),
        fault: Some(FaultSpec {
            segment,
            position: 0.5,
            impedance: Complex64::new(0.2, 0.0),
            onset_step: onset,
        }),
        breakers: BTreeMap::new(),
    }
}

fn hold(env: &EpisodeEnv) -> Vec<RelayAction> {
    vec![RelayAction::Countdown; env.n_relays()]
}

#[test]
fn action_index_round_trip() {
    let all: Vec<_> = (0..N_ACTIONS).map(|i| RelayAction::from_index(i).unwrap()).collect();
    assert_eq!(all[0], RelayAction::NULL);
    for (i, a) in all.iter().enumerate() {
        assert_eq!(a.index(), i);
    }
    let distinct: BTreeSet<String> = all.iter().map(|a| a.to_string()).collect();
    assert_eq!(distinct.len(), 11);
    assert!(RelayAction::from_index(11).is_err());
}

#[test]
fn encode_examples() {
    let obs = RelayObservation {
        voltage_window: vec![1.0, 1.0],
        current_window: vec![0.5, 0.5],
        breaker_closed: true,
        counter: 0,
    };
    assert_eq!(encode_state(&obs, 2), vec![1.0, 1.0, 0.05, 0.05, 1.0, 0.0]);
    let full = RelayObservation { counter: 9, ..obs };
    assert_eq!(*encode_state(&full, 2).last().unwrap(), 1.0);
}

#[test]
fn counter_hand_trace() {
    let mut e = env();
    let mut plan = plan_with_fault(&e, 5, 100);
    plan.fault = None;
    plan.breakers.insert(RelayId(3), BreakerBehavior::NeverFail);
    e.reset_with_plan(plan, 1).unwrap();
    let r3 = idx(&e, 3);
    for _ in 0..10 {
        e.step(&hold(&e)).unwrap();
    }
    let t = e.current_step();
    let mut a = hold(&e);
    a[r3] = RelayAction::Set(2);
    let res = e.step(&a).unwrap();
    assert_eq!(res.observations[r3].counter, 2);
    let res = e.step(&hold(&e)).unwrap();
    assert_eq!(res.observations[r3].counter, 1);
    let res = e.step(&hold(&e)).unwrap();
    assert_eq!(res.info.trip_commands, vec![(RelayId(3), TripOutcome::Honored)]);
    assert!(res.observations[r3].breaker_closed);
    assert_eq!(res.rewards[r3], -150.0);
    let res = e.step(&hold(&e)).unwrap();
    assert_eq!(res.info.opened, vec![RelayId(3)]);
    assert!(!res.observations[r3].breaker_closed);
    assert_eq!(e.trace().steps[t + 3].breaker_closed[r3], false);
    assert_eq!(*res.observations[r3].voltage_window.last().unwrap(), 0.0);
}

#[test]
fn reset_on_inactive_counter_changes_nothing_but_windows() {
    let mut e = env();
    e.reset(4).unwrap();
    let before = e.observations();
    let mut a = hold(&e);
    a[0] = RelayAction::Reset;
    let res = e.step(&a).unwrap();
    assert_eq!(res.observations[0].counter, 0);
    assert!(res.observations[0].breaker_closed);
    assert_eq!(res.observations[0].voltage_window[..9], before[0].voltage_window[1..]);
}

#[test]
fn reset_before_expiry_prevents_trip() {
    let mut e = env();
    let plan = plan_with_fault(&e, 5, 60);
    e.reset_with_plan(plan, 2).unwrap();
    let mut a = hold(&e);
    a[idx(&e, 5)] = RelayAction::Set(3);
    e.step(&a).unwrap();
    e.step(&hold(&e)).unwrap();
    let mut a = hold(&e);
    a[idx(&e, 5)] = RelayAction::Reset;
    e.step(&a).unwrap();
    for _ in 0..20 {
        let res = e.step(&hold(&e)).unwrap();
        assert!(res.info.trip_commands.is_empty());
    }
}

#[test]
fn forced_failure_leaves_clearing_to_backup() {
    let mut e = env();
    let mut plan = plan_with_fault(&e, 5, 60);
    plan.breakers.insert(RelayId(5), BreakerBehavior::AlwaysFail);
    plan.breakers.insert(RelayId(4), BreakerBehavior::NeverFail);
    e.reset_with_plan(plan, 3).unwrap();
    let trace = run_episode(&mut e, &mut OracleController).unwrap();
    let (r4, r5) = (idx(&e, 4), idx(&e, 5));
    assert_eq!(trace.tripped_at[r5], Some(61));
    assert_eq!(trace.failed_at[r5], Some(61));
    assert_eq!(trace.opened_at[r5], None);
    assert_eq!(trace.tripped_at[r4], Some(63));
    assert_eq!(trace.opened_at[r4], Some(64));
    assert_eq!(trace.cleared_at, Some(64));
    // backup region: outside until the failure, then backup
    assert_eq!(trace.steps[60].rewards[r4], 5.0);
    assert_eq!(trace.steps[61].rewards[r4], -2.0);
    assert_eq!(trace.steps[63].rewards[r4], 100.0);
    assert_eq!(trace.steps[61].rewards[r5], 120.0);
    assert!(classify_trace(e.topology(), &trace)
        .unwrap()
        .iter()
        .all(|v| *v == Verdict::Correct));
    assert_eq!(trace.steps.len(), 64 + 20 + 1);
}

#[test]
fn clearing_stops_penalties_and_deenergizes() {
    let mut e = env();
    let mut plan = plan_with_fault(&e, 4, 70);
    plan.breakers.insert(RelayId(4), BreakerBehavior::NeverFail);
    e.reset_with_plan(plan, 9).unwrap();
    let trace = run_episode(&mut e, &mut OracleController).unwrap();
    let r4 = idx(&e, 4);
    let opened = trace.opened_at[r4].unwrap();
    for s in &trace.steps[opened..] {
        assert!(!s.fault_active);
        assert!(s.rewards.iter().all(|&r| r == 3.0));
        assert_eq!(s.measurements[idx(&e, 5)], (0.0, 0.0));
    }
}

#[test]
fn global_reward_is_sum_and_reset_is_deterministic() {
    let mut a = env();
    let mut b = env();
    a.reset(42).unwrap();
    b.reset(42).unwrap();
    assert_eq!(a.plan(), b.plan());
    loop {
        let ra = a.step(&hold(&a)).unwrap();
        let rb = b.step(&hold(&b)).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.global_reward, ra.rewards.iter().sum::<f64>());
        if ra.done {
            break;
        }
    }
    assert_eq!(a.trace().steps.len(), 240);
}

#[test]
fn fault_probability_extremes() {
    let t = build_feeder_section();
    for (p, expect) in [(0.0, false), (1.0, true)] {
        let cfg = EpisodeConfig {
            fault_probability: p,
            ..EpisodeConfig::default()
        };
        let mut e = EpisodeEnv::new(t.clone(), cfg).unwrap();
        for seed in 0..20 {
            e.reset(seed).unwrap();
            let f = e.plan().unwrap().fault;
            assert_eq!(f.is_some(), expect);
            if let Some(f) = f {
                assert!((60..=120).contains(&f.onset_step));
            }
        }
    }
}

#[test]
fn usage_errors() {
    let mut e = env();
    assert!(matches!(e.step(&hold(&e)), Err(Error::Usage(_))));
    e.reset(0).unwrap();
    assert!(matches!(e.step(&[RelayAction::Countdown]), Err(Error::Usage(_))));
    while !e.step(&hold(&e)).unwrap().done {}
    assert!(matches!(e.step(&hold(&e)), Err(Error::Usage(_))));
    let mut partial = env();
    partial.reset(0).unwrap();
    partial.step(&hold(&partial)).unwrap();
    assert!(matches!(
        classify_trace(partial.topology(), partial.trace()),
        Err(Error::Usage(_))
    ));
}

#[test]
fn config_validation() {
    let bad = EpisodeConfig {
        horizon: 140,
        ..EpisodeConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = EpisodeConfig {
        window: 1,
        ..EpisodeConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = EpisodeConfig {
        breaker_failure_prob: 1.5,
        ..EpisodeConfig::default()
    };
    assert!(EpisodeEnv::new(build_feeder_section(), bad).is_err());
}

#[test]
fn ideal_action_examples() {
    let t = build_feeder_section();
    let seg5 = t.relay(RelayId(5)).unwrap().segment;
    let pos = |id| t.relay_index(RelayId(id)).unwrap();
    let a = ideal_actions(
        &t,
        &IdealActionInput {
            fault: Some((seg5, 0.3)),
            failed_breakers: BTreeSet::new(),
        },
    )
    .unwrap();
    assert!(a[pos(5)]);
    assert_eq!(a.iter().filter(|x| **x).count(), 1);
    let a = ideal_actions(
        &t,
        &IdealActionInput {
            fault: Some((seg5, 0.3)),
            failed_breakers: BTreeSet::from([RelayId(5)]),
        },
    )
    .unwrap();
    assert!(a[pos(4)] && a[pos(5)]);
    assert!(!a[pos(1)]);
    assert!(ideal_actions(&t, &IdealActionInput::default())
        .unwrap()
        .iter()
        .all(|x| !x));
}

#[test]
fn classify_examples() {
    let mut e = env();
    // no fault, relay 3 trips
    let mut plan = plan_with_fault(&e, 5, 80);
    plan.fault = None;
    e.reset_with_plan(plan, 5).unwrap();
    let r3 = idx(&e, 3);
    let mut a = hold(&e);
    a[r3] = RelayAction::Set(1);
    e.step(&a).unwrap();
    while !e.step(&hold(&e)).unwrap().done {}
    let v = classify_trace(e.topology(), e.trace()).unwrap();
    assert_eq!(v[r3], Verdict::FalsePositive);

    // fault on 5, nobody acts
    let plan = plan_with_fault(&e, 5, 80);
    e.reset_with_plan(plan, 5).unwrap();
    while !e.step(&hold(&e)).unwrap().done {}
    let v = classify_trace(e.topology(), e.trace()).unwrap();
    assert_eq!(v[idx(&e, 5)], Verdict::FalseNegative);
    assert_eq!(v[idx(&e, 4)], Verdict::Correct);

    // backup trips while the primary is still healthy
    let plan = plan_with_fault(&e, 5, 80);
    e.reset_with_plan(plan, 5).unwrap();
    let (r4, r5) = (idx(&e, 4), idx(&e, 5));
    for t in 0.. {
        let mut a = hold(&e);
        if t == 80 {
            a[r4] = RelayAction::Set(1);
        }
        if e.step(&a).unwrap().done {
            break;
        }
    }
    let v = classify_trace(e.topology(), e.trace()).unwrap();
    assert_eq!(v[r4], Verdict::FalsePositive);
    assert_eq!(v[r5], Verdict::FalseNegative);
}

#[test]
fn repeated_commands_do_not_farm_reward() {
    let mut e = env();
    let mut plan = plan_with_fault(&e, 5, 60);
    plan.breakers.insert(RelayId(5), BreakerBehavior::AlwaysFail);
    e.reset_with_plan(plan, 0).unwrap();
    let r5 = idx(&e, 5);
    while e.current_step() < 60 {
        e.step(&hold(&e)).unwrap();
    }
    let mut trips = 0;
    for _ in 0..10 {
        let mut a = hold(&e);
        a[r5] = RelayAction::Set(1);
        e.step(&a).unwrap();
        let res = e.step(&hold(&e)).unwrap();
        trips += usize::from(res.rewards[r5] == 120.0);
    }
    assert_eq!(trips, 1);
}
