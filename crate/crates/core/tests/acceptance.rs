//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 6 to 10 are exact properties and fail the run when violated.
//! Criteria 1 to 5 measure trained policies against the fitted baseline;
//! their lines report the measured values and do not change the exit status.
//! Setting `RELAYNET_ACCEPTANCE_EXACT_ONLY` skips the training-based part.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::ExitCode;
use std::thread;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use relaynet::baseline::{collect_samples, density_crossing, fit_threshold, Grading, Kde, ThresholdController};
use relaynet::dqn::{
    agent_from_bytes, agent_to_bytes, loss_and_grad, td_targets, AgentHyperparams, DqnAgent, Mlp, ReplayBuffer,
    Transition,
};
use relaynet::env::{
    classify_trace, ideal_actions, run_episode, BreakerBehavior, Controller, EpisodeConfig, EpisodeEnv, EpisodePlan,
    EpisodeTrace, IdealActionInput, NullController, OracleController, RelayAction, RelayObservation, Verdict,
    N_ACTIONS,
};
use relaynet::evaluation::{response_time, run_scenario, sweep_rates, AlwaysTripController, ScenarioKind, StressAxis};
use relaynet::feeder::{
    build_feeder_section, kcl_residual, sample_load_profile, solve_circuit, BusId, FaultSpec, FeederTopology, Interval,
    LoadProfile, Relay, RelayId, Segment, Source,
};
use relaynet::server::{encode, EnvClient, EnvServer, WireMessage, PROTOCOL_VERSION};
use relaynet::trainer::{moving_average, train_all, train_relay, training_order, PolicySet, TrainerConfig};

const SEED: u64 = 7;
const EVAL_EPISODES: usize = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &str, o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("{tag} criterion {id:>2} {name}: {}", o.detail);
}

// ---------------------------------------------------------------- criterion 6

fn dqn_numerics() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut notes = Vec::new();
    let mut pass = true;

    // central finite differences on random [4, 8, 8, 3] nets
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut net = Mlp::init(&[4, 8, 8, 3], &mut rng).unwrap();
        for p in net.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let batch: Vec<Transition> = (0..8)
            .map(|_| Transition {
                state: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: rng.random_range(0..3),
                reward: 0.0,
                next_state: vec![0.0; 4],
                done: true,
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let targets: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, grad) = loss_and_grad(&net, &refs, &targets).unwrap();
        let h = 1e-6;
        for i in 0..net.params().len() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (loss_and_grad(&plus, &refs, &targets).unwrap().0
                - loss_and_grad(&minus, &refs, &targets).unwrap().0)
                / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs());
            if scale > 1e-7 {
                worst = worst.max((fd - grad[i]).abs() / scale);
            }
        }
    }
    pass &= worst <= 1e-4;
    notes.push(format!("grad rel err {worst:.1e}"));

    // FIFO
    let mut buf = ReplayBuffer::new(1000);
    for i in 0..1250 {
        buf.push(Transition {
            state: vec![i as f64],
            action: 0,
            reward: 0.0,
            next_state: vec![0.0],
            done: false,
        });
    }
    let kept: Vec<usize> = buf.iter().map(|t| t.state[0] as usize).collect();
    let fifo = kept == (250..1250).collect::<Vec<_>>();
    pass &= fifo;
    notes.push(format!("fifo {fifo}"));

    // soft update contraction
    let online = Mlp::init(&[6, 9, 4], &mut rng).unwrap();
    let mut target = Mlp::init(&[6, 9, 4], &mut rng).unwrap();
    let dist = |a: &Mlp, b: &Mlp| {
        a.params()
            .iter()
            .zip(b.params())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut contraction: f64 = 0.0;
    for _ in 0..20 {
        let before = dist(&target, &online);
        target.soft_update_from(&online, 0.005);
        contraction = contraction.max((dist(&target, &online) - 0.995 * before).abs());
    }
    pass &= contraction < 1e-12;
    notes.push(format!("soft update err {contraction:.1e}"));

    // double DQN: online prefers action 1, target prefers action 0
    let online = Mlp::from_params(&[1, 2], vec![1.0, 2.0, 0.0, 0.0]).unwrap();
    let target = Mlp::from_params(&[1, 2], vec![5.0, 3.0, 0.0, 0.0]).unwrap();
    let t = Transition {
        state: vec![1.0],
        action: 0,
        reward: 1.0,
        next_state: vec![1.0],
        done: false,
    };
    let double = td_targets(&[&t], &online, &target, 0.5, true).unwrap()[0];
    let plain = td_targets(&[&t], &online, &target, 0.5, false).unwrap()[0];
    let fixture = double == 2.5 && plain == 3.5;
    pass &= fixture;
    notes.push(format!("double-dqn fixture {fixture}"));

    // save/load after some training
    let mut agent = DqnAgent::new(22, AgentHyperparams::default(), &mut rng).unwrap();
    let mut buf = ReplayBuffer::new(256);
    for _ in 0..256 {
        buf.push(Transition {
            state: (0..22).map(|_| rng.random()).collect(),
            action: rng.random_range(0..N_ACTIONS),
            reward: rng.random_range(-1.5..1.2),
            next_state: (0..22).map(|_| rng.random()).collect(),
            done: rng.random_bool(0.1),
        });
    }
    for _ in 0..20 {
        agent.train_step(&buf, &mut rng).unwrap();
    }
    let back = agent_from_bytes(&agent_to_bytes(&agent)).unwrap();
    let bits = |m: &Mlp| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
    let round_trip =
        back == agent && bits(&back.online) == bits(&agent.online) && bits(&back.target) == bits(&agent.target);
    pass &= round_trip;
    notes.push(format!("save/load bit-exact {round_trip}"));

    let secs = started.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    notes.push(format!("{secs:.1}s"));
    Outcome {
        pass,
        detail: notes.join(", "),
    }
}

// ---------------------------------------------------------------- criterion 7

/// Trips each relay at a scripted step (Set(1) one step before).
struct Scripted {
    trip_at: Vec<Option<usize>>,
}

impl Controller for Scripted {
    fn act(&mut self, env: &EpisodeEnv, _obs: &[RelayObservation]) -> Vec<RelayAction> {
        let s = env.current_step();
        self.trip_at
            .iter()
            .map(|t| match t {
                Some(t) if s + 1 == *t => RelayAction::Set(1),
                _ => RelayAction::Countdown,
            })
            .collect()
    }
}

/// Verdicts by applying the ideal-action rule at each relay's trip step,
/// with the breaker failures established by then.
fn brute_force_verdicts(topology: &FeederTopology, trace: &EpisodeTrace) -> Vec<Verdict> {
    let active: Vec<bool> = trace.steps.iter().map(|s| s.fault_active).collect();
    let occurred = active.iter().any(|a| *a);
    let fault = trace.fault.filter(|_| occurred).map(|f| (f.segment, f.position));
    // failures established by `step`, or by the end of the episode
    let failed_by = |step: Option<usize>| -> BTreeSet<RelayId> {
        trace
            .relays
            .iter()
            .zip(&trace.failed_at)
            .filter(|(_, f)| f.is_some_and(|f| step.is_none_or(|s| f <= s)))
            .map(|(id, _)| *id)
            .collect()
    };
    (0..trace.relays.len())
        .map(|i| match trace.tripped_at[i] {
            Some(t) => {
                let ideal = ideal_actions(
                    topology,
                    &IdealActionInput {
                        fault,
                        failed_breakers: failed_by(Some(t)),
                    },
                )
                .unwrap();
                if active[t] && ideal[i] {
                    Verdict::Correct
                } else {
                    Verdict::FalsePositive
                }
            }
            None => {
                let ideal = ideal_actions(
                    topology,
                    &IdealActionInput {
                        fault,
                        failed_breakers: failed_by(None),
                    },
                )
                .unwrap();
                if ideal[i] {
                    Verdict::FalseNegative
                } else {
                    Verdict::Correct
                }
            }
        })
        .collect()
}

fn oracle_suite() -> Outcome {
    let topo = build_feeder_section();
    let cfg = EpisodeConfig {
        breaker_failure_prob: 0.0,
        ..EpisodeConfig::default()
    };
    let mut env = EpisodeEnv::new(topo.clone(), cfg.clone()).unwrap();
    let ids = topo.relay_ids();
    let n = ids.len();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let mut locations: Vec<Option<usize>> = vec![None];
    locations.extend(topo.protected_segments().into_iter().map(Some));
    let (mut total, mut agree, mut oracle_failures, mut misoperations) = (0usize, 0usize, 0usize, 0usize);

    for &segment in &locations {
        for mask in 0u32..(1 << n) {
            let breakers = ids
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    let b = if mask & (1 << i) != 0 {
                        BreakerBehavior::AlwaysFail
                    } else {
                        BreakerBehavior::NeverFail
                    };
                    (*id, b)
                })
                .collect();
            let onset = rng.random_range(cfg.onset_window.0..=cfg.onset_window.1);
            let plan = EpisodePlan {
                profile: sample_load_profile(&topo, &mut rng, cfg.trend_range, cfg.local_range).unwrap(),
                fault: segment.map(|s| FaultSpec {
                    segment: s,
                    position: rng.random_range(0.05..1.0),
                    impedance: Complex64::new(rng.random_range(0.05..2.0), 0.0),
                    onset_step: onset,
                }),
                breakers,
            };
            let mut controllers: Vec<(&str, Box<dyn Controller>)> = vec![
                ("oracle", Box::new(OracleController)),
                ("null", Box::new(NullController)),
                ("always", Box::new(AlwaysTripController)),
            ];
            for _ in 0..4 {
                let trip_at = (0..n)
                    .map(|_| rng.random_bool(0.6).then(|| onset + rng.random_range(0..20) - 5))
                    .collect();
                controllers.push(("scripted", Box::new(Scripted { trip_at })));
            }
            for (name, mut c) in controllers {
                env.reset_with_plan(plan.clone(), rng.random()).unwrap();
                let trace = run_episode(&mut env, c.as_mut()).unwrap();
                let got = classify_trace(&topo, &trace).unwrap();
                let want = brute_force_verdicts(&topo, &trace);
                total += 1;
                agree += usize::from(got == want);
                misoperations += got.iter().filter(|v| **v != Verdict::Correct).count();
                if name == "oracle" && got.iter().any(|v| *v != Verdict::Correct) {
                    oracle_failures += 1;
                }
            }
        }
    }
    Outcome {
        pass: agree == total && oracle_failures == 0,
        detail: format!(
            "{agree}/{total} traces agree ({misoperations} relay misoperations exercised), oracle misoperations {oracle_failures}"
        ),
    }
}

// ---------------------------------------------------------------- criterion 8

fn two_gaussian() -> Outcome {
    let sample = |mean: f64, seed: u64| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, 1.0).unwrap();
        (0..5000).map(|_| d.sample(&mut rng)).collect()
    };
    let pre = Kde::new(&sample(1.0, 81)).unwrap();
    let post = Kde::new(&sample(3.0, 82)).unwrap();
    let x = density_crossing(&pre, &post, 1.0, RelayId(1)).unwrap();
    let residual = post.density(x) - pre.density(x);
    let err = (x - 2.0).abs();
    Outcome {
        pass: err <= 0.05 && residual.abs() <= 1e-6,
        detail: format!("crossing {x:.4} (err {err:.4}), residual {:.1e}", residual.abs()),
    }
}

// ---------------------------------------------------------------- criterion 9

fn toy(load: Complex64) -> FeederTopology {
    FeederTopology::new(
        vec![BusId(1), BusId(2)],
        vec![Segment {
            from: BusId(1),
            to: BusId(2),
            impedance: Complex64::new(0.1, 0.0),
        }],
        [(BusId(2), load)].into(),
        Source {
            bus: BusId(1),
            voltage: 1.0,
        },
        vec![Relay {
            id: RelayId(1),
            segment: 0,
            downstream: None,
        }],
    )
    .unwrap()
}

fn circuit_solver() -> Outcome {
    let topo = build_feeder_section();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let ids = topo.relay_ids();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let profile = sample_load_profile(&topo, &mut rng, Interval::new(0.5, 1.6), Interval::new(0.7, 1.3)).unwrap();
        let fault = rng.random_bool(0.8).then(|| FaultSpec {
            segment: rng.random_range(1..topo.segments().len()),
            position: rng.random_range(0.0..=1.0),
            impedance: Complex64::new(rng.random_range(0.0..2.0), rng.random_range(0.0..0.1)),
            onset_step: 0,
        });
        let open: BTreeSet<RelayId> = ids.iter().copied().filter(|_| rng.random_bool(0.15)).collect();
        let s = solve_circuit(&topo, &profile, fault.as_ref(), &open).unwrap();
        worst = worst.max(kcl_residual(&topo, &profile, fault.as_ref(), &s));
    }

    // series circuit, bolted fault at the load bus, resistive mid-segment fault
    let load = Complex64::new(0.9, 0.0);
    let t = toy(load);
    let p = LoadProfile::uniform(&t, 1.0);
    let series = solve_circuit(&t, &p, None, &BTreeSet::new()).unwrap();
    let bolted = FaultSpec {
        segment: 0,
        position: 1.0,
        impedance: Complex64::new(0.0, 0.0),
        onset_step: 0,
    };
    let bolted = solve_circuit(&t, &p, Some(&bolted), &BTreeSet::new()).unwrap();
    let mid = FaultSpec {
        segment: 0,
        position: 0.5,
        impedance: Complex64::new(0.2, 0.0),
        onset_step: 0,
    };
    let mid = solve_circuit(&t, &p, Some(&mid), &BTreeSet::new()).unwrap();
    let z_mid = 0.05 + 0.2 * 0.95 / 1.15;
    let i_mid = 1.0 / z_mid;
    let v_fault = 1.0 - 0.05 * i_mid;
    let i_load = v_fault / 0.95;
    let errors = [
        (series.segment_currents[0].norm() - 1.0).abs(),
        (series.bus_voltages[&BusId(2)].norm() - 0.9).abs(),
        (bolted.segment_currents[0].norm() - 10.0).abs(),
        bolted.bus_voltages[&BusId(2)].norm(),
        (mid.segment_currents[0].norm() - i_mid).abs(),
        (mid.receiving_currents[0].norm() - i_load).abs(),
        (mid.bus_voltages[&BusId(2)].norm() - 0.9 * i_load).abs(),
    ];
    let ohm = errors.iter().copied().fold(0.0, f64::max);
    Outcome {
        pass: worst < 1e-9 && ohm <= 1e-12,
        detail: format!("max KCL residual {worst:.1e} over 10^4 solves, Ohm fixtures max err {ohm:.1e}"),
    }
}

// ---------------------------------------------------------------- criterion 10

/// Seeded random actions, biased toward trips.
struct RandomActions(ChaCha8Rng);

impl Controller for RandomActions {
    fn act(&mut self, _env: &EpisodeEnv, obs: &[RelayObservation]) -> Vec<RelayAction> {
        obs.iter()
            .map(|_| RelayAction::from_index(self.0.random_range(0..N_ACTIONS)).unwrap())
            .collect()
    }
}

fn obs_bits(obs: &[RelayObservation]) -> Vec<u64> {
    obs.iter()
        .flat_map(|o| {
            o.voltage_window
                .iter()
                .chain(&o.current_window)
                .map(|x| x.to_bits())
                .chain([u64::from(o.breaker_closed), u64::from(o.counter)])
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Plays 10 seeded episodes in-process and over the wire; returns mismatching steps.
fn wire_episodes(client: &mut EnvClient) -> (usize, usize) {
    let topo = build_feeder_section();
    let mut env = EpisodeEnv::new(topo, EpisodeConfig::default()).unwrap();
    let (mut steps, mut mismatches) = (0, 0);
    for seed in 0..10u64 {
        let mut policy = RandomActions(ChaCha8Rng::seed_from_u64(1000 + seed));
        let local = env.reset(seed).unwrap();
        let remote = client.reset(seed).unwrap();
        mismatches += usize::from(obs_bits(&local) != obs_bits(&remote));
        let mut obs = local;
        loop {
            let actions = policy.act(&env, &obs);
            let res = env.step(&actions).unwrap();
            let (r_obs, r_rewards, r_done) = client.step(&actions).unwrap();
            let rb = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            let same = obs_bits(&res.observations) == obs_bits(&r_obs)
                && rb(&res.rewards) == rb(&r_rewards)
                && res.done == r_done;
            steps += 1;
            mismatches += usize::from(!same);
            obs = res.observations;
            if res.done {
                break;
            }
        }
    }
    (steps, mismatches)
}

fn fuzz_line(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let valid = [
        encode(&WireMessage::Hello {
            version: PROTOCOL_VERSION,
            info: None,
        }),
        encode(&WireMessage::Reset { seed: 3 }),
        encode(&WireMessage::Step { actions: vec![0; 5] }),
        "step actions=1,2,3,4,5\n".to_string(),
    ];
    let mut line: Vec<u8> = match rng.random_range(0..4) {
        0 => (0..rng.random_range(0..120)).map(|_| rng.random::<u8>()).collect(),
        1 => (0..rng.random_range(0..60))
            .map(|_| b" =,;\\abcdefghijklmnopqrstuvwxyz0123456789-.eE"[rng.random_range(0..45)])
            .collect(),
        _ => {
            let mut l = valid[rng.random_range(0..valid.len())].as_bytes().to_vec();
            l.pop();
            for _ in 0..rng.random_range(0..4) {
                if l.is_empty() {
                    break;
                }
                let i = rng.random_range(0..l.len());
                l[i] = rng.random();
            }
            l
        }
    };
    line.retain(|b| *b != b'\n');
    line.push(b'\n');
    line
}

fn wire_protocol() -> Outcome {
    let server = EnvServer::bind("127.0.0.1:0", build_feeder_section(), EpisodeConfig::default()).unwrap();
    let addr = server.local_addr().unwrap();
    let shutdown = server.shutdown_handle();
    let join = thread::spawn(move || server.serve());

    let mut client = EnvClient::connect(addr).unwrap();
    let (steps, mismatches) = wire_episodes(&mut client);
    client.close().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let (mut sent, mut reconnects, mut bad_replies) = (0usize, 0usize, 0usize);
    while sent < 100_000 {
        let stream = TcpStream::connect(addr).unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        let mut reply = String::new();
        while sent < 100_000 {
            let line = fuzz_line(&mut rng);
            sent += 1;
            if writer.write_all(&line).is_err() {
                break;
            }
            reply.clear();
            match reader.read_line(&mut reply) {
                Ok(0) | Err(_) => break,
                Ok(_) => {
                    let known = ["hello ", "obs ", "error ", "close"]
                        .iter()
                        .any(|k| reply.starts_with(k));
                    bad_replies += usize::from(!known);
                }
            }
            // a version mismatch ends the session by design
            if reply.starts_with("error message=protocol\\sversion") {
                break;
            }
        }
        reconnects += 1;
    }
    let mut client = EnvClient::connect(addr).unwrap();
    let (after_steps, after_mismatches) = wire_episodes(&mut client);
    client.close().unwrap();
    shutdown.shutdown();
    let served = join.join().map(|r| r.is_ok()).unwrap_or(false);

    Outcome {
        pass: mismatches == 0 && after_mismatches == 0 && bad_replies == 0 && served && after_steps == steps,
        detail: format!(
            "{steps} steps over 10 episodes, {mismatches} mismatches; fuzz {sent} lines over {reconnects} connections, \
             {bad_replies} malformed replies, {after_mismatches} mismatches afterwards"
        ),
    }
}

// ------------------------------------------------------------- criteria 1 to 5

struct Trained {
    policies: PolicySet,
    train_secs: f64,
    leaf_curve: Vec<f64>,
}

fn leaf() -> RelayId {
    RelayId(5)
}

/// Episode at which the leaf's MA50 first reaches 90% of its final value.
/// Only full windows count, so the earliest possible answer is episode 49.
fn convergence_episode(rewards: &[f64]) -> Option<usize> {
    let ma = moving_average(rewards, 50);
    let last = *ma.last()?;
    ma.iter().skip(49).position(|m| *m >= 0.9 * last).map(|p| p + 49)
}

/// Leaf curve of the nested loop for `seed`, training only up to the leaf.
fn leaf_curve(seed: u64) -> Vec<f64> {
    let topo = build_feeder_section();
    let cfg = EpisodeConfig::default();
    let hp = AgentHyperparams::default();
    let trainer = TrainerConfig::default();
    let mut env = EpisodeEnv::new(topo.clone(), cfg).unwrap();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut policies = PolicySet::default();
    for relay in training_order(&topo).unwrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let (agent, rewards, _) =
            train_relay(&mut env, &mut policies, &hp, &trainer, relay, &mut rng, &|_, _| {}).unwrap();
        if relay == leaf() {
            return rewards;
        }
        policies.agents.insert(relay, agent);
    }
    unreachable!("leaf relay is in the training order")
}

fn train() -> Trained {
    let topo = build_feeder_section();
    let started = Instant::now();
    let (policies, report) = train_all(
        &topo,
        &EpisodeConfig::default(),
        &AgentHyperparams::default(),
        &TrainerConfig::default(),
        SEED,
        None,
    )
    .unwrap();
    Trained {
        policies,
        train_secs: started.elapsed().as_secs_f64(),
        leaf_curve: report.curve(leaf()).unwrap().rewards[0].clone(),
    }
}

fn eval_config() -> EpisodeConfig {
    EpisodeConfig {
        breaker_failure_prob: 0.0,
        ..EpisodeConfig::default()
    }
}

fn empirical(trained: &Trained) -> Vec<(u32, &'static str, Outcome)> {
    let topo = build_feeder_section();
    let cfg = eval_config();
    let samples = collect_samples(&topo, &EpisodeConfig::default(), 500, SEED).unwrap();
    let thresholds = fit_threshold(&topo, &samples, 3.0, Grading::default()).unwrap();
    let mut baseline = ThresholdController::new(&topo, &thresholds).unwrap();
    let mut rl = trained.policies.clone();
    let mut out = Vec::new();

    let rl_local = run_scenario(&topo, &cfg, &mut rl, ScenarioKind::LocalFault, EVAL_EPISODES, SEED).unwrap();
    let base_local = run_scenario(
        &topo,
        &cfg,
        &mut baseline,
        ScenarioKind::LocalFault,
        EVAL_EPISODES,
        SEED,
    )
    .unwrap();
    let (r, b) = (rl_local.failure_rate(), base_local.failure_rate());
    out.push((
        1,
        "local-fault ordering",
        Outcome {
            pass: r <= 0.02 && r < b && b >= 0.03 && trained.train_secs < 1800.0,
            detail: format!(
                "RL {:.1}%, baseline {:.1}% over {EVAL_EPISODES} episodes; training {:.0}s",
                100.0 * r,
                100.0 * b,
                trained.train_secs
            ),
        },
    ));

    let oracle = run_scenario(
        &topo,
        &cfg,
        &mut OracleController,
        ScenarioKind::Backup,
        EVAL_EPISODES,
        SEED,
    )
    .unwrap();
    let rl_backup = run_scenario(&topo, &cfg, &mut rl, ScenarioKind::Backup, EVAL_EPISODES, SEED).unwrap();
    let viol = rl_backup.backup_violations as f64 / EVAL_EPISODES as f64;
    let fnr = rl_backup.false_negative_rate();
    out.push((
        2,
        "backup coordination",
        Outcome {
            pass: oracle.backup_violations == 0 && viol <= 0.01 && fnr <= 0.02,
            detail: format!(
                "oracle violations {}, RL violations {:.1}%, RL false negatives {:.1}%",
                oracle.backup_violations,
                100.0 * viol,
                100.0 * fnr
            ),
        },
    ));

    let sweep_cfg = EpisodeConfig::default();
    let levels = [0.0, 9.0];
    let rl_sweep = sweep_rates(
        &topo,
        &sweep_cfg,
        &mut rl,
        StressAxis::Peak,
        &levels,
        leaf(),
        EVAL_EPISODES,
        SEED,
    )
    .unwrap();
    let base_sweep = sweep_rates(
        &topo,
        &sweep_cfg,
        &mut baseline,
        StressAxis::Peak,
        &levels,
        leaf(),
        EVAL_EPISODES,
        SEED,
    )
    .unwrap();
    let (rl9, b0, b9) = (rl_sweep[1].1, base_sweep[0].1, base_sweep[1].1);
    out.push((
        3,
        "peak-load robustness",
        Outcome {
            pass: rl9 < b9 && b9 >= 3.0 * b0,
            detail: format!(
                "+9%: RL {:.1}%, baseline {:.1}% (baseline at 0%: {:.1}%)",
                100.0 * rl9,
                100.0 * b9,
                100.0 * b0
            ),
        },
    ));

    let rt = response_time(&topo, &cfg, &mut rl, EVAL_EPISODES, SEED).unwrap();
    out.push((
        4,
        "response time",
        Outcome {
            pass: rt.primary.mean_steps <= 6.0 && rt.backup.mean_steps > rt.primary.mean_steps,
            detail: format!(
                "primary {:.2} steps ({} missing), backup {:.2} steps ({} missing)",
                rt.primary.mean_steps, rt.primary.missing, rt.backup.mean_steps, rt.backup.missing
            ),
        },
    ));

    let mut reach = vec![convergence_episode(&trained.leaf_curve)];
    for seed in [SEED + 1, SEED + 2] {
        reach.push(convergence_episode(&leaf_curve(seed)));
    }
    let converged = reach.iter().filter(|r| r.is_some_and(|e| e < 500)).count();
    out.push((
        5,
        "leaf convergence",
        Outcome {
            pass: converged == 3,
            detail: format!("90% of final MA50 first reached at episodes {reach:?}"),
        },
    ));
    out
}

fn main() -> ExitCode {
    let started = Instant::now();
    let exact: Vec<(u32, &str, fn() -> Outcome)> = vec![
        (6, "dqn numerics", dqn_numerics),
        (7, "oracle suite", oracle_suite),
        (8, "two-gaussian crossing", two_gaussian),
        (9, "circuit solver", circuit_solver),
        (10, "wire protocol", wire_protocol),
    ];
    let mut exact_ok = true;
    let mut lines = Vec::new();
    for (id, name, f) in exact {
        let o = f();
        report(id, name, &o);
        exact_ok &= o.pass;
        lines.push((id, name, o));
    }
    if std::env::var_os("RELAYNET_ACCEPTANCE_EXACT_ONLY").is_none() {
        let trained = train();
        for (id, name, o) in empirical(&trained) {
            report(id, name, &o);
            lines.push((id, name, o));
        }
    }
    lines.sort_by_key(|(id, _, _)| *id);
    println!("\nsummary ({:.0}s):", started.elapsed().as_secs_f64());
    for (id, name, o) in &lines {
        report(*id, name, o);
    }
    if exact_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
