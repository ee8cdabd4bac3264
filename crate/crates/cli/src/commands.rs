use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relaynet::baseline::{
    collect_samples, density_crossing, density_csv, fit_threshold, Kde, PickupThreshold, ThresholdController,
};
use relaynet::env::{run_episode, Controller, EpisodeEnv, NullController, OracleController};
use relaynet::evaluation::{
    compare_report, response_time, run_all_scenarios, scenario_plan, stress_levels, sweep_rates, FailureReport,
    ResponseTimeStats, RobustnessSweep, ScenarioKind, StressAxis,
};
use relaynet::feeder::{FeederTopology, RelayId};
use relaynet::server::EnvServer;
use relaynet::trainer::{model_file_name, train_all, PolicySet};

use crate::config::RunConfig;
use crate::{AxisArg, CliError, PolicyArg, ScenarioArg};

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn models_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| cfg.output_dir.join("models"))
}

fn default_thresholds(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("baseline").join("thresholds.toml")
}

fn load_policies(dir: &Path, topology: &FeederTopology) -> Result<PolicySet, CliError> {
    let missing: Vec<String> = topology
        .relay_ids()
        .into_iter()
        .filter(|id| !dir.join(model_file_name(*id)).is_file())
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Usage(format!(
            "no model in {} for relay(s) {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    Ok(PolicySet::load(dir, topology)?)
}

fn load_thresholds(path: &Path, topology: &FeederTopology) -> Result<ThresholdController, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read thresholds {}: {e}", path.display())))?;
    let th = PickupThreshold::from_toml(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    ThresholdController::new(topology, &th).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.require_seed()?;
    let topology = cfg.topology()?;
    let episodes = cfg.training.episodes_per_relay;
    let progress = move |run: usize, relay: RelayId, episode: usize, _reward: f64| {
        if run == 0 && (episode + 1) % 50 == 0 {
            eprintln!("relay {relay}: episode {}/{episodes}", episode + 1);
        }
    };
    let (policies, report) = train_all(
        &topology,
        &cfg.episode,
        &cfg.agent,
        &cfg.training,
        seed,
        Some(&progress),
    )?;
    policies.save(&cfg.output_dir.join("models"))?;
    let mut summary = format!(
        "order {:?}\nwall clock {:.1} s\nrelay  mean reward (last 50)  failure rate (last 50)\n",
        report.order.iter().map(|r| r.0).collect::<Vec<_>>(),
        report.wall_clock_secs
    );
    for c in &report.curves {
        write(
            &cfg.output_dir.join("curves").join(format!("relay_{}.csv", c.relay)),
            &report.to_csv(c.relay).expect("relay in report"),
        )?;
        let tail = |v: &Vec<f64>| {
            let k = v.len().min(50);
            v[v.len() - k..].iter().sum::<f64>() / k as f64
        };
        let reward = c.rewards.iter().map(tail).sum::<f64>() / c.rewards.len() as f64;
        let fail = c
            .failures
            .iter()
            .map(|f| tail(&f.iter().map(|x| f64::from(u8::from(*x))).collect()))
            .sum::<f64>()
            / c.failures.len() as f64;
        let _ = writeln!(summary, "{:>5}  {:>24.2}  {:>23.3}", c.relay, reward, fail);
    }
    write(&cfg.output_dir.join("curves").join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn response_csv(name: &str, rt: &ResponseTimeStats) -> String {
    let mut out = String::new();
    for (role, d) in [("primary", rt.primary), ("backup", rt.backup)] {
        let _ = writeln!(
            out,
            "{name},{role},{},{},{},{},{},{}",
            d.count, d.missing, d.mean_steps, d.max_steps, d.mean_secs, d.max_secs
        );
    }
    out
}

pub fn eval(
    cfg: &RunConfig,
    models: Option<PathBuf>,
    oracle: bool,
    baseline: Option<PathBuf>,
    with_sweeps: bool,
) -> Result<(), CliError> {
    let seed = cfg.require_seed()?;
    let topology = cfg.topology()?;
    let (name, mut policy): (&str, Box<dyn Controller>) = if oracle {
        ("Oracle", Box::new(OracleController))
    } else {
        ("RL", Box::new(load_policies(&models_dir(cfg, models), &topology)?))
    };
    let th_path = baseline.clone().unwrap_or_else(|| default_thresholds(cfg));
    let mut base = if baseline.is_some() || th_path.is_file() {
        Some(load_thresholds(&th_path, &topology)?)
    } else {
        None
    };
    // scenario episodes control breaker failures themselves
    let scenario_cfg = relaynet::env::EpisodeConfig {
        breaker_failure_prob: 0.0,
        ..cfg.episode.clone()
    };
    let n = cfg.evaluation.episodes;
    let out = cfg.output_dir.join("eval");

    let rl = run_all_scenarios(&topology, &scenario_cfg, policy.as_mut(), name, n, seed)?;
    let mut rates = rl.to_csv();
    let base_report = match base.as_mut() {
        Some(b) => {
            let r = run_all_scenarios(&topology, &scenario_cfg, b, "Baseline", n, seed)?;
            rates.push_str(
                r.to_csv()
                    .lines()
                    .skip(1)
                    .map(|l| format!("{l}\n"))
                    .collect::<String>()
                    .as_str(),
            );
            Some(r)
        }
        None => None,
    };
    write(&out.join("failure_rates.csv"), &rates)?;
    let table = match &base_report {
        Some(b) => compare_report(&rl, b)?,
        None => single_table(&rl),
    };
    write(&out.join("comparison.txt"), &table)?;
    print!("{table}");

    let m = cfg.evaluation.response_episodes;
    let mut rt_csv = String::from("strategy,role,count,missing,mean_steps,max_steps,mean_secs,max_secs\n");
    let rt = response_time(&topology, &scenario_cfg, policy.as_mut(), m, seed)?;
    rt_csv.push_str(&response_csv(name, &rt));
    println!(
        "response time {name}: primary {:.2} steps, backup {:.2} steps",
        rt.primary.mean_steps, rt.backup.mean_steps
    );
    if let Some(b) = base.as_mut() {
        let rb = response_time(&topology, &scenario_cfg, b, m, seed)?;
        rt_csv.push_str(&response_csv("Baseline", &rb));
        println!(
            "response time Baseline: primary {:.2} steps, backup {:.2} steps",
            rb.primary.mean_steps, rb.backup.mean_steps
        );
    }
    write(&out.join("response_time.csv"), &rt_csv)?;

    if with_sweeps {
        for axis in [StressAxis::Peak, StressAxis::Mean] {
            let sweep = run_sweep(
                cfg,
                &topology,
                axis,
                name,
                policy.as_mut(),
                base.as_mut().map(|b| b as &mut dyn Controller),
                seed,
            )?;
            write(&out.join(sweep_file(axis)), &sweep.to_csv())?;
        }
    }
    Ok(())
}

fn single_table(report: &FailureReport) -> String {
    let mut out = format!("{:<14} {:>10} {:>12}\n", "Scenario", "Episodes", report.strategy);
    for s in &report.scenarios {
        let _ = writeln!(
            out,
            "{:<14} {:>10} {:>11.2}%",
            s.kind.label(),
            s.episodes,
            100.0 * s.failure_rate()
        );
    }
    out
}

fn sweep_file(axis: StressAxis) -> &'static str {
    match axis {
        StressAxis::Peak => "sweep_peak.csv",
        StressAxis::Mean => "sweep_mean.csv",
    }
}

fn run_sweep(
    cfg: &RunConfig,
    topology: &FeederTopology,
    axis: StressAxis,
    name: &str,
    policy: &mut dyn Controller,
    baseline: Option<&mut dyn Controller>,
    seed: u64,
) -> Result<RobustnessSweep, CliError> {
    let e = &cfg.evaluation;
    let levels =
        stress_levels(e.sweep_max_percent, e.sweep_step_percent).map_err(|e| CliError::Usage(e.to_string()))?;
    let focus = cfg.focus_relay();
    let mut rates = std::collections::BTreeMap::new();
    let run =
        |c: &mut dyn Controller| sweep_rates(topology, &cfg.episode, c, axis, &levels, focus, e.sweep_episodes, seed);
    rates.insert(name.to_string(), run(policy)?);
    if let Some(b) = baseline {
        rates.insert("Baseline".to_string(), run(b)?);
    }
    Ok(RobustnessSweep { axis, focus, rates })
}

pub fn baseline(cfg: &RunConfig, self_test: bool) -> Result<(), CliError> {
    let seed = cfg.require_seed()?;
    let topology = cfg.topology()?;
    if self_test {
        two_gaussian_self_test()?;
    }
    let b = &cfg.baseline;
    let samples = collect_samples(&topology, &cfg.episode, b.episodes, seed)?;
    let th = fit_threshold(&topology, &samples, b.weight_faulty, b.grading)?;
    let dir = cfg.output_dir.join("baseline");
    write(&dir.join("thresholds.toml"), &th.to_toml())?;
    write(
        &dir.join("densities.csv"),
        &density_csv(&samples, b.weight_faulty, b.density_points)?,
    )?;
    println!("relay  pickup (pu)  delay (steps)");
    for r in &th.relays {
        println!("{:>5}  {:>11.4}  {:>13}", r.id, r.pickup, r.delay_steps);
    }
    Ok(())
}

/// Crossing of two unit-spread Gaussians four apart, equal weights: the midpoint.
fn two_gaussian_self_test() -> Result<(), CliError> {
    let grid = |mean: f64| -> Vec<f64> {
        // evenly spaced quantiles of N(mean, 1) via a fine inverse-CDF table
        let n = 2000;
        let xs: Vec<f64> = (0..=16000).map(|k| -8.0 + k as f64 * 1e-3).collect();
        let mut cdf = Vec::with_capacity(xs.len());
        let mut acc = 0.0;
        for x in &xs {
            acc += (-0.5 * x * x).exp() * 1e-3 / (2.0 * std::f64::consts::PI).sqrt();
            cdf.push(acc);
        }
        (0..n)
            .map(|k| {
                let q = (k as f64 + 0.5) / n as f64;
                mean + xs[cdf.partition_point(|c| *c < q).min(xs.len() - 1)]
            })
            .collect()
    };
    let pre = Kde::new(&grid(0.0))?;
    let post = Kde::new(&grid(4.0))?;
    let x = density_crossing(&pre, &post, 1.0, RelayId(0))?;
    let residual = post.density(x) - pre.density(x);
    println!("self-test: crossing {x:.4} (expected 2), residual {residual:.2e}");
    if (x - 2.0).abs() > 0.05 || residual.abs() > 1e-6 {
        return Err(relaynet::Error::Parameter("two-Gaussian self-test failed".into()).into());
    }
    Ok(())
}

pub fn sweep(
    cfg: &RunConfig,
    axis: AxisArg,
    models: Option<PathBuf>,
    oracle: bool,
    baseline: Option<PathBuf>,
) -> Result<(), CliError> {
    let seed = cfg.require_seed()?;
    let topology = cfg.topology()?;
    let th_path = baseline.clone().unwrap_or_else(|| default_thresholds(cfg));
    let mut base = if baseline.is_some() || th_path.is_file() {
        Some(load_thresholds(&th_path, &topology)?)
    } else {
        None
    };
    let models = models_dir(cfg, models);
    let (name, mut policy): (&str, Option<Box<dyn Controller>>) = if oracle {
        ("Oracle", Some(Box::new(OracleController)))
    } else if models.is_dir() {
        ("RL", Some(Box::new(load_policies(&models, &topology)?)))
    } else {
        ("RL", None)
    };
    if policy.is_none() && base.is_none() {
        return Err(CliError::Usage(format!(
            "nothing to sweep: no models in {} and no thresholds at {}",
            models.display(),
            th_path.display()
        )));
    }
    let axes = match axis {
        AxisArg::Peak => vec![StressAxis::Peak],
        AxisArg::Mean => vec![StressAxis::Mean],
        AxisArg::Both => vec![StressAxis::Peak, StressAxis::Mean],
    };
    for axis in axes {
        let e = &cfg.evaluation;
        let levels =
            stress_levels(e.sweep_max_percent, e.sweep_step_percent).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut rates = std::collections::BTreeMap::new();
        let mut run = |c: &mut dyn Controller, label: &str| -> Result<(), CliError> {
            let r = sweep_rates(
                &topology,
                &cfg.episode,
                c,
                axis,
                &levels,
                cfg.focus_relay(),
                e.sweep_episodes,
                seed,
            )?;
            rates.insert(label.to_string(), r);
            Ok(())
        };
        if let Some(p) = policy.as_mut() {
            run(p.as_mut(), name)?;
        }
        if let Some(b) = base.as_mut() {
            run(b, "Baseline")?;
        }
        let sweep = RobustnessSweep {
            axis,
            focus: cfg.focus_relay(),
            rates,
        };
        let csv = sweep.to_csv();
        write(&cfg.output_dir.join("eval").join(sweep_file(axis)), &csv)?;
        println!("{axis:?} axis, relay {}:\n{csv}", cfg.focus_relay());
    }
    Ok(())
}

pub fn serve(cfg: &RunConfig, bind: &str) -> Result<(), CliError> {
    let topology = cfg.topology()?;
    let server = EnvServer::bind(bind, topology, cfg.episode.clone())
        .map_err(|e| CliError::Runtime(relaynet::Error::Usage(format!("cannot bind {bind}: {e}"))))?;
    let handle = server.shutdown_handle();
    ctrlc::set_handler(move || handle.shutdown())
        .map_err(|e| CliError::Runtime(relaynet::Error::Usage(format!("signal handler: {e}"))))?;
    eprintln!("serving on {}", server.local_addr()?);
    server.serve()?;
    eprintln!("server stopped");
    Ok(())
}

fn scenario_kind(s: ScenarioArg) -> ScenarioKind {
    match s {
        ScenarioArg::LocalFault => ScenarioKind::LocalFault,
        ScenarioArg::Backup => ScenarioKind::Backup,
        ScenarioArg::RemoteFault => ScenarioKind::RemoteFault,
        ScenarioArg::NoFault => ScenarioKind::NoFault,
    }
}

pub fn trace(
    cfg: &RunConfig,
    policy: PolicyArg,
    scenario: Option<ScenarioArg>,
    relay: u32,
    models: Option<PathBuf>,
    baseline: Option<PathBuf>,
    stdout: bool,
) -> Result<(), CliError> {
    let seed = cfg.require_seed()?;
    let topology = cfg.topology()?;
    let mut controller: Box<dyn Controller> = match policy {
        PolicyArg::Models => Box::new(load_policies(&models_dir(cfg, models), &topology)?),
        PolicyArg::Baseline => Box::new(load_thresholds(
            &baseline.unwrap_or_else(|| default_thresholds(cfg)),
            &topology,
        )?),
        PolicyArg::Oracle => Box::new(OracleController),
        PolicyArg::Null => Box::new(NullController),
    };
    let mut env = EpisodeEnv::new(topology.clone(), cfg.episode.clone())?;
    match scenario {
        Some(s) => {
            let kind = scenario_kind(s);
            let id = RelayId(relay);
            if !kind.test_relays(&topology).contains(&id) {
                return Err(CliError::Usage(format!("relay {id} does not qualify for {kind}")));
            }
            let plan = scenario_plan(&topology, &cfg.episode, kind, id, &mut ChaCha8Rng::seed_from_u64(seed))?;
            env.reset_with_plan(plan, seed)?;
        }
        None => {
            env.reset(seed)?;
        }
    }
    let trace = run_episode(&mut env, controller.as_mut())?;
    let csv = trace.to_csv();
    if stdout {
        print!("{csv}");
    } else {
        let path = cfg.output_dir.join("traces").join(format!("episode_{seed}.csv"));
        write(&path, &csv)?;
        println!("{}", path.display());
    }
    Ok(())
}
