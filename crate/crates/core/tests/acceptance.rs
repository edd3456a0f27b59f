//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line each; exits nonzero if any criterion fails.
//!
//! Set `VOLTVAR_ACCEPTANCE_QUICK=1` to skip the two training-heavy
//! criteria (reported as `SKIP`).

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voltvar::env::{ActionVector, EnvConfig, VvcEnv};
use voltvar::eval::{detect_events, detect_node_events, evaluate, event_statistics, EvalPolicy, EvalReport};
use voltvar::feeder::FeederModel;
use voltvar::neuro::{Activation, Mlp};
use voltvar::profiles::{synth_profiles, EpisodeWindow, ProfileSet, SynthConfig};
use voltvar::reward::{
    action_cost, contribution_factors, do_nothing_reward, stage1_reward, stage2_reward, system_reward, RewardConfig,
};
use voltvar::trainer::{self, compose_action, SharedEnv, TrainConfig};

const DESK_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const DESK_WALL_LIMIT: Duration = Duration::from_secs(15 * 60);

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- 1

fn criterion_powerflow() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = if case % 2 == 0 { 2 } else { 3 };
        let model = common::random_feeder(&mut rng, n);
        let inj = common::random_injections(&mut rng, &model);
        let sweep = model.solve(&inj).unwrap().voltages;
        let newton = common::newton_voltages(&model, &inj);
        worst = sweep.iter().zip(&newton).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        if n == 2 {
            // The two-bus case also has a closed form.
            let line = &model.lines()[0];
            let load = -inj.0[1] / model.base_power();
            let exact = common::two_bus_voltage(model.source_voltage(), line.r_pu, line.x_pu, load.re, load.im);
            worst = worst.max((sweep[1] - exact).abs());
        }
    }

    let big = FeederModel::bundled_123();
    let inj = common::nominal_injections(&big);
    let res = big.solve(&inj).unwrap();
    let reps = 200;
    let t0 = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(big.solve(std::hint::black_box(&inj)).unwrap());
    }
    let per_solve = t0.elapsed() / reps;
    let ok = worst < 1e-8 && res.converged && res.iterations <= 50 && res.mismatch < 1e-10 && per_solve <= Duration::from_millis(1);
    verdict(
        ok,
        format!(
            "max |dV| {worst:.2e} p.u. (tol 1e-8); 123-node: {} sweeps, mismatch {:.1e}, {:.3} ms/solve",
            res.iterations,
            res.mismatch,
            per_solve.as_secs_f64() * 1e3
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let depth = rng.random_range(1..4);
        let mut sizes = vec![rng.random_range(1..6)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..9));
        }
        let net = Mlp::new(&sizes, Activation::Tanh, Activation::Tanh, 0.5, &mut rng);
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let u: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |n: &Mlp| -> f64 { n.forward(&x).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum() };
        let (grads, _) = net.gradients(&x, &u).unwrap();
        let analytic: Vec<f64> = grads.tensors().flat_map(|t| t.to_vec()).collect();
        let lens: Vec<usize> = net.tensors().map(|t| t.len()).collect();
        let mut probe = net.clone();
        let mut idx = 0;
        for (ti, len) in lens.into_iter().enumerate() {
            for k in 0..len {
                let orig = probe.tensors().nth(ti).unwrap()[k];
                probe.tensors_mut().nth(ti).unwrap()[k] = orig + h;
                let up = f(&probe);
                probe.tensors_mut().nth(ti).unwrap()[k] = orig - h;
                let down = f(&probe);
                probe.tensors_mut().nth(ti).unwrap()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[idx];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
                idx += 1;
            }
        }
    }
    verdict(worst < 1e-4, format!("50 networks, max relative error {worst:.2e} (tol 1e-4)"))
}

// ---------------------------------------------------------------- 3

fn criterion_rewards() -> Verdict {
    let cfg = RewardConfig::default();
    let heavy = RewardConfig { w_cost: 0.01, ..cfg };
    let cases: [(f64, f64); 15] = [
        (system_reward(0.75, 0.70), 0.05),
        (system_reward(0.3, 0.3), 0.0),
        (system_reward(0.70, 0.75), -0.05),
        (action_cost(&cfg, 0.5), 0.0005),
        (action_cost(&cfg, 0.0), 0.0),
        (action_cost(&heavy, -1.0), 0.01),
        (do_nothing_reward(&cfg, 0.01), 1e-3),
        (do_nothing_reward(&cfg, 0.5), 0.0),
        (do_nothing_reward(&cfg, 0.05), 1e-3),
        (stage1_reward(0.05, 0.0005, 0.0), 0.0495),
        (stage1_reward(0.0, 0.0, 1e-3), 1e-3),
        (stage1_reward(-0.02, 0.001, 0.0), -0.021),
        (stage2_reward(0.5, 0.05, 0.001), 0.024),
        (stage2_reward(0.0, 0.37, 0.0), 0.0),
        (stage2_reward(1.0, -0.1, 0.002), -0.102),
    ];
    let mut worst = cases.iter().map(|(got, want)| (got - want).abs()).fold(0.0, f64::max);
    for (input, want) in [
        (vec![2.0, 1.0, 1.0], vec![0.5, 0.25, 0.25]),
        (vec![0.0, 0.0], vec![0.0, 0.0]),
        (vec![3.0], vec![1.0]),
    ] {
        for (g, w) in contribution_factors(&input).iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut conservation_failures = 0;
    for _ in 0..100_000 {
        let n = rng.random_range(1..8);
        let a: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(-1.0..1.0) })
            .collect();
        let sum: f64 = contribution_factors(&a).iter().sum();
        let expected = if a.iter().all(|x| *x == 0.0) { 0.0 } else { 1.0 };
        if (sum - expected).abs() > 1e-12 {
            conservation_failures += 1;
        }
    }
    verdict(
        worst <= 1e-12 && conservation_failures == 0,
        format!("hand cases max error {worst:.1e} (tol 1e-12); CF conservation failures {conservation_failures}/100000"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_composition() -> Verdict {
    let a_th = 0.05;
    let mut violations = 0;
    let mut cells = 0;
    for i in -20..=20 {
        let a1 = i as f64 * 0.05;
        for j in 0..=10 {
            let m = j as f64 * 0.1;
            let a = compose_action(a1, m, a_th);
            cells += 1;
            let ok = if a1.abs() <= a_th + 1e-12 {
                a == 0.0
            } else {
                a.abs() == m && (m == 0.0 || a.signum() == a1.signum())
            };
            if !ok {
                violations += 1;
            }
        }
    }
    verdict(violations == 0, format!("{cells} grid cells, {violations} violations"))
}

// ---------------------------------------------------------------- 5

fn criterion_do_nothing_parity() -> Verdict {
    let synth = SynthConfig { days: 2, ..Default::default() };
    let mut feeders: Vec<(&str, FeederModel, ProfileSet)> = Vec::new();
    for (name, model) in [("feeder13", FeederModel::bundled_13()), ("feeder123", FeederModel::bundled_123())] {
        let profiles = synth_profiles(&synth, &model).unwrap();
        feeders.push((name, model, profiles));
    }
    feeders.push(("toy", common::toy_feeder(), common::toy_profiles(2)));
    let mut steps = 0;
    let mut nonzero = 0;
    for (_, model, profiles) in feeders {
        let mut env = VvcEnv::new(Arc::new(model), Arc::new(profiles), EnvConfig::default()).unwrap();
        let zeros = ActionVector::zeros(env.agent_count());
        let len = env.config().episode_length;
        let mut start = 0;
        while start + len < env.profiles().horizon {
            env.reset(EpisodeWindow::new(start)).unwrap();
            for _ in 0..len {
                let out = env.step(&zeros).unwrap();
                steps += 1;
                if out.r_s() != 0.0 {
                    nonzero += 1;
                }
            }
            start += len;
        }
    }
    verdict(nonzero == 0, format!("{steps} all-zero steps on 3 feeders, {nonzero} with r_s != 0"))
}

// ---------------------------------------------------------------- 6 and 7

/// Training setup for the desk-scale runs on the bundled 13-node feeder.
fn desk_config(seed: u64, w_cost: f64) -> TrainConfig {
    let mut cfg = TrainConfig { episodes_per_stage: 3000, stage2_episodes: Some(1500), seed, ..Default::default() };
    cfg.env.reward.w_cost = w_cost;
    cfg.ddpg.actor_lr = 1e-3;
    cfg.updates_per_step = 2;
    cfg
}

struct DeskRun {
    dn: f64,
    s1_score: f64,
    s1_q: f64,
    s2_score: f64,
    s2_q: f64,
    wall: Duration,
}

fn desk_run(shared: &SharedEnv, seed: u64, w_cost: f64) -> Result<DeskRun, String> {
    let cfg = desk_config(seed, w_cost);
    let mut env_shared = shared.clone();
    env_shared.config = cfg.env.clone();
    let t0 = Instant::now();
    let res = trainer::train_two_stage(&env_shared, &cfg).map_err(|e| e.to_string())?;
    let wall = t0.elapsed();
    let mut env = VvcEnv::new(env_shared.model.clone(), env_shared.profiles.clone(), cfg.env.clone()).map_err(|e| e.to_string())?;
    let run = |p: EvalPolicy, env: &mut VvcEnv| -> Result<EvalReport, String> {
        evaluate(&p, env, &cfg.test_days).map_err(|e| e.to_string())
    };
    let dn = run(EvalPolicy::DoNothing, &mut env)?;
    let s1 = run(EvalPolicy::Stage1(res.stage1_policy(&cfg)), &mut env)?;
    let s2 = run(EvalPolicy::Composite(res.composite(&cfg)), &mut env)?;
    Ok(DeskRun {
        dn: dn.mean_score,
        s1_score: s1.mean_score,
        s1_q: s1.sum_q_total,
        s2_score: s2.mean_score,
        s2_q: s2.sum_q_total,
        wall,
    })
}

fn desk_env() -> SharedEnv {
    let model = FeederModel::bundled_13();
    let profiles = synth_profiles(&SynthConfig::default(), &model).unwrap();
    SharedEnv::new(model, profiles, EnvConfig::default())
}

fn criteria_desk(quick: bool) -> (Verdict, Verdict) {
    if quick {
        let why = "skipped by VOLTVAR_ACCEPTANCE_QUICK".to_string();
        return (Verdict::Skip(why.clone()), Verdict::Skip(why));
    }
    let shared = desk_env();
    let (mut pass6, mut pass7) = (0, 0);
    let (mut notes6, mut notes7) = (Vec::new(), Vec::new());
    for seed in DESK_SEEDS {
        let low = desk_run(&shared, seed, 0.001);
        let high = desk_run(&shared, seed, 0.01);
        match &low {
            Ok(r) => {
                let a = r.s1_score - r.dn >= 0.002;
                let b = r.s2_score >= r.s1_score - 0.001 && r.s2_q <= 0.75 * r.s1_q;
                let fast = r.wall <= DESK_WALL_LIMIT;
                if a && b && fast {
                    pass6 += 1;
                }
                notes6.push(format!(
                    "seed {seed}: dn {:.5} s1 {:.5} s2 {:.5} Q {:.0}->{:.0} ({:.0}s) {}{}{}",
                    r.dn,
                    r.s1_score,
                    r.s2_score,
                    r.s1_q,
                    r.s2_q,
                    r.wall.as_secs_f64(),
                    if a { "a" } else { "-" },
                    if b { "b" } else { "-" },
                    if fast { "t" } else { "-" },
                ));
            }
            Err(e) => notes6.push(format!("seed {seed}: training failed: {e}")),
        }
        match (&low, &high) {
            (Ok(l), Ok(h)) => {
                let ok = h.s2_q <= 0.5 * l.s2_q;
                if ok {
                    pass7 += 1;
                }
                notes7.push(format!("seed {seed}: Q {:.0} vs {:.0} ({:.0}%)", h.s2_q, l.s2_q, 100.0 * h.s2_q / l.s2_q.max(1e-9)));
            }
            (_, Err(e)) | (Err(e), _) => notes7.push(format!("seed {seed}: training failed: {e}")),
        }
    }
    let need = DESK_SEEDS.len() - 1;
    (
        verdict(pass6 >= need, format!("{pass6}/{} seeds pass (need {need}); {}", DESK_SEEDS.len(), notes6.join("; "))),
        verdict(pass7 >= need, format!("{pass7}/{} seeds pass (need {need}); {}", DESK_SEEDS.len(), notes7.join("; "))),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_events() -> Verdict {
    let mut problems = Vec::new();
    let fixture = detect_node_events("n", &[1.02, 1.04, 1.05, 1.02, 1.00, 1.02], 1.01, 1.03);
    let durations: Vec<usize> = fixture.iter().map(|e| e.duration).collect();
    if durations != [2, 1] {
        problems.push(format!("fixture durations {durations:?}"));
    }
    let s = event_statistics(&fixture);
    if s.count != 2 || s.mean != Some(1.5) || s.max_duration != 2.0 || s.integration_sum != 3.0 {
        problems.push(format!("fixture stats {s:?}"));
    }
    let flat = event_statistics(&detect_node_events("n", &[1.0; 4], 1.01, 1.03));
    let flat_events = detect_node_events("n", &[1.0; 4], 1.01, 1.03);
    if flat.count != 1 || flat_events[0].duration != 4 {
        problems.push("all-out-of-band trace".into());
    }
    if !detect_node_events("n", &[1.02; 5], 1.01, 1.03).is_empty() {
        problems.push("in-band trace".into());
    }
    let empty = event_statistics(&[]);
    if empty.count != 0 || empty.integration_sum != 0.0 || empty.mean.is_some() {
        problems.push("empty stats".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut partition_failures = 0;
    for _ in 0..10_000 {
        let nodes: Vec<String> = (0..rng.random_range(1..4)).map(|k| format!("n{k}")).collect();
        let len = rng.random_range(1..40);
        let traces: Vec<Vec<f64>> = nodes.iter().map(|_| (0..len).map(|_| rng.random_range(0.99..1.05)).collect()).collect();
        let events = detect_events(&nodes, &traces, 1.01, 1.03);
        let out_of_band = traces.iter().flatten().filter(|v| **v < 1.01 || **v > 1.03).count();
        let stats = event_statistics(&events);
        if events.iter().map(|e| e.duration).sum::<usize>() != out_of_band || stats.integration_sum != out_of_band as f64 {
            partition_failures += 1;
        }
    }
    if partition_failures > 0 {
        problems.push(format!("partition failed on {partition_failures} traces"));
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            "fixtures exact; partition holds on 10000 random traces".into()
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 9

fn criterion_determinism() -> Verdict {
    let shared = desk_env();
    let mut cfg = TrainConfig { episodes_per_stage: 40, seed: 17, ..Default::default() };
    cfg.ddpg.warmup = 64;
    cfg.ddpg.batch_size = 32;
    let stage1 = |workers: usize| -> Vec<String> {
        let c = TrainConfig { parallel_workers: workers, ..cfg.clone() };
        trainer::collect_stage1(trainer::train_stage1_all(&shared, &c).unwrap())
            .unwrap()
            .into_iter()
            .map(|r| r.agent.to_checkpoint())
            .collect()
    };
    let (a, b, parallel) = (stage1(1), stage1(1), stage1(2));
    let s2 = |s1: &[String]| -> Vec<String> {
        let agents: Vec<_> = s1.iter().map(|c| voltvar::neuro::DdpgAgent::from_checkpoint(c).unwrap()).collect();
        trainer::train_stage2(&shared, &agents, &cfg).unwrap().agents.iter().map(|a| a.to_checkpoint()).collect()
    };
    let repeat = a == b && s2(&a) == s2(&b);
    let workers = a == parallel;
    verdict(
        repeat && workers,
        format!("repeat runs identical: {repeat}; 1 vs 2 workers identical: {workers}"),
    )
}

fn main() {
    let quick = std::env::var("VOLTVAR_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1");
    let mut lines = Vec::new();
    let mut record = |id: &str, name: &str, v: Verdict| {
        let (tag, detail, failed) = match v {
            Verdict::Pass(d) => ("PASS", d, false),
            Verdict::Fail(d) => ("FAIL", d, true),
            Verdict::Skip(d) => ("SKIP", d, false),
        };
        let line = format!("criterion {id} [{name}]: {tag} - {detail}");
        println!("{line}");
        lines.push(failed);
    };
    record("1", "power-flow oracle", criterion_powerflow());
    record("2", "gradient checks", criterion_gradients());
    record("3", "reward arithmetic", criterion_rewards());
    record("4", "action composition", criterion_composition());
    record("5", "do-nothing parity", criterion_do_nothing_parity());
    record("8", "event statistics", criterion_events());
    record("9", "determinism", criterion_determinism());
    let (six, seven) = criteria_desk(quick);
    record("6", "desk two-stage reproduction", six);
    record("7", "w_cost sensitivity", seven);
    let failed = lines.iter().filter(|f| **f).count();
    println!("acceptance: {} criteria, {failed} failed", lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
