use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use voltvar::eval::{self, EvalPolicy, VoltVarCurve};
use voltvar::feeder::{FeederModel, Injections};
use voltvar::profiles::{self, ProfileSet, SynthConfig};
use voltvar::trainer::{self, EnvFactory, SharedEnv, Stage, TrainConfig};

#[derive(Parser)]
#[command(name = "voltvar", version, about = "Two-stage multi-agent Volt-Var control lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one power flow and print bus voltages as CSV.
    Powerflow {
        #[command(flatten)]
        data: DataArgs,
        /// Profile step to solve; without it the feeder's nominal loads are used and PVs are off.
        #[arg(long)]
        t: Option<usize>,
    },
    /// Train stage 1 (independent agents) or stage 2 (cooperative magnitudes).
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Checkpoint directory. Stage 2 reads the stage-1 checkpoints from here.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        unfreeze_s1: bool,
    },
    /// Evaluate a policy greedily on whole days.
    Eval {
        /// Checkpoint directory, `conventional` or `do-nothing`.
        #[arg(long)]
        policy: String,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated day indices.
        #[arg(long, value_delimiter = ',', required = true)]
        days: Vec<usize>,
        /// Report event durations in minutes instead of control intervals.
        #[arg(long)]
        minutes: bool,
        /// Also export report.json, summary.csv and voltages.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Droop curve JSON for the conventional policy.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Retrain both stages for each action-cost weight and print a CSV table.
    SweepWcost {
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-export a saved report.json as CSV files.
    Export {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        minutes: bool,
        /// Step length used by `--minutes`.
        #[arg(long, default_value_t = profiles::DEFAULT_STEP_MINUTES)]
        step_minutes: u32,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Feeder JSON path, or `feeder13` / `feeder123` for the bundled models.
    #[arg(long, default_value = "feeder13")]
    feeder: String,
    /// Profile CSV path, or `synth` for generated profiles.
    #[arg(long, default_value = "synth")]
    profiles: String,
    #[arg(long, default_value_t = profiles::DEFAULT_STEP_MINUTES)]
    step_minutes: u32,
    /// Synthetic generator config JSON; flags below override its fields.
    #[arg(long)]
    synth_config: Option<PathBuf>,
    #[arg(long)]
    synth_days: Option<usize>,
    #[arg(long)]
    synth_seed: Option<u64>,
}

impl DataArgs {
    fn model(&self) -> Result<FeederModel> {
        FeederModel::load(&self.feeder).with_context(|| format!("loading feeder `{}`", self.feeder))
    }

    fn profiles(&self, model: &FeederModel) -> Result<ProfileSet> {
        if self.profiles == "synth" {
            let mut cfg = match &self.synth_config {
                Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => SynthConfig::default(),
            };
            cfg.step_minutes = self.step_minutes;
            if let Some(d) = self.synth_days {
                cfg.days = d;
            }
            if let Some(s) = self.synth_seed {
                cfg.seed = s;
            }
            Ok(profiles::synth_profiles(&cfg, model)?)
        } else {
            let text = read(Path::new(&self.profiles))?;
            Ok(profiles::load_profiles(&text, self.step_minutes)?)
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Full training config JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    w_cost: Option<f64>,
    #[arg(long)]
    a_th: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    train_days: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    test_days: Option<Vec<usize>>,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg: TrainConfig = match &self.config {
            Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => TrainConfig::default(),
        };
        if let Some(e) = self.episodes {
            cfg.episodes_per_stage = e;
            cfg.stage2_episodes = None;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.w_cost {
            cfg.env.reward.w_cost = w;
        }
        if let Some(a) = self.a_th {
            cfg.env.reward.a_th = a;
        }
        if let Some(w) = self.workers {
            cfg.parallel_workers = w;
        }
        if let Some(d) = &self.train_days {
            cfg.train_days = d.clone();
        }
        if let Some(d) = &self.test_days {
            cfg.test_days = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn powerflow(data: &DataArgs, t: Option<usize>) -> Result<()> {
    let model = data.model()?;
    let injections = match t {
        Some(t) => {
            let profiles = data.profiles(&model)?;
            let snap = profiles::snapshot_at(&profiles, &model, t)?;
            snap.injections(&model, &vec![0.0; model.pvs().len()])
        }
        None => {
            let mut inj = Injections::zeros(&model);
            for load in model.loads() {
                let k = model.bus_index(&load.bus).context("load on unknown bus")?;
                inj.add(k, -load.p_kw, -load.q_kvar);
            }
            inj
        }
    };
    let result = model.solve(&injections)?;
    println!("bus,voltage_pu");
    for (bus, v) in model.buses().iter().zip(&result.voltages) {
        println!("{bus},{v:.6}");
    }
    info!("converged in {} iterations, head P {:.1} kW Q {:.1} kVAR", result.iterations, result.feeder_head_p, result.feeder_head_q);
    Ok(())
}

fn train(stage: u8, data: &DataArgs, args: &TrainArgs, out: &Path, unfreeze_s1: bool) -> Result<()> {
    let mut cfg = args.config()?;
    cfg.unfreeze_s1 = unfreeze_s1;
    let model = data.model()?;
    let profiles = data.profiles(&model)?;
    let shared = SharedEnv::new(model, profiles, cfg.env.clone());
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if stage == 1 {
        let results = trainer::train_stage1_all(&shared, &cfg)?;
        let mut agents = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            let r = r.with_context(|| format!("stage 1 agent {i}"))?;
            write(&out.join(format!("stage1_agent{i}_log.csv")), &trainer::log_csv(&r.log))?;
            agents.push(r.agent);
        }
        trainer::write_checkpoints(out, Stage::S1, &agents, &cfg)?;
    } else {
        let n = shared.build(None)?.agent_count();
        let s1 = trainer::read_agents(out, Stage::S1, n).context("stage 2 needs stage-1 checkpoints in --out")?;
        let res = trainer::train_stage2(&shared, &s1, &cfg)?;
        write(&out.join("stage2_log.csv"), &trainer::log_csv(&res.log))?;
        if unfreeze_s1 {
            for (i, a) in res.s1_agents.iter().enumerate() {
                write(&out.join(trainer::s1_checkpoint_name(i)), &a.to_checkpoint())?;
            }
        }
        trainer::write_checkpoints(out, Stage::S2, &res.agents, &cfg)?;
    }
    println!("checkpoints written to {}", out.display());
    Ok(())
}

fn eval_cmd(policy: &str, data: &DataArgs, days: &[usize], minutes: bool, out: Option<&Path>, curve: Option<&Path>) -> Result<()> {
    let model = data.model()?;
    let profiles = data.profiles(&model)?;
    let (policy, env_cfg) = match policy {
        "do-nothing" => (EvalPolicy::DoNothing, Default::default()),
        "conventional" => {
            let c: VoltVarCurve = match curve {
                Some(p) => serde_json::from_str(&read(p)?)?,
                None => VoltVarCurve::default(),
            };
            c.validate()?;
            (EvalPolicy::Conventional(c), Default::default())
        }
        dir => {
            let dir = Path::new(dir);
            let manifest: trainer::PolicyManifest = serde_json::from_str(&read(&dir.join("policy.json"))?)?;
            (trainer::load_policy(dir)?, manifest.train.env)
        }
    };
    let step_minutes = profiles.step_minutes;
    let shared = SharedEnv::new(model, profiles, env_cfg);
    let mut env = shared.build(None)?;
    let report = eval::evaluate(&policy, &mut env, days)?;
    let minutes = minutes.then_some(step_minutes);
    print!("{}", eval::summary_csv(&report, minutes)?);
    for f in &report.failed {
        log::warn!("episode failed: {f:?}");
    }
    if let Some(dir) = out {
        eval::export_report(&report, dir, minutes)?;
    }
    Ok(())
}

fn sweep(values: &[f64], data: &DataArgs, args: &TrainArgs, out: Option<&Path>) -> Result<()> {
    let cfg = args.config()?;
    let model = data.model()?;
    let profiles = data.profiles(&model)?;
    let shared = SharedEnv::new(model, profiles, cfg.env.clone());
    let rows = eval::sweep_wcost(values, &shared, &cfg)?;
    let table = eval::sweep_csv(&rows);
    print!("{table}");
    if let Some(p) = out {
        write(p, &table)?;
    }
    if rows.iter().all(|r| r.error.is_some()) {
        bail!("every sweep cell failed");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Powerflow { data, t } => powerflow(&data, t),
        Command::Train { stage, data, train: args, out, unfreeze_s1 } => train(stage, &data, &args, &out, unfreeze_s1),
        Command::Eval { policy, data, days, minutes, out, curve } => {
            eval_cmd(&policy, &data, &days, minutes, out.as_deref(), curve.as_deref())
        }
        Command::SweepWcost { values, data, train: args, out } => sweep(&values, &data, &args, out.as_deref()),
        Command::Export { report, out, minutes, step_minutes } => {
            let report = eval::read_report(&report)?;
            eval::export_report(&report, &out, minutes.then_some(step_minutes))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
