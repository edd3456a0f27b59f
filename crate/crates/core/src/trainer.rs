//! Two-stage progressive training.
//!
//! Stage 1 trains every agent alone on the feeder (peers held at zero
//! reactive power) with a three-way executed action: consume, idle or
//! generate at a fixed magnitude. Stage 2 freezes those policies as polarity
//! gates and trains a second actor per agent that only chooses the magnitude,
//! with the system reward split by contribution.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ActionVector, EnvConfig, EnvError, ObsScope, VvcEnv};
use crate::eval::{self, EvalPolicy};
use crate::feeder::FeederModel;
use crate::neuro::{DdpgAgent, DdpgConfig, Mlp, NeuroError, ReplayBuffer, Transition};
use crate::profiles::{ProfileError, ProfileSet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Neuro(#[from] NeuroError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("agent {agent} failed: {reason}")]
    AgentFailed { agent: usize, reason: String },
    #[error("evaluation failed: {0}")]
    Eval(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes_per_stage: usize,
    /// Overrides `episodes_per_stage` for stage 2 when set.
    pub stage2_episodes: Option<usize>,
    pub seed: u64,
    pub parallel_workers: usize,
    /// Greedy evaluation on the test days every this many episodes (0 = never).
    pub eval_every: usize,
    pub env: EnvConfig,
    pub ddpg: DdpgConfig,
    pub train_days: Vec<usize>,
    pub test_days: Vec<usize>,
    /// Normalized magnitude executed by a non-idle stage-1 action.
    pub q_fix: f64,
    /// Keep updating the stage-1 actors during stage 2.
    pub unfreeze_s1: bool,
    pub updates_per_step: usize,
    /// Probability of a stage-1 action drawn uniformly from the executed
    /// levels, decayed linearly from the first to the second value. Gaussian
    /// noise on a confident actor rarely crosses into another level, and a
    /// uniform raw action hits the idle band only `a_th` of the time.
    pub level_explore: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes_per_stage: 1000,
            stage2_episodes: None,
            seed: 0,
            parallel_workers: 1,
            eval_every: 0,
            env: EnvConfig::default(),
            ddpg: DdpgConfig::default(),
            train_days: vec![0, 1, 2, 3, 4, 5],
            test_days: vec![6, 7],
            q_fix: 1.0,
            unfreeze_s1: false,
            updates_per_step: 1,
            level_explore: (0.2, 0.02),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.episodes_per_stage == 0 || self.stage2_episodes == Some(0) {
            return Err(TrainError::Config("episodes must be >= 1".into()));
        }
        if self.parallel_workers == 0 {
            return Err(TrainError::Config("parallel_workers must be >= 1".into()));
        }
        if self.train_days.is_empty() {
            return Err(TrainError::Config("train_days is empty".into()));
        }
        let (e0, e1) = self.level_explore;
        if !((0.0..=1.0).contains(&e0) && (0.0..=1.0).contains(&e1)) {
            return Err(TrainError::Config("level_explore probabilities must lie in [0, 1]".into()));
        }
        if !(self.q_fix > 0.0 && self.q_fix <= 1.0) {
            return Err(TrainError::Config("q_fix must lie in (0, 1]".into()));
        }
        self.env.validate().map_err(TrainError::Config)?;
        self.ddpg.validate().map_err(TrainError::Config)?;
        Ok(())
    }

    pub fn stage2_episode_count(&self) -> usize {
        self.stage2_episodes.unwrap_or(self.episodes_per_stage)
    }
}

/// Produces fresh environment instances; one per training worker.
pub trait EnvFactory: Sync {
    /// `agent` names the stage-1 agent the instance is for, `None` in stage 2.
    fn build(&self, agent: Option<usize>) -> Result<VvcEnv, EnvError>;
}

/// Environments over a shared feeder and profile set.
#[derive(Debug, Clone)]
pub struct SharedEnv {
    pub model: Arc<FeederModel>,
    pub profiles: Arc<ProfileSet>,
    pub config: EnvConfig,
}

impl SharedEnv {
    pub fn new(model: FeederModel, profiles: ProfileSet, config: EnvConfig) -> Self {
        Self { model: Arc::new(model), profiles: Arc::new(profiles), config }
    }
}

impl EnvFactory for SharedEnv {
    fn build(&self, _agent: Option<usize>) -> Result<VvcEnv, EnvError> {
        VvcEnv::new(self.model.clone(), self.profiles.clone(), self.config.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    S1,
    S2,
}

/// Per-agent greedy actors of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePolicy {
    pub stage: Stage,
    pub actors: Vec<Mlp>,
    pub a_th: f64,
    pub q_fix: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositePolicy {
    pub s1: StagePolicy,
    pub s2: StagePolicy,
}

impl CompositePolicy {
    pub fn new(s1: StagePolicy, s2: StagePolicy) -> Result<Self, TrainError> {
        if s1.stage != Stage::S1 || s2.stage != Stage::S2 {
            return Err(TrainError::Config("composite policy needs an S1 and an S2 stage".into()));
        }
        if s1.actors.len() != s2.actors.len() {
            return Err(TrainError::Config(format!(
                "stage rosters differ: {} vs {} agents",
                s1.actors.len(),
                s2.actors.len()
            )));
        }
        Ok(Self { s1, s2 })
    }
}

/// Executed stage-1 action: idle inside the threshold, otherwise a fixed
/// magnitude with the actor's sign.
pub fn discretize(a: f64, a_th: f64, q_fix: f64) -> f64 {
    if a.abs() <= a_th {
        0.0
    } else {
        q_fix.copysign(a)
    }
}

/// Stage-2 actor output in [-1, 1] mapped to a magnitude in [0, 1].
pub fn s2_magnitude(y: f64) -> f64 {
    ((y + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Stage-1 output picks the polarity and gates, stage 2 supplies the magnitude.
pub fn compose_action(a_s1: f64, a_s2_magnitude: f64, a_th: f64) -> f64 {
    if a_s1.abs() > a_th {
        a_s2_magnitude.copysign(a_s1)
    } else {
        0.0
    }
}

/// Greedy output of agent `agent`'s actor in `policy`. For stage 2 this is
/// the magnitude in [0, 1]; for stage 1 the raw polarity signal.
pub fn act_greedy(policy: &StagePolicy, agent: usize, features: &[f64]) -> Result<f64, NeuroError> {
    let y = policy.actors[agent].forward(features)?[0];
    Ok(match policy.stage {
        Stage::S1 => y,
        Stage::S2 => s2_magnitude(y),
    })
}

/// Composite greedy action of one agent given its stage-1 and stage-2 features.
pub fn act_composite(
    policy: &CompositePolicy,
    agent: usize,
    s1_features: &[f64],
    s2_features: &[f64],
) -> Result<f64, NeuroError> {
    let a_s1 = act_greedy(&policy.s1, agent, s1_features)?;
    if a_s1.abs() <= policy.s1.a_th {
        return Ok(0.0);
    }
    let m = act_greedy(&policy.s2, agent, s2_features)?;
    Ok(compose_action(a_s1, m, policy.s1.a_th))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub mean_r: f64,
    pub eval_score: Option<f64>,
    /// Σ |Q| (kVAR) executed by the trained agent(s) over the episode.
    pub sum_q: f64,
}

pub fn log_csv(log: &[EpisodeLog]) -> String {
    let mut out = String::from("episode,mean_r,eval_score,sum_q\n");
    for e in log {
        let eval = e.eval_score.map_or(String::new(), |s| s.to_string());
        out.push_str(&format!("{},{},{},{}\n", e.episode, e.mean_r, eval, e.sum_q));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Stage1Result {
    pub agent_index: usize,
    pub agent: DdpgAgent,
    pub log: Vec<EpisodeLog>,
}

#[derive(Debug, Clone)]
pub struct Stage2Result {
    pub agents: Vec<DdpgAgent>,
    /// Stage-1 agents, updated only when `unfreeze_s1` is set.
    pub s1_agents: Vec<DdpgAgent>,
    pub log: Vec<EpisodeLog>,
}

fn agent_seed(seed: u64, agent: usize) -> u64 {
    seed.wrapping_add(agent as u64)
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

fn progress(ep: usize, episodes: usize) -> f64 {
    if episodes <= 1 {
        1.0
    } else {
        ep as f64 / (episodes - 1) as f64
    }
}

fn ready(buffer: &ReplayBuffer, cfg: &DdpgConfig) -> bool {
    buffer.len() >= cfg.warmup.max(cfg.batch_size)
}

fn learn(agent: &mut DdpgAgent, buffer: &mut ReplayBuffer, cfg: &TrainConfig) -> Result<(), TrainError> {
    if !ready(buffer, &cfg.ddpg) {
        return Ok(());
    }
    for _ in 0..cfg.updates_per_step.max(1) {
        let batch = buffer.sample(cfg.ddpg.batch_size)?;
        agent.update(&batch)?;
    }
    Ok(())
}

/// Actor outputs that execute as the three stage-1 levels.
const LEVEL_ANCHORS: [f64; 3] = [-1.0, 0.0, 1.0];

/// Stage-1 learning step: the critic only sees the three executed levels.
fn learn_levels(agent: &mut DdpgAgent, buffer: &mut ReplayBuffer, cfg: &TrainConfig) -> Result<(), TrainError> {
    if !ready(buffer, &cfg.ddpg) {
        return Ok(());
    }
    let (a_th, q_fix) = (cfg.env.reward.a_th, cfg.q_fix);
    let execute = |y: f64| discretize(y, a_th, q_fix);
    for _ in 0..cfg.updates_per_step.max(1) {
        let batch = buffer.sample(cfg.ddpg.batch_size)?;
        agent.update_on_levels(&batch, &LEVEL_ANCHORS, &[-q_fix, 0.0, q_fix], &execute)?;
    }
    Ok(())
}

pub fn stage1_policy(agents: &[DdpgAgent], cfg: &TrainConfig) -> StagePolicy {
    StagePolicy {
        stage: Stage::S1,
        actors: agents.iter().map(|a| a.actor.clone()).collect(),
        a_th: cfg.env.reward.a_th,
        q_fix: cfg.q_fix,
    }
}

pub fn stage2_policy(agents: &[DdpgAgent], cfg: &TrainConfig) -> StagePolicy {
    StagePolicy {
        stage: Stage::S2,
        actors: agents.iter().map(|a| a.actor.clone()).collect(),
        a_th: cfg.env.reward.a_th,
        q_fix: cfg.q_fix,
    }
}

/// Trains agent `agent_index` alone; every other inverter stays at Q = 0.
pub fn train_stage1(
    factory: &dyn EnvFactory,
    agent_index: usize,
    cfg: &TrainConfig,
) -> Result<Stage1Result, TrainError> {
    cfg.validate()?;
    let mut env = factory.build(Some(agent_index))?;
    let n = env.agent_count();
    if agent_index >= n {
        return Err(TrainError::Config(format!("agent {agent_index} out of range for {n} PV farms")));
    }
    let seed = agent_seed(cfg.seed, agent_index);
    let mut agent = DdpgAgent::new(env.obs_dim(ObsScope::Own), 1, cfg.ddpg.clone(), seed)?;
    let mut buffer = ReplayBuffer::new(cfg.ddpg.buffer_capacity, sub_seed(seed, 1));
    let mut window_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 2));
    let mut explore_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 3));
    let (a_th, q_limit) = (cfg.env.reward.a_th, env.q_limits()[agent_index]);
    let episodes = cfg.episodes_per_stage;
    let mut log = Vec::with_capacity(episodes);

    for ep in 0..episodes {
        let p = progress(ep, episodes);
        let sigma = cfg.ddpg.noise_at(p);
        let explore = cfg.level_explore.0 + (cfg.level_explore.1 - cfg.level_explore.0) * p;
        let window = env.profiles().sample_window(&cfg.train_days, cfg.env.episode_length, &mut window_rng)?;
        if let Err(e) = env.reset(window) {
            warn!("agent {agent_index}: skipping episode {ep}: {e}");
            continue;
        }
        let mut obs = env.features(agent_index, ObsScope::Own);
        let (mut total_r, mut sum_q, mut steps) = (0.0, 0.0, 0usize);
        loop {
            let raw = if ready(&buffer, &cfg.ddpg) && explore_rng.random::<f64>() >= explore {
                agent.act_noisy(&obs, sigma)?
            } else {
                vec![LEVEL_ANCHORS[explore_rng.random_range(0..LEVEL_ANCHORS.len())]]
            };
            let mut joint = ActionVector::zeros(n);
            joint.0[agent_index] = discretize(raw[0], a_th, cfg.q_fix);
            let out = match env.step(&joint) {
                Ok(o) => o,
                Err(e) => {
                    warn!("agent {agent_index}: aborting episode {ep}: {e}");
                    break;
                }
            };
            let reward = out.rewards[agent_index].r1;
            let next_obs = env.features(agent_index, ObsScope::Own);
            // The critic is fitted on the executed level, not the raw output.
            let executed = vec![joint.0[agent_index]];
            buffer.push(Transition { obs, action: executed, reward, next_obs: next_obs.clone(), done: out.done });
            learn_levels(&mut agent, &mut buffer, cfg)?;
            total_r += reward;
            sum_q += joint.0[agent_index].abs() * q_limit;
            steps += 1;
            obs = next_obs;
            if out.done {
                break;
            }
        }
        let eval_score = if cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0 && !cfg.test_days.is_empty() {
            let policy = EvalPolicy::Individual {
                agent: agent_index,
                actor: agent.actor.clone(),
                a_th,
                q_fix: cfg.q_fix,
            };
            let report = eval::evaluate(&policy, &mut env, &cfg.test_days)
                .map_err(|e| TrainError::Eval(e.to_string()))?;
            Some(report.mean_score)
        } else {
            None
        };
        log.push(EpisodeLog { episode: ep, mean_r: total_r / steps.max(1) as f64, eval_score, sum_q });
        if (ep + 1) % 100 == 0 {
            debug!("stage 1 agent {agent_index}: episode {} mean_r {:.5}", ep + 1, total_r / steps.max(1) as f64);
        }
    }
    Ok(Stage1Result { agent_index, agent, log })
}

/// Trains every agent's stage-1 policy, up to `parallel_workers` at a time.
/// Each slot holds that agent's result; a failure never hides the others.
pub fn train_stage1_all(
    factory: &dyn EnvFactory,
    cfg: &TrainConfig,
) -> Result<Vec<Result<Stage1Result, TrainError>>, TrainError> {
    cfg.validate()?;
    let n = factory.build(None)?.agent_count();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Stage1Result, TrainError>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let run_one = |i: usize| {
        catch_unwind(AssertUnwindSafe(|| train_stage1(factory, i, cfg))).unwrap_or_else(|panic| {
            let reason = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "worker panicked".into());
            Err(TrainError::AgentFailed { agent: i, reason })
        })
    };
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= n {
            break;
        }
        let res = run_one(i);
        if let Err(e) = &res {
            warn!("stage 1 agent {i} failed: {e}");
        }
        slots.lock().expect("slot lock")[i] = Some(res);
    };
    let workers = cfg.parallel_workers.min(n).max(1);
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(&worker);
            }
        });
    }
    Ok(slots
        .into_inner()
        .expect("slot lock")
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.unwrap_or(Err(TrainError::AgentFailed { agent: i, reason: "not run".into() })))
        .collect())
}

/// Collects stage-1 results, failing if any agent failed.
pub fn collect_stage1(results: Vec<Result<Stage1Result, TrainError>>) -> Result<Vec<Stage1Result>, TrainError> {
    results.into_iter().collect()
}

/// Cooperative training of the magnitude actors on top of the stage-1 gates.
pub fn train_stage2(
    factory: &dyn EnvFactory,
    s1_agents: &[DdpgAgent],
    cfg: &TrainConfig,
) -> Result<Stage2Result, TrainError> {
    cfg.validate()?;
    let mut env = factory.build(None)?;
    let n = env.agent_count();
    if s1_agents.len() != n {
        return Err(TrainError::Config(format!(
            "stage-1 policies cover {} agents, feeder has {n}",
            s1_agents.len()
        )));
    }
    let mut s1: Vec<DdpgAgent> = s1_agents.to_vec();
    let s2_seed = |i: usize| sub_seed(agent_seed(cfg.seed, i), 1000);
    let mut agents: Vec<DdpgAgent> = (0..n)
        .map(|i| DdpgAgent::new(env.obs_dim(ObsScope::Joint), 1, cfg.ddpg.clone(), s2_seed(i)))
        .collect::<Result<_, _>>()?;
    let mut buffers: Vec<ReplayBuffer> = (0..n)
        .map(|i| ReplayBuffer::new(cfg.ddpg.buffer_capacity, sub_seed(s2_seed(i), 1)))
        .collect();
    let mut s1_buffers: Vec<ReplayBuffer> = (0..n)
        .map(|i| ReplayBuffer::new(cfg.ddpg.buffer_capacity, sub_seed(s2_seed(i), 3)))
        .collect();
    let mut window_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 2000));
    let a_th = cfg.env.reward.a_th;
    let episodes = cfg.stage2_episode_count();
    let mut log = Vec::with_capacity(episodes);

    for ep in 0..episodes {
        let sigma = cfg.ddpg.noise_at(progress(ep, episodes));
        let window = env.profiles().sample_window(&cfg.train_days, cfg.env.episode_length, &mut window_rng)?;
        if let Err(e) = env.reset(window) {
            warn!("stage 2: skipping episode {ep}: {e}");
            continue;
        }
        let (mut total_r, mut sum_q, mut steps) = (0.0, 0.0, 0usize);
        loop {
            let mut s1_obs = Vec::with_capacity(n);
            let mut s2_obs = Vec::with_capacity(n);
            let mut s1_out = Vec::with_capacity(n);
            let mut raw = Vec::with_capacity(n);
            let mut joint = ActionVector::zeros(n);
            for i in 0..n {
                let f1 = env.features(i, ObsScope::Own);
                let f2 = env.features(i, ObsScope::Joint);
                let a_s1 = s1[i].act(&f1)?[0];
                let y = if ready(&buffers[i], &cfg.ddpg) {
                    agents[i].act_noisy(&f2, sigma)?[0]
                } else {
                    agents[i].act_random()[0]
                };
                joint.0[i] = compose_action(a_s1, s2_magnitude(y), a_th);
                s1_obs.push(f1);
                s2_obs.push(f2);
                s1_out.push(a_s1);
                raw.push(y);
            }
            let out = match env.step(&joint) {
                Ok(o) => o,
                Err(e) => {
                    warn!("stage 2: aborting episode {ep}: {e}");
                    break;
                }
            };
            for i in 0..n {
                let reward = out.rewards[i].r2;
                // A gated agent's magnitude had no effect on the feeder.
                if s1_out[i].abs() > a_th {
                    buffers[i].push(Transition {
                        obs: s2_obs[i].clone(),
                        action: vec![raw[i]],
                        reward,
                        next_obs: env.features(i, ObsScope::Joint),
                        done: out.done,
                    });
                }
                if cfg.unfreeze_s1 {
                    s1_buffers[i].push(Transition {
                        obs: s1_obs[i].clone(),
                        action: vec![discretize(s1_out[i], a_th, cfg.q_fix)],
                        reward,
                        next_obs: env.features(i, ObsScope::Own),
                        done: out.done,
                    });
                }
                total_r += reward / n as f64;
                sum_q += out.q_kvar[i].abs();
            }
            for i in 0..n {
                learn(&mut agents[i], &mut buffers[i], cfg)?;
                if cfg.unfreeze_s1 {
                    learn_levels(&mut s1[i], &mut s1_buffers[i], cfg)?;
                }
            }
            steps += 1;
            if out.done {
                break;
            }
        }
        let eval_score = if cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0 && !cfg.test_days.is_empty() {
            let policy = EvalPolicy::Composite(CompositePolicy::new(
                stage1_policy(&s1, cfg),
                stage2_policy(&agents, cfg),
            )?);
            let report = eval::evaluate(&policy, &mut env, &cfg.test_days)
                .map_err(|e| TrainError::Eval(e.to_string()))?;
            Some(report.mean_score)
        } else {
            None
        };
        log.push(EpisodeLog { episode: ep, mean_r: total_r / steps.max(1) as f64, eval_score, sum_q });
    }
    Ok(Stage2Result { agents, s1_agents: s1, log })
}

/// Everything produced by a full two-stage run.
#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub stage1: Vec<Stage1Result>,
    pub stage2: Stage2Result,
}

impl TwoStageResult {
    pub fn stage1_policy(&self, cfg: &TrainConfig) -> StagePolicy {
        let agents: Vec<DdpgAgent> = self.stage1.iter().map(|r| r.agent.clone()).collect();
        stage1_policy(&agents, cfg)
    }

    pub fn composite(&self, cfg: &TrainConfig) -> CompositePolicy {
        CompositePolicy {
            s1: stage1_policy(&self.stage2.s1_agents, cfg),
            s2: stage2_policy(&self.stage2.agents, cfg),
        }
    }
}

pub fn train_two_stage(factory: &dyn EnvFactory, cfg: &TrainConfig) -> Result<TwoStageResult, TrainError> {
    let stage1 = collect_stage1(train_stage1_all(factory, cfg)?)?;
    info!("stage 1 finished for {} agents", stage1.len());
    let s1_agents: Vec<DdpgAgent> = stage1.iter().map(|r| r.agent.clone()).collect();
    let stage2 = train_stage2(factory, &s1_agents, cfg)?;
    info!("stage 2 finished");
    Ok(TwoStageResult { stage1, stage2 })
}

pub fn s1_checkpoint_name(agent: usize) -> String {
    format!("agent{agent}_s1.json")
}

pub fn s2_checkpoint_name(agent: usize) -> String {
    format!("agent{agent}_s2.json")
}

/// Writes one full agent checkpoint per file plus a `policy.json` manifest.
pub fn write_checkpoints(dir: &Path, stage: Stage, agents: &[DdpgAgent], cfg: &TrainConfig) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)?;
    for (i, a) in agents.iter().enumerate() {
        let name = match stage {
            Stage::S1 => s1_checkpoint_name(i),
            Stage::S2 => s2_checkpoint_name(i),
        };
        std::fs::write(dir.join(name), a.to_checkpoint())?;
    }
    let manifest = PolicyManifest {
        stage,
        agents: agents.len(),
        a_th: cfg.env.reward.a_th,
        q_fix: cfg.q_fix,
        train: cfg.clone(),
    };
    std::fs::write(dir.join("policy.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_agents(dir: &Path, stage: Stage, count: usize) -> Result<Vec<DdpgAgent>, TrainError> {
    (0..count)
        .map(|i| {
            let name = match stage {
                Stage::S1 => s1_checkpoint_name(i),
                Stage::S2 => s2_checkpoint_name(i),
            };
            Ok(DdpgAgent::from_checkpoint(&std::fs::read_to_string(dir.join(name))?)?)
        })
        .collect()
}

/// Describes the newest stage written into a checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyManifest {
    pub stage: Stage,
    pub agents: usize,
    pub a_th: f64,
    pub q_fix: f64,
    pub train: TrainConfig,
}

/// Loads the policy stored in `dir`: composite when stage-2 checkpoints
/// exist, stage 1 otherwise.
pub fn load_policy(dir: &Path) -> Result<EvalPolicy, TrainError> {
    let manifest: PolicyManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("policy.json"))?)?;
    let s1 = read_agents(dir, Stage::S1, manifest.agents)?;
    let s1_policy = StagePolicy {
        stage: Stage::S1,
        actors: s1.into_iter().map(|a| a.actor).collect(),
        a_th: manifest.a_th,
        q_fix: manifest.q_fix,
    };
    if manifest.stage == Stage::S1 {
        return Ok(EvalPolicy::Stage1(s1_policy));
    }
    let s2 = read_agents(dir, Stage::S2, manifest.agents)?;
    let s2_policy = StagePolicy {
        stage: Stage::S2,
        actors: s2.into_iter().map(|a| a.actor).collect(),
        a_th: manifest.a_th,
        q_fix: manifest.q_fix,
    };
    Ok(EvalPolicy::Composite(CompositePolicy::new(s1_policy, s2_policy)?))
}
