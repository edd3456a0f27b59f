//! Deterministic policy gradient agent with target networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{Activation, Gradients, Mlp};
use super::replay::Transition;
use super::NeuroError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub noise_start: f64,
    pub noise_end: f64,
    /// Transitions collected with uniform random actions before learning starts.
    pub warmup: usize,
    /// Apply the actor's ascent step to the output pre-activation instead of
    /// through the tanh, dropping steps that push an output already past 90%
    /// of its range further out. Keeps saturated actors movable.
    pub saturation_guard: bool,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            gamma: 0.95,
            tau: 0.005,
            buffer_capacity: 100_000,
            batch_size: 128,
            noise_start: 0.3,
            noise_end: 0.02,
            warmup: 500,
            saturation_guard: true,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err("batch_size must be positive and fit in the buffer".into());
        }
        if self.actor_lr < 0.0 || self.critic_lr < 0.0 {
            return Err("learning rates must be non-negative".into());
        }
        Ok(())
    }

    /// Exploration scale after `progress` ∈ [0, 1] of training.
    pub fn noise_at(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        self.noise_start + (self.noise_end - self.noise_start) * p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Mean critic value at the actor's action, before the actor step.
    pub actor_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgAgent {
    pub config: DdpgConfig,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub updates: u64,
    rng: ChaCha8Rng,
}

impl DdpgAgent {
    pub fn new(obs_dim: usize, action_dim: usize, config: DdpgConfig, seed: u64) -> Result<Self, NeuroError> {
        config.validate().map_err(NeuroError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor_sizes: Vec<usize> = std::iter::once(obs_dim)
            .chain(config.actor_hidden.iter().copied())
            .chain(std::iter::once(action_dim))
            .collect();
        let critic_sizes: Vec<usize> = std::iter::once(obs_dim + action_dim)
            .chain(config.critic_hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let actor = Mlp::new(&actor_sizes, Activation::Tanh, Activation::Tanh, 3e-3, &mut rng);
        let critic = Mlp::new(&critic_sizes, Activation::Tanh, Activation::Identity, 3e-3, &mut rng);
        Ok(Self {
            obs_dim,
            action_dim,
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor_opt: Adam::new(&actor),
            critic_opt: Adam::new(&critic),
            actor,
            critic,
            config,
            updates: 0,
            rng,
        })
    }

    /// Deterministic policy output, each component in [-1, 1].
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>, NeuroError> {
        self.actor.forward(obs)
    }

    /// Policy output plus Gaussian noise, clipped to [-1, 1].
    pub fn act_noisy(&mut self, obs: &[f64], sigma: f64) -> Result<Vec<f64>, NeuroError> {
        let mut a = self.actor.forward(obs)?;
        if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).map_err(|e| NeuroError::Config(e.to_string()))?;
            for x in &mut a {
                *x = (*x + noise.sample(&mut self.rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    /// Uniform action in [-1, 1]^action_dim from the agent's generator.
    pub fn act_random(&mut self) -> Vec<f64> {
        use rand::Rng;
        (0..self.action_dim).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
    }

    pub fn q_value(&self, obs: &[f64], action: &[f64]) -> Result<f64, NeuroError> {
        Ok(self.critic.forward(&concat(obs, action))?[0])
    }

    /// `reward + (1 − done) · gamma · Q'(next_obs, μ'(next_obs))`.
    pub fn td_target(&self, reward: f64, next_obs: &[f64], done: bool) -> Result<f64, NeuroError> {
        self.td_target_with(reward, next_obs, done, &|a: Vec<f64>| a)
    }

    /// TD target where the target actor's output passes through `execute`
    /// before the target critic sees it.
    fn td_target_with(
        &self,
        reward: f64,
        next_obs: &[f64],
        done: bool,
        execute: &dyn Fn(Vec<f64>) -> Vec<f64>,
    ) -> Result<f64, NeuroError> {
        if done || self.config.gamma == 0.0 {
            return Ok(reward);
        }
        let next_action = execute(self.target_actor.forward(next_obs)?);
        let q_next = self.target_critic.forward(&concat(next_obs, &next_action))?[0];
        Ok(reward + self.config.gamma * q_next)
    }

    /// TD targets of a whole batch, evaluated with batched passes.
    fn td_targets(&self, batch: &[&Transition], execute: &dyn Fn(Vec<f64>) -> Vec<f64>) -> Result<Vec<f64>, NeuroError> {
        let rows = batch.len();
        let mut targets: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        if self.config.gamma == 0.0 || batch.iter().all(|t| t.done) {
            return Ok(targets);
        }
        let next: Vec<f64> = gather(batch, |t| &t.next_obs, self.obs_dim)?;
        let next_actions = self.target_actor.forward_batch(&next, rows)?;
        let mut critic_in = Vec::with_capacity(rows * (self.obs_dim + self.action_dim));
        for (obs, a) in next.chunks_exact(self.obs_dim).zip(next_actions.output().chunks_exact(self.action_dim)) {
            critic_in.extend_from_slice(obs);
            critic_in.extend(execute(a.to_vec()));
        }
        let q_next = self.target_critic.forward_batch(&critic_in, rows)?;
        for ((y, t), q) in targets.iter_mut().zip(batch).zip(q_next.output()) {
            if !t.done {
                *y += self.config.gamma * q;
            }
        }
        Ok(targets)
    }

    fn critic_step(&mut self, batch: &[&Transition], execute: &dyn Fn(Vec<f64>) -> Vec<f64>) -> Result<f64, NeuroError> {
        let rows = batch.len();
        let scale = 1.0 / rows as f64;
        let targets = self.td_targets(batch, execute)?;
        let mut critic_in = Vec::with_capacity(rows * (self.obs_dim + self.action_dim));
        for t in batch {
            if t.obs.len() != self.obs_dim || t.action.len() != self.action_dim {
                return Err(NeuroError::Shape {
                    expected: self.obs_dim + self.action_dim,
                    got: t.obs.len() + t.action.len(),
                });
            }
            critic_in.extend_from_slice(&t.obs);
            critic_in.extend_from_slice(&t.action);
        }
        let trace = self.critic.forward_batch(&critic_in, rows)?;
        let mut critic_loss = 0.0;
        let upstream: Vec<f64> = trace
            .output()
            .iter()
            .zip(&targets)
            .map(|(q, y)| {
                let err = q - y;
                critic_loss += err * err * scale;
                2.0 * err * scale
            })
            .collect();
        let mut critic_grads = Gradients::zeros_like(&self.critic);
        self.critic.backward_batch(&trace, &upstream, Some(&mut critic_grads))?;
        if !critic_loss.is_finite() || !critic_grads.is_finite() {
            return Err(NeuroError::Diverged(format!("critic loss {critic_loss} after {} updates", self.updates)));
        }
        self.critic_opt.step(&mut self.critic, &critic_grads, self.config.critic_lr);
        Ok(critic_loss)
    }

    fn actor_step(&mut self, grads: Gradients, objective: f64) -> Result<(), NeuroError> {
        if !objective.is_finite() || !grads.is_finite() {
            return Err(NeuroError::Diverged(format!("actor objective {objective} after {} updates", self.updates)));
        }
        self.actor_opt.step(&mut self.actor, &grads, self.config.actor_lr);
        self.soft_update(self.config.tau);
        self.updates += 1;
        Ok(())
    }

    /// One critic regression step, one actor ascent step, then target tracking.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<UpdateStats, NeuroError> {
        if batch.is_empty() {
            return Err(NeuroError::InsufficientSamples { requested: 1, available: 0 });
        }
        let critic_loss = self.critic_step(batch, &|a: Vec<f64>| a)?;

        let rows = batch.len();
        let scale = 1.0 / rows as f64;
        let obs = gather(batch, |t| &t.obs, self.obs_dim)?;
        let a_trace = self.actor.forward_batch(&obs, rows)?;
        let mut critic_in = Vec::with_capacity(rows * (self.obs_dim + self.action_dim));
        for (o, a) in obs.chunks_exact(self.obs_dim).zip(a_trace.output().chunks_exact(self.action_dim)) {
            critic_in.extend_from_slice(o);
            critic_in.extend_from_slice(a);
        }
        let c_trace = self.critic.forward_batch(&critic_in, rows)?;
        let objective = c_trace.output().iter().sum::<f64>() * scale;
        let dq_dinput = self.critic.backward_batch(&c_trace, &vec![1.0; rows], None)?;
        // Descend on −Q.
        let width = self.obs_dim + self.action_dim;
        let upstream: Vec<f64> = dq_dinput
            .chunks_exact(width)
            .flat_map(|row| row[self.obs_dim..].iter().map(|g| -g * scale))
            .collect();
        let mut actor_grads = Gradients::zeros_like(&self.actor);
        if self.config.saturation_guard {
            let guarded: Vec<f64> = upstream
                .iter()
                .zip(a_trace.output())
                .map(|(&g, &y)| if pushes_outward(y, -g, 0.0, LEVEL_EDGE) { 0.0 } else { g })
                .collect();
            self.actor.backward_batch_pre_output(&a_trace, &guarded, Some(&mut actor_grads))?;
        } else {
            self.actor.backward_batch(&a_trace, &upstream, Some(&mut actor_grads))?;
        }
        self.actor_step(actor_grads, objective)?;
        Ok(UpdateStats { critic_loss, actor_objective: objective })
    }

    /// Update for a scalar action that the environment executes on a few
    /// discrete levels. Stored actions must be executed levels. The critic is
    /// only ever queried at those levels: the actor ascends the piecewise-linear
    /// interpolation of the critic between `anchors` (actor outputs) carrying
    /// `levels` (executed values), and TD targets use `execute` on the target
    /// actor's output.
    pub fn update_on_levels(
        &mut self,
        batch: &[&Transition],
        anchors: &[f64],
        levels: &[f64],
        execute: &dyn Fn(f64) -> f64,
    ) -> Result<UpdateStats, NeuroError> {
        if batch.is_empty() {
            return Err(NeuroError::InsufficientSamples { requested: 1, available: 0 });
        }
        if self.action_dim != 1 {
            return Err(NeuroError::Config("level updates need a scalar action".into()));
        }
        if anchors.len() < 2 || anchors.len() != levels.len() || anchors.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(NeuroError::Config("anchors must increase strictly and match the levels".into()));
        }
        let critic_loss = self.critic_step(batch, &|a: Vec<f64>| vec![execute(a[0])])?;

        let rows = batch.len();
        let scale = 1.0 / rows as f64;
        let obs = gather(batch, |t| &t.obs, self.obs_dim)?;
        let a_trace = self.actor.forward_batch(&obs, rows)?;
        let segments: Vec<usize> = a_trace
            .output()
            .iter()
            .map(|&y| anchors.partition_point(|&p| p <= y).clamp(1, anchors.len() - 1) - 1)
            .collect();
        let at_level = |offset: usize| -> Result<Vec<f64>, NeuroError> {
            let mut input = Vec::with_capacity(rows * (self.obs_dim + 1));
            for (o, &k) in obs.chunks_exact(self.obs_dim).zip(&segments) {
                input.extend_from_slice(o);
                input.push(levels[k + offset]);
            }
            Ok(self.critic.forward_batch(&input, rows)?.output().to_vec())
        };
        let (q_lo, q_hi) = (at_level(0)?, at_level(1)?);
        let mut objective = 0.0;
        let mut upstream = Vec::with_capacity(rows);
        let (first, last) = (anchors[0], anchors[anchors.len() - 1]);
        let edge = LEVEL_EDGE * (last - first) / 2.0;
        let middle = (first + last) / 2.0;
        for (((&y, &k), lo), hi) in a_trace.output().iter().zip(&segments).zip(&q_lo).zip(&q_hi) {
            let slope = (hi - lo) / (anchors[k + 1] - anchors[k]);
            objective += (lo + slope * (y - anchors[k])) * scale;
            // The step is applied to the pre-activation so a saturated output
            // can still move back; pushing further past the edge is dropped.
            upstream.push(if pushes_outward(y, slope, middle, edge) { 0.0 } else { -slope * scale });
        }
        let mut actor_grads = Gradients::zeros_like(&self.actor);
        self.actor.backward_batch_pre_output(&a_trace, &upstream, Some(&mut actor_grads))?;
        self.actor_step(actor_grads, objective)?;
        Ok(UpdateStats { critic_loss, actor_objective: objective })
    }

    pub fn soft_update(&mut self, tau: f64) {
        self.target_actor.soft_update_from(&self.actor, tau);
        self.target_critic.soft_update_from(&self.critic, tau);
    }

    pub fn to_checkpoint(&self) -> String {
        serde_json::to_string(self).expect("agent serializes")
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, NeuroError> {
        let agent: Self = serde_json::from_str(text)?;
        agent.config.validate().map_err(NeuroError::Config)?;
        let shapes_ok = agent.actor.input_dim() == agent.obs_dim
            && agent.actor.output_dim() == agent.action_dim
            && agent.critic.input_dim() == agent.obs_dim + agent.action_dim
            && agent.actor.same_shape(&agent.target_actor)
            && agent.critic.same_shape(&agent.target_critic);
        if !shapes_ok {
            return Err(NeuroError::Config("checkpoint network shapes are inconsistent".into()));
        }
        Ok(agent)
    }
}

/// Fraction of the half-range beyond which level updates stop pushing the
/// actor outward.
const LEVEL_EDGE: f64 = 0.9;

/// Whether ascending along `slope` moves `y` further beyond `edge` from `middle`.
fn pushes_outward(y: f64, slope: f64, middle: f64, edge: f64) -> bool {
    (y - middle >= edge && slope > 0.0) || (middle - y >= edge && slope < 0.0)
}

/// Row-major matrix of one field of every transition.
fn gather<'a>(batch: &[&'a Transition], field: impl Fn(&'a Transition) -> &'a Vec<f64>, width: usize) -> Result<Vec<f64>, NeuroError> {
    let mut out = Vec::with_capacity(batch.len() * width);
    for t in batch {
        let v = field(t);
        if v.len() != width {
            return Err(NeuroError::Shape { expected: width, got: v.len() });
        }
        out.extend_from_slice(v);
    }
    Ok(out)
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}
