//! The Volt-Var control environment.
//!
//! Each step applies the joint reactive-power command to the next profile
//! snapshot and, alongside, solves the same snapshot with every inverter idle.
//! The difference between the two system scores is the system reward.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{FeederModel, PowerFlowError, PowerFlowResult, SolverOptions};
use crate::profiles::{snapshot_at, EpisodeWindow, ProfileError, ProfileSet, DEFAULT_EPISODE_LENGTH};
use crate::reward::{self, RewardBreakdown, RewardConfig};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("invalid action: {0}")]
    Action(String),
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("step called before reset")]
    NotReset,
    #[error("episode already finished")]
    EpisodeOver,
}

/// Piecewise-linear nodal voltage score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurve {
    /// `(voltage p.u., score)` with strictly increasing voltages.
    pub knots: Vec<(f64, f64)>,
    pub floor: f64,
}

impl Default for ScoreCurve {
    fn default() -> Self {
        Self {
            knots: vec![(0.90, -5.0), (0.95, 0.0), (1.01, 1.0), (1.03, 1.0), (1.05, 0.0), (1.10, -5.0)],
            floor: -5.0,
        }
    }
}

impl ScoreCurve {
    pub fn validate(&self) -> Result<(), String> {
        if self.knots.is_empty() {
            return Err("score curve needs at least one knot".into());
        }
        if self.knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err("score curve knot voltages must be strictly increasing".into());
        }
        if self.knots.iter().any(|&(_, s)| !(s >= self.floor && s <= 1.0)) {
            return Err("score curve values must lie in [floor, 1]".into());
        }
        Ok(())
    }
}

pub fn node_score(curve: &ScoreCurve, v: f64) -> f64 {
    let knots = &curve.knots;
    let (first, last) = (knots[0], knots[knots.len() - 1]);
    if v < first.0 || v > last.0 {
        return curve.floor;
    }
    match knots.iter().position(|&(kv, _)| kv >= v) {
        Some(0) => first.1,
        Some(i) => {
            let (v0, s0) = knots[i - 1];
            let (v1, s1) = knots[i];
            s0 + (s1 - s0) * (v - v0) / (v1 - v0)
        }
        None => last.1,
    }
}

/// Mean nodal score over all monitored nodes.
pub fn system_score(curve: &ScoreCurve, voltages: &[f64]) -> Option<f64> {
    if voltages.is_empty() {
        return None;
    }
    Some(voltages.iter().map(|&v| node_score(curve, v)).sum::<f64>() / voltages.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub score_curve: ScoreCurve,
    pub v_llim: f64,
    pub v_hlim: f64,
    pub episode_length: usize,
    pub reward: RewardConfig,
    pub features: FeatureScaling,
}

/// Affine map of bus voltages into learning features: `(v - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureScaling {
    pub voltage_center: f64,
    pub voltage_scale: f64,
}

impl Default for FeatureScaling {
    fn default() -> Self {
        Self { voltage_center: 1.0, voltage_scale: 10.0 }
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            score_curve: ScoreCurve::default(),
            v_llim: 1.01,
            v_hlim: 1.03,
            episode_length: DEFAULT_EPISODE_LENGTH,
            reward: RewardConfig::default(),
            features: FeatureScaling::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.score_curve.validate()?;
        self.reward.validate()?;
        if !(self.v_llim < self.v_hlim) {
            return Err("v_llim must be below v_hlim".into());
        }
        if self.episode_length == 0 {
            return Err("episode_length must be >= 1".into());
        }
        if !(self.features.voltage_scale.is_finite() && self.features.voltage_scale > 0.0) {
            return Err("feature voltage_scale must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub voltages: Vec<f64>,
    /// Real power of each PV farm, kW.
    pub pv_powers: Vec<f64>,
    pub feeder_p: f64,
    pub feeder_q: f64,
}

/// Which previous actions an agent sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsScope {
    /// Only the agent's own previous action (individual training).
    Own,
    /// Previous actions of every agent (cooperative training).
    Joint,
}

impl ObsScope {
    pub fn action_slots(self, agents: usize) -> usize {
        match self {
            ObsScope::Own => 1,
            ObsScope::Joint => agents,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub voltages: Vec<f64>,
    pub own_pv_p: f64,
    pub feeder_p: f64,
    pub feeder_q: f64,
    /// Normalized actions executed at the previous step.
    pub prev_actions: Vec<f64>,
}

impl Observation {
    /// Learning features: voltages through `scaling` (by default
    /// `(v - 1) * 10`), PV power over its rating, feeder P/Q over the base
    /// power, previous actions as-is.
    pub fn features(&self, scaling: &FeatureScaling, base_power: f64, p_rated: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.voltages.len() + 3 + self.prev_actions.len());
        x.extend(self.voltages.iter().map(|v| (v - scaling.voltage_center) * scaling.voltage_scale));
        x.push(if p_rated > 0.0 { self.own_pv_p / p_rated } else { 0.0 });
        x.push(self.feeder_p / base_power);
        x.push(self.feeder_q / base_power);
        x.extend_from_slice(&self.prev_actions);
        x
    }
}

/// Normalized joint action, one entry per PV farm.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVector(pub Vec<f64>);

impl ActionVector {
    pub fn zeros(agents: usize) -> Self {
        Self(vec![0.0; agents])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Profile step the action was applied to.
    pub t: usize,
    pub next_state: GlobalState,
    pub score_action: f64,
    pub score_dn: f64,
    /// Voltages of the do-nothing counterfactual.
    pub dn_voltages: Vec<f64>,
    pub actions: Vec<f64>,
    pub q_kvar: Vec<f64>,
    pub rewards: Vec<RewardBreakdown>,
    pub done: bool,
}

impl StepOutcome {
    pub fn r_s(&self) -> f64 {
        reward::system_reward(self.score_action, self.score_dn)
    }
}

/// A single-threaded environment instance. The feeder and profiles are
/// shared read-only, so many instances can run side by side.
#[derive(Debug, Clone)]
pub struct VvcEnv {
    model: Arc<FeederModel>,
    profiles: Arc<ProfileSet>,
    cfg: EnvConfig,
    solver: SolverOptions,
    q_limits: Vec<f64>,
    window: Option<EpisodeWindow>,
    steps_taken: usize,
    state: Option<GlobalState>,
    prev_actions: Vec<f64>,
}

impl VvcEnv {
    pub fn new(model: Arc<FeederModel>, profiles: Arc<ProfileSet>, cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate().map_err(EnvError::Config)?;
        // Fail early on profiles the feeder needs but the set lacks.
        snapshot_at(&profiles, &model, 0)?;
        let q_limits = model.pvs().iter().map(|p| p.q_limit()).collect();
        let n = model.pvs().len();
        Ok(Self {
            model,
            profiles,
            cfg,
            solver: SolverOptions::default(),
            q_limits,
            window: None,
            steps_taken: 0,
            state: None,
            prev_actions: vec![0.0; n],
        })
    }

    pub fn model(&self) -> &FeederModel {
        &self.model
    }

    pub fn profiles(&self) -> &ProfileSet {
        &self.profiles
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn agent_count(&self) -> usize {
        self.q_limits.len()
    }

    pub fn node_count(&self) -> usize {
        self.model.bus_count()
    }

    pub fn q_limits(&self) -> &[f64] {
        &self.q_limits
    }

    pub fn obs_dim(&self, scope: ObsScope) -> usize {
        self.node_count() + 3 + scope.action_slots(self.agent_count())
    }

    pub fn state(&self) -> Option<&GlobalState> {
        self.state.as_ref()
    }

    pub fn prev_actions(&self) -> &[f64] {
        &self.prev_actions
    }

    /// Current profile step (the snapshot the state was solved at).
    pub fn current_step(&self) -> Option<usize> {
        self.window.map(|w| w.start_step + self.steps_taken)
    }

    fn flow(&self, t: usize, q_kvar: &[f64]) -> Result<(PowerFlowResult, Vec<f64>), EnvError> {
        let snap = snapshot_at(&self.profiles, &self.model, t)?;
        let inj = snap.injections(&self.model, q_kvar);
        Ok((self.model.solve_with(&inj, &self.solver)?, snap.pv_available_p))
    }

    pub fn reset(&mut self, window: EpisodeWindow) -> Result<(GlobalState, Vec<Observation>), EnvError> {
        window.validate(self.profiles.horizon)?;
        let zeros = vec![0.0; self.agent_count()];
        let (pf, pv_powers) = self.flow(window.start_step, &zeros)?;
        let state = GlobalState {
            voltages: pf.voltages,
            pv_powers,
            feeder_p: pf.feeder_head_p,
            feeder_q: pf.feeder_head_q,
        };
        self.window = Some(window);
        self.steps_taken = 0;
        self.prev_actions = zeros;
        self.state = Some(state.clone());
        let obs = (0..self.agent_count()).map(|i| self.observe(i, ObsScope::Joint)).collect();
        Ok((state, obs))
    }

    /// Observation of agent `i` at the current state.
    pub fn observe(&self, i: usize, scope: ObsScope) -> Observation {
        let state = self.state.as_ref().expect("observe after reset");
        Observation {
            voltages: state.voltages.clone(),
            own_pv_p: state.pv_powers[i],
            feeder_p: state.feeder_p,
            feeder_q: state.feeder_q,
            prev_actions: match scope {
                ObsScope::Own => vec![self.prev_actions[i]],
                ObsScope::Joint => self.prev_actions.clone(),
            },
        }
    }

    /// Normalized learning features of agent `i`.
    pub fn features(&self, i: usize, scope: ObsScope) -> Vec<f64> {
        self.observe(i, scope)
            .features(&self.cfg.features, self.model.base_power(), self.model.pvs()[i].p_rated_kw)
    }

    pub fn step(&mut self, joint: &ActionVector) -> Result<StepOutcome, EnvError> {
        let window = self.window.ok_or(EnvError::NotReset)?;
        if self.steps_taken >= window.length {
            return Err(EnvError::EpisodeOver);
        }
        if joint.0.len() != self.agent_count() {
            return Err(EnvError::Action(format!(
                "expected {} actions, got {}",
                self.agent_count(),
                joint.0.len()
            )));
        }
        if let Some(a) = joint.0.iter().find(|a| !(a.abs() <= 1.0)) {
            return Err(EnvError::Action(format!("normalized action {a} outside [-1, 1]")));
        }
        let t = window.start_step + self.steps_taken + 1;
        let q_kvar: Vec<f64> = joint.0.iter().zip(&self.q_limits).map(|(a, q)| a * q).collect();
        let (factual, pv_powers) = self.flow(t, &q_kvar)?;
        let (counterfactual, _) = self.flow(t, &vec![0.0; self.agent_count()])?;

        let curve = &self.cfg.score_curve;
        let score_action = system_score(curve, &factual.voltages).expect("feeder has buses");
        let score_dn = system_score(curve, &counterfactual.voltages).expect("feeder has buses");
        let rewards = reward::breakdown(&self.cfg.reward, score_action, score_dn, &joint.0, &q_kvar);

        let next_state = GlobalState {
            voltages: factual.voltages,
            pv_powers,
            feeder_p: factual.feeder_head_p,
            feeder_q: factual.feeder_head_q,
        };
        self.steps_taken += 1;
        self.prev_actions = joint.0.clone();
        self.state = Some(next_state.clone());
        Ok(StepOutcome {
            t,
            next_state,
            score_action,
            score_dn,
            dn_voltages: counterfactual.voltages,
            actions: joint.0.clone(),
            q_kvar,
            rewards,
            done: self.steps_taken == window.length,
        })
    }
}

/// Header of the step-trace CSV: `t, V_1..V_M, a_1..a_N, score_action, score_dn, r_s`.
pub fn trace_header(nodes: usize, agents: usize) -> String {
    let mut h = String::from("t");
    for k in 1..=nodes {
        let _ = write!(h, ",V_{k}");
    }
    for i in 1..=agents {
        let _ = write!(h, ",a_{i}");
    }
    h.push_str(",score_action,score_dn,r_s");
    h
}

pub fn trace_row(out: &StepOutcome) -> String {
    let mut row = out.t.to_string();
    for v in out.next_state.voltages.iter().chain(&out.actions) {
        let _ = write!(row, ",{v}");
    }
    let _ = write!(row, ",{},{},{}", out.score_action, out.score_dn, out.r_s());
    row
}
