//! Reward arithmetic for the two training stages.
//!
//! Every agent is paid relative to the do-nothing counterfactual. Stage 1
//! hands each agent the full system reward plus an idle bonus; stage 2 splits
//! the system reward by each agent's share of the committed reactive effort.

use serde::{Deserialize, Serialize};

/// How effort is measured when splitting credit between agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditMode {
    /// Normalized action magnitude |Q| / q_limit.
    #[default]
    Normalized,
    /// Raw reactive power in kVAR.
    RawKvar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Cost per unit of normalized |Q|.
    pub w_cost: f64,
    /// Normalized magnitude at or below which an action counts as idle.
    pub a_th: f64,
    /// Bonus paid to an idle agent in stage 1.
    pub r_dn_value: f64,
    pub credit_mode: CreditMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { w_cost: 0.001, a_th: 0.05, r_dn_value: 1e-3, credit_mode: CreditMode::Normalized }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.w_cost >= 0.0) {
            return Err(format!("w_cost must be >= 0, got {}", self.w_cost));
        }
        if !(0.0..1.0).contains(&self.a_th) {
            return Err(format!("a_th must lie in [0, 1), got {}", self.a_th));
        }
        if !(self.r_dn_value >= 0.0) {
            return Err(format!("r_dn_value must be >= 0, got {}", self.r_dn_value));
        }
        Ok(())
    }
}

/// Per-agent reward terms for one environment step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_s: f64,
    pub cost: f64,
    pub r_dn: f64,
    pub cf: f64,
    pub r1: f64,
    pub r2: f64,
}

pub fn system_reward(score_action: f64, score_dn: f64) -> f64 {
    score_action - score_dn
}

pub fn action_cost(cfg: &RewardConfig, a_norm: f64) -> f64 {
    cfg.w_cost * a_norm.abs()
}

/// Idle bonus; the threshold is inclusive.
pub fn do_nothing_reward(cfg: &RewardConfig, a_norm: f64) -> f64 {
    if a_norm.abs() <= cfg.a_th {
        cfg.r_dn_value
    } else {
        0.0
    }
}

pub fn stage1_reward(r_s: f64, cost: f64, r_dn: f64) -> f64 {
    r_s - cost + r_dn
}

/// Share of the total effort contributed by each agent. All zero when nobody acts.
pub fn contribution_factors(efforts: &[f64]) -> Vec<f64> {
    let total: f64 = efforts.iter().map(|e| e.abs()).sum();
    if total == 0.0 {
        return vec![0.0; efforts.len()];
    }
    efforts.iter().map(|e| e.abs() / total).collect()
}

pub fn stage2_reward(cf: f64, r_s: f64, cost: f64) -> f64 {
    cf * r_s - cost
}

/// Fills every reward term for every agent given the executed normalized
/// actions and the matching physical reactive powers (kVAR).
pub fn breakdown(
    cfg: &RewardConfig,
    score_action: f64,
    score_dn: f64,
    actions: &[f64],
    q_kvar: &[f64],
) -> Vec<RewardBreakdown> {
    let r_s = system_reward(score_action, score_dn);
    let cfs = match cfg.credit_mode {
        CreditMode::Normalized => contribution_factors(actions),
        CreditMode::RawKvar => contribution_factors(q_kvar),
    };
    actions
        .iter()
        .zip(cfs)
        .map(|(&a, cf)| {
            let cost = action_cost(cfg, a);
            let r_dn = do_nothing_reward(cfg, a);
            RewardBreakdown {
                r_s,
                cost,
                r_dn,
                cf,
                r1: stage1_reward(r_s, cost, r_dn),
                r2: stage2_reward(cf, r_s, cost),
            }
        })
        .collect()
}
