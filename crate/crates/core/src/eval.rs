//! Baselines, greedy rollouts, violation events and reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ActionVector, EnvError, ObsScope, VvcEnv};
use crate::neuro::{Mlp, NeuroError};
use crate::trainer::{self, discretize, CompositePolicy, SharedEnv, StagePolicy, TrainConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Neuro(#[from] NeuroError),
    #[error("policy does not fit the feeder: {0}")]
    Roster(String),
    #[error("invalid evaluation input: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Piecewise-linear droop: voltage (p.u.) to reactive power as a fraction of
/// the inverter rating. Positive means injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltVarCurve {
    pub points: Vec<(f64, f64)>,
}

impl Default for VoltVarCurve {
    fn default() -> Self {
        Self { points: vec![(0.92, 0.44), (0.98, 0.0), (1.02, 0.0), (1.08, -0.44)] }
    }
}

impl VoltVarCurve {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.points.len() < 2 {
            return Err(EvalError::Config("volt-var curve needs at least two points".into()));
        }
        if self.points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(EvalError::Config("volt-var voltages must increase strictly".into()));
        }
        if self.points.iter().any(|&(_, q)| !(q.abs() <= crate::feeder::Q_LIMIT_FRACTION)) {
            return Err(EvalError::Config("volt-var q fractions must lie within the inverter limit".into()));
        }
        Ok(())
    }

    /// Reactive-power fraction at `v`, held constant beyond the outer points.
    pub fn fraction(&self, v: f64) -> f64 {
        let pts = &self.points;
        let (first, last) = (pts[0], pts[pts.len() - 1]);
        if v <= first.0 {
            return first.1;
        }
        if v >= last.0 {
            return last.1;
        }
        let k = pts.partition_point(|p| p.0 <= v);
        let (a, b) = (pts[k - 1], pts[k]);
        a.1 + (b.1 - a.1) * (v - a.0) / (b.0 - a.0)
    }
}

/// Droop response in kVAR of an inverter rated `s_rated` kVA seeing `v_local`.
pub fn conventional_controller(curve: &VoltVarCurve, v_local: f64, s_rated: f64) -> f64 {
    curve.fraction(v_local) * s_rated
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationEvent {
    pub node: String,
    pub start_step: usize,
    /// Length in control intervals.
    pub duration: usize,
}

/// Maximal out-of-band runs of one node's trace.
pub fn detect_node_events(node: &str, trace: &[f64], v_llim: f64, v_hlim: f64) -> Vec<ViolationEvent> {
    let mut events = Vec::new();
    let mut start = None;
    for (k, &v) in trace.iter().enumerate() {
        let out = v < v_llim || v > v_hlim;
        match (out, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                events.push(ViolationEvent { node: node.to_string(), start_step: s, duration: k - s });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        events.push(ViolationEvent { node: node.to_string(), start_step: s, duration: trace.len() - s });
    }
    events
}

/// Events over several node traces, node by node.
pub fn detect_events(nodes: &[String], traces: &[Vec<f64>], v_llim: f64, v_hlim: f64) -> Vec<ViolationEvent> {
    nodes
        .iter()
        .zip(traces)
        .flat_map(|(n, t)| detect_node_events(n, t, v_llim, v_hlim))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub count: usize,
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub p25: Option<f64>,
    pub p50: Option<f64>,
    pub p75: Option<f64>,
    pub max_duration: f64,
    /// Distinct nodes with an event of the maximal duration.
    pub nodes_at_max: usize,
    /// Total node-intervals in violation.
    pub integration_sum: f64,
}

fn nearest_rank(sorted: &[usize], pct: f64) -> f64 {
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1] as f64
}

pub fn event_statistics(events: &[ViolationEvent]) -> EventStats {
    let mut d: Vec<usize> = events.iter().map(|e| e.duration).collect();
    d.sort_unstable();
    let count = d.len();
    let integration_sum = d.iter().sum::<usize>() as f64;
    if count == 0 {
        return EventStats {
            count,
            mean: None,
            std: None,
            p25: None,
            p50: None,
            p75: None,
            max_duration: 0.0,
            nodes_at_max: 0,
            integration_sum,
        };
    }
    let mean = integration_sum / count as f64;
    let var = d.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / count as f64;
    let max = d[count - 1];
    let mut at_max: Vec<&str> = events.iter().filter(|e| e.duration == max).map(|e| e.node.as_str()).collect();
    at_max.sort_unstable();
    at_max.dedup();
    EventStats {
        count,
        mean: Some(mean),
        std: Some(var.sqrt()),
        p25: Some(nearest_rank(&d, 25.0)),
        p50: Some(nearest_rank(&d, 50.0)),
        p75: Some(nearest_rank(&d, 75.0)),
        max_duration: max as f64,
        nodes_at_max: at_max.len(),
        integration_sum,
    }
}

impl EventStats {
    /// Same statistics with durations expressed in minutes.
    pub fn in_minutes(&self, step_minutes: u32) -> EventStats {
        let f = step_minutes as f64;
        let s = |x: Option<f64>| x.map(|v| v * f);
        EventStats {
            count: self.count,
            mean: s(self.mean),
            std: s(self.std),
            p25: s(self.p25),
            p50: s(self.p50),
            p75: s(self.p75),
            max_duration: self.max_duration * f,
            nodes_at_max: self.nodes_at_max,
            integration_sum: self.integration_sum * f,
        }
    }
}

/// Anything that can drive every inverter of the feeder greedily.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalPolicy {
    DoNothing,
    Conventional(VoltVarCurve),
    /// One stage-1 actor acting alone; the other inverters stay idle.
    Individual { agent: usize, actor: Mlp, a_th: f64, q_fix: f64 },
    /// All stage-1 actors acting together with the discretized execution.
    Stage1(StagePolicy),
    Composite(CompositePolicy),
}

impl EvalPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            EvalPolicy::DoNothing => "do-nothing",
            EvalPolicy::Conventional(_) => "conventional",
            EvalPolicy::Individual { .. } => "individual",
            EvalPolicy::Stage1(_) => "stage1",
            EvalPolicy::Composite(_) => "composite",
        }
    }

    fn check_roster(&self, agents: usize) -> Result<(), EvalError> {
        let have = match self {
            EvalPolicy::DoNothing | EvalPolicy::Conventional(_) => return Ok(()),
            EvalPolicy::Individual { agent, .. } => {
                return if *agent < agents {
                    Ok(())
                } else {
                    Err(EvalError::Roster(format!("agent {agent} but only {agents} PV farms")))
                };
            }
            EvalPolicy::Stage1(p) => p.actors.len(),
            EvalPolicy::Composite(c) => c.s1.actors.len(),
        };
        if have != agents {
            return Err(EvalError::Roster(format!("policy has {have} agents, feeder has {agents}")));
        }
        Ok(())
    }

    /// Normalized joint action for the environment's current state.
    pub fn joint_action(&self, env: &VvcEnv) -> Result<ActionVector, EvalError> {
        let n = env.agent_count();
        let mut a = ActionVector::zeros(n);
        match self {
            EvalPolicy::DoNothing => {}
            EvalPolicy::Conventional(curve) => {
                let state = env.state().ok_or(EnvError::NotReset)?;
                let model = env.model();
                for (i, (pv, &bus)) in model.pvs().iter().zip(model.pv_buses()).enumerate() {
                    let q = conventional_controller(curve, state.voltages[bus], pv.s_rated());
                    let limit = env.q_limits()[i];
                    a.0[i] = if limit > 0.0 { (q / limit).clamp(-1.0, 1.0) } else { 0.0 };
                }
            }
            EvalPolicy::Individual { agent, actor, a_th, q_fix } => {
                let y = actor.forward(&env.features(*agent, ObsScope::Own))?[0];
                a.0[*agent] = discretize(y, *a_th, *q_fix);
            }
            EvalPolicy::Stage1(p) => {
                for i in 0..n {
                    let y = trainer::act_greedy(p, i, &env.features(i, ObsScope::Own))?;
                    a.0[i] = discretize(y, p.a_th, p.q_fix);
                }
            }
            EvalPolicy::Composite(c) => {
                for i in 0..n {
                    a.0[i] = trainer::act_composite(
                        c,
                        i,
                        &env.features(i, ObsScope::Own),
                        &env.features(i, ObsScope::Joint),
                    )?;
                }
            }
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub day: usize,
    pub t: usize,
    pub score: f64,
    pub score_dn: f64,
    pub voltages: Vec<f64>,
    pub q_kvar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReport {
    pub day: usize,
    pub steps: usize,
    pub mean_score: f64,
    pub sum_q: f64,
    pub events: EventStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedEpisode {
    pub day: usize,
    pub start_step: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub nodes: Vec<String>,
    pub pv_ids: Vec<String>,
    pub episodes: usize,
    pub steps: usize,
    /// Mean system score over all evaluated steps.
    pub mean_score: f64,
    /// Mean over episodes of each episode's mean score.
    pub mean_episode_score: f64,
    /// Mean score of the do-nothing counterfactual on the same steps.
    pub mean_dn_score: f64,
    /// Σ |Q| over steps and inverters, kVAR.
    pub sum_q_total: f64,
    pub sum_q_per_pv: Vec<f64>,
    pub events: EventStats,
    pub per_day: Vec<DayReport>,
    pub failed: Vec<FailedEpisode>,
    pub trace: Vec<StepRecord>,
}

impl EvalReport {
    fn empty(policy: &str, nodes: Vec<String>, pv_ids: Vec<String>) -> Self {
        let agents = pv_ids.len();
        Self {
            policy: policy.to_string(),
            nodes,
            pv_ids,
            episodes: 0,
            steps: 0,
            mean_score: 0.0,
            mean_episode_score: 0.0,
            mean_dn_score: 0.0,
            sum_q_total: 0.0,
            sum_q_per_pv: vec![0.0; agents],
            events: event_statistics(&[]),
            per_day: Vec::new(),
            failed: Vec::new(),
            trace: Vec::new(),
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn day_events(nodes: &[String], records: &[&StepRecord], v_llim: f64, v_hlim: f64) -> Vec<ViolationEvent> {
    let traces: Vec<Vec<f64>> = (0..nodes.len())
        .map(|k| records.iter().map(|r| r.voltages[k]).collect())
        .collect();
    let mut events = detect_events(nodes, &traces, v_llim, v_hlim);
    // Report steps as absolute profile indices.
    if let Some(first) = records.first() {
        for e in &mut events {
            e.start_step += first.t;
        }
    }
    events
}

/// Greedy rollouts over every consecutive episode window of `days`.
/// Windows whose power flow fails are recorded in `failed` and skipped.
pub fn evaluate(policy: &EvalPolicy, env: &mut VvcEnv, days: &[usize]) -> Result<EvalReport, EvalError> {
    policy.check_roster(env.agent_count())?;
    let model = env.model();
    let nodes: Vec<String> = model.buses().iter().map(|b| b.0.clone()).collect();
    let pv_ids: Vec<String> = model.pvs().iter().map(|p| p.bus.0.clone()).collect();
    let mut report = EvalReport::empty(policy.name(), nodes, pv_ids);
    let (v_llim, v_hlim) = (env.config().v_llim, env.config().v_hlim);
    let length = env.config().episode_length;
    let mut episode_means = Vec::new();
    let mut days_sorted = days.to_vec();
    days_sorted.sort_unstable();
    days_sorted.dedup();

    let mut all_events = Vec::new();
    for &day in &days_sorted {
        if day >= env.profiles().days() {
            return Err(EvalError::Config(format!("day {day} beyond the {} profile days", env.profiles().days())));
        }
        let mut day_records = Vec::new();
        for window in env.profiles().day_windows(day, length) {
            match rollout(policy, env, window, day) {
                Ok(records) => {
                    episode_means.push(mean(records.iter().map(|r| r.score)));
                    day_records.extend(records);
                }
                Err(e) => report.failed.push(FailedEpisode { day, start_step: window.start_step, error: e.to_string() }),
            }
        }
        // A failed window breaks the day into separate contiguous traces.
        let mut segments: Vec<Vec<&StepRecord>> = Vec::new();
        for r in &day_records {
            match segments.last_mut() {
                Some(seg) if seg.last().map(|p| p.t + 1) == Some(r.t) => seg.push(r),
                _ => segments.push(vec![r]),
            }
        }
        let events: Vec<ViolationEvent> =
            segments.iter().flat_map(|s| day_events(&report.nodes, s, v_llim, v_hlim)).collect();
        report.per_day.push(DayReport {
            day,
            steps: day_records.len(),
            mean_score: mean(day_records.iter().map(|r| r.score)),
            sum_q: day_records.iter().flat_map(|r| r.q_kvar.iter()).map(|q| q.abs()).sum(),
            events: event_statistics(&events),
        });
        all_events.extend(events);
        report.trace.extend(day_records);
    }

    report.episodes = episode_means.len();
    report.steps = report.trace.len();
    report.mean_score = mean(report.trace.iter().map(|r| r.score));
    report.mean_dn_score = mean(report.trace.iter().map(|r| r.score_dn));
    report.mean_episode_score = mean(episode_means.into_iter());
    for r in &report.trace {
        for (acc, q) in report.sum_q_per_pv.iter_mut().zip(&r.q_kvar) {
            *acc += q.abs();
        }
    }
    report.sum_q_total = report.sum_q_per_pv.iter().sum();
    report.events = event_statistics(&all_events);
    Ok(report)
}

fn rollout(
    policy: &EvalPolicy,
    env: &mut VvcEnv,
    window: crate::profiles::EpisodeWindow,
    day: usize,
) -> Result<Vec<StepRecord>, EvalError> {
    env.reset(window)?;
    let mut records = Vec::with_capacity(window.length);
    loop {
        let a = policy.joint_action(env)?;
        let out = env.step(&a)?;
        records.push(StepRecord {
            day,
            t: out.t,
            score: out.score_action,
            score_dn: out.score_dn,
            voltages: out.next_state.voltages.clone(),
            q_kvar: out.q_kvar.clone(),
        });
        if out.done {
            return Ok(records);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub w_cost: f64,
    pub score: Option<f64>,
    pub sum_q: Option<f64>,
    pub error: Option<String>,
}

/// Retrains both stages for every action-cost weight and evaluates the
/// composite policy on the test days. A failed cell is reported in its row.
pub fn sweep_wcost(values: &[f64], shared: &SharedEnv, cfg: &TrainConfig) -> Result<Vec<SweepRow>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Config("no w_cost values".into()));
    }
    let rows = values
        .iter()
        .map(|&w| {
            let mut cell = cfg.clone();
            cell.env.reward.w_cost = w;
            let mut env_shared = shared.clone();
            env_shared.config = cell.env.clone();
            let result = trainer::train_two_stage(&env_shared, &cell)
                .map_err(|e| e.to_string())
                .and_then(|res| {
                    let policy = EvalPolicy::Composite(res.composite(&cell));
                    let mut env = VvcEnv::new(env_shared.model.clone(), env_shared.profiles.clone(), cell.env.clone())
                        .map_err(|e| e.to_string())?;
                    evaluate(&policy, &mut env, &cell.test_days).map_err(|e| e.to_string())
                });
            match result {
                Ok(r) => SweepRow { w_cost: w, score: Some(r.mean_score), sum_q: Some(r.sum_q_total), error: None },
                Err(e) => SweepRow { w_cost: w, score: None, sum_q: None, error: Some(e) },
            }
        })
        .collect();
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("w_cost,score,sum_q,error\n");
    let f = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.w_cost, f(r.score), f(r.sum_q), r.error.as_deref().unwrap_or("")));
    }
    out
}

/// Per-day summary CSV plus a final `all` row.
pub fn summary_csv(report: &EvalReport, step_minutes: Option<u32>) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "day", "steps", "mean_score", "sum_q", "events", "mean_duration", "std_duration", "p25", "p50", "p75",
        "max_duration", "nodes_at_max", "integration_sum",
    ])?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    let mut rows: Vec<(String, usize, f64, f64, &EventStats)> = report
        .per_day
        .iter()
        .map(|d| (d.day.to_string(), d.steps, d.mean_score, d.sum_q, &d.events))
        .collect();
    if !report.per_day.is_empty() {
        rows.push(("all".into(), report.steps, report.mean_score, report.sum_q_total, &report.events));
    }
    for (day, steps, score, q, ev) in rows {
        let ev = step_minutes.map_or_else(|| ev.clone(), |m| ev.in_minutes(m));
        w.write_record([
            day,
            steps.to_string(),
            score.to_string(),
            q.to_string(),
            ev.count.to_string(),
            opt(ev.mean),
            opt(ev.std),
            opt(ev.p25),
            opt(ev.p50),
            opt(ev.p75),
            ev.max_duration.to_string(),
            ev.nodes_at_max.to_string(),
            ev.integration_sum.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?).expect("csv is utf-8"))
}

/// Long format: one row per step and node.
pub fn voltages_csv(report: &EvalReport) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["day", "t", "node", "voltage"])?;
    for r in &report.trace {
        for (node, v) in report.nodes.iter().zip(&r.voltages) {
            w.write_record([r.day.to_string(), r.t.to_string(), node.clone(), v.to_string()])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?).expect("csv is utf-8"))
}

/// Writes `report.json`, `summary.csv` and `voltages.csv` into `dir`.
pub fn export_report(report: &EvalReport, dir: &Path, step_minutes: Option<u32>) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join("summary.csv"), summary_csv(report, step_minutes)?)?;
    std::fs::write(dir.join("voltages.csv"), voltages_csv(report)?)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport, EvalError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Σ|Q| per PV keyed by PV bus, convenient for display.
pub fn sum_q_by_pv(report: &EvalReport) -> BTreeMap<String, f64> {
    report.pv_ids.iter().cloned().zip(report.sum_q_per_pv.iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::feeder::FeederModel;
    use crate::profiles::ProfileSet;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn durations(events: &[ViolationEvent]) -> Vec<usize> {
        events.iter().map(|e| e.duration).collect()
    }

    #[test]
    fn droop_points() {
        let c = VoltVarCurve::default();
        c.validate().unwrap();
        assert_eq!(conventional_controller(&c, 1.00, 100.0), 0.0);
        assert!((conventional_controller(&c, 0.92, 100.0) - 44.0).abs() < 1e-12);
        assert!((conventional_controller(&c, 1.05, 100.0) + 22.0).abs() < 1e-12);
        assert!((conventional_controller(&c, 0.80, 100.0) - 44.0).abs() < 1e-12);
        assert!((conventional_controller(&c, 1.20, 100.0) + 44.0).abs() < 1e-12);
        let bad = VoltVarCurve { points: vec![(1.0, 0.0), (0.9, 0.1)] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn event_examples() {
        let t = [1.02, 1.04, 1.05, 1.02, 1.00, 1.02];
        let ev = detect_node_events("n", &t, 1.01, 1.03);
        assert_eq!(durations(&ev), vec![2, 1]);
        assert_eq!(ev[0].start_step, 1);
        assert_eq!(ev[1].start_step, 4);
        assert!(detect_node_events("n", &[1.02; 5], 1.01, 1.03).is_empty());
        assert_eq!(durations(&detect_node_events("n", &[0.9; 7], 1.01, 1.03)), vec![7]);
    }

    #[test]
    fn stats_examples() {
        let ev = |d: &[usize]| -> Vec<ViolationEvent> {
            d.iter()
                .enumerate()
                .map(|(k, &duration)| ViolationEvent { node: format!("n{k}"), start_step: 0, duration })
                .collect()
        };
        let s = event_statistics(&ev(&[2, 1]));
        assert_eq!((s.count, s.mean, s.max_duration, s.integration_sum), (2, Some(1.5), 2.0, 3.0));
        assert_eq!(s.nodes_at_max, 1);
        let s = event_statistics(&[]);
        assert_eq!((s.count, s.integration_sum, s.mean), (0, 0.0, None));
        let s = event_statistics(&ev(&[5, 5, 5, 5]));
        assert_eq!(s.std, Some(0.0));
        assert_eq!((s.p25, s.p50, s.p75, s.max_duration), (Some(5.0), Some(5.0), Some(5.0), 5.0));
        assert_eq!(s.nodes_at_max, 4);
        let s = event_statistics(&ev(&[1, 2, 3, 4]));
        assert_eq!((s.p25, s.p50, s.p75), (Some(1.0), Some(2.0), Some(3.0)));
        let m = s.in_minutes(5);
        assert_eq!((m.max_duration, m.integration_sum, m.count), (20.0, 50.0, 4));
    }

    proptest! {
        #[test]
        fn events_partition_out_of_band_steps(trace in prop::collection::vec(0.97f64..1.06, 1..60), pad in 0usize..5) {
            let ev = detect_node_events("n", &trace, 1.0, 1.03);
            let out = trace.iter().filter(|&&v| !(1.0..=1.03).contains(&v)).count();
            prop_assert_eq!(ev.iter().map(|e| e.duration).sum::<usize>(), out);
            let mut padded = vec![1.02; pad];
            padded.extend_from_slice(&trace);
            padded.extend(std::iter::repeat_n(1.02, pad));
            let ev2 = detect_node_events("n", &padded, 1.0, 1.03);
            prop_assert_eq!(durations(&ev), durations(&ev2));
            let stats = event_statistics(&ev);
            if stats.count > 0 {
                prop_assert!(stats.p25 <= stats.p50 && stats.p50 <= stats.p75);
                prop_assert!(stats.p75.unwrap() <= stats.max_duration);
            }
        }

        #[test]
        fn droop_is_non_increasing(v1 in 0.8f64..1.2, v2 in 0.8f64..1.2) {
            let c = VoltVarCurve::default();
            let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
            prop_assert!(c.fraction(lo) >= c.fraction(hi));
        }
    }

    fn flat_env(source: f64) -> VvcEnv {
        let mut doc = FeederModel::bundled_13().document().clone();
        doc.source_voltage_pu = source;
        let model = FeederModel::from_document(doc).unwrap();
        let mut series = BTreeMap::new();
        for id in model.loads().iter().map(|l| l.profile.clone()).chain(model.pvs().iter().map(|p| p.profile.clone())) {
            series.insert(id, vec![0.0; 288 * 2]);
        }
        let profiles = ProfileSet::new(5, series).unwrap();
        VvcEnv::new(Arc::new(model), Arc::new(profiles), EnvConfig::default()).unwrap()
    }

    #[test]
    fn do_nothing_and_deadband_spend_no_q() {
        let mut env = flat_env(1.0);
        let r = evaluate(&EvalPolicy::DoNothing, &mut env, &[0]).unwrap();
        assert_eq!(r.sum_q_total, 0.0);
        assert_eq!(r.steps, r.episodes * 6);
        assert!(r.failed.is_empty());
        let r = evaluate(&EvalPolicy::Conventional(VoltVarCurve::default()), &mut env, &[0, 1]).unwrap();
        assert_eq!(r.sum_q_total, 0.0);
        assert_eq!(r.per_day.len(), 2);
        // Every node sits at 1.0, below the 1.01 lower limit, for the whole day.
        assert_eq!(r.per_day[0].events.count, env.node_count());
        assert_eq!(r.per_day[0].events.max_duration, r.per_day[0].steps as f64);
    }

    #[test]
    fn conventional_reacts_outside_deadband() {
        let mut env = flat_env(0.95);
        let r = evaluate(&EvalPolicy::Conventional(VoltVarCurve::default()), &mut env, &[0]).unwrap();
        assert!(r.sum_q_per_pv.iter().all(|&q| q > 0.0));
        assert!((r.sum_q_total - r.sum_q_per_pv.iter().sum::<f64>()).abs() < 1e-9);
        for (q, lim) in r.sum_q_per_pv.iter().zip(env.q_limits()) {
            assert!(*q <= r.steps as f64 * lim + 1e-9);
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_exports() {
        let mut env = flat_env(1.02);
        let p = EvalPolicy::Conventional(VoltVarCurve::default());
        let a = evaluate(&p, &mut env, &[1, 0]).unwrap();
        let b = evaluate(&p, &mut env, &[0, 1]).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        export_report(&a, dir.path(), Some(5)).unwrap();
        assert_eq!(read_report(&dir.path().join("report.json")).unwrap(), a);
        let volts = std::fs::read_to_string(dir.path().join("voltages.csv")).unwrap();
        assert_eq!(volts.lines().count(), 1 + a.steps * a.nodes.len());

        let empty = EvalReport::empty("x", vec![], vec![]);
        assert_eq!(voltages_csv(&empty).unwrap().lines().count(), 1);
        assert_eq!(summary_csv(&empty, None).unwrap().lines().count(), 1);
    }

    #[test]
    fn roster_mismatch_is_rejected() {
        let mut env = flat_env(1.0);
        let p = EvalPolicy::Stage1(StagePolicy { stage: trainer::Stage::S1, actors: vec![], a_th: 0.05, q_fix: 1.0 });
        assert!(matches!(evaluate(&p, &mut env, &[0]), Err(EvalError::Roster(_))));
    }
}
