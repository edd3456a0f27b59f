//! Radial feeder model and backward/forward sweep power flow.
//!
//! Quantities in the feeder document are physical (kW, kVAR) except line
//! impedances and the source voltage, which are per unit on `base_power_kva`.
//! Injections are signed from the network's point of view: loads draw a
//! negative injection, PV farms inject positive power.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Reactive capability of an inverter as a fraction of its kVA rating.
pub const Q_LIMIT_FRACTION: f64 = 0.44;
/// Inverter oversizing relative to the installed PV capacity.
pub const INVERTER_OVERSIZE: f64 = 1.08;

const FEEDER_123: &str = include_str!("../data/feeder123.json");
const FEEDER_13: &str = include_str!("../data/feeder13.json");

#[derive(Debug, Error)]
pub enum FeederError {
    #[error("malformed feeder document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error reading feeder: {0}")]
    Io(#[from] std::io::Error),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge after {iterations} sweeps (last mismatch {mismatch:e} p.u.)")]
    NotConverged { iterations: usize, mismatch: f64 },
    #[error("power flow diverged at sweep {iteration}: voltage collapse at bus index {bus}")]
    Diverged { iteration: usize, bus: usize },
    #[error("injection vector has {got} entries, feeder has {expected} buses")]
    Shape { expected: usize, got: usize },
    #[error("unknown bus `{0}` in injection map")]
    UnknownBus(String),
}

/// Bus identifier. Documents may write ids either as strings or integers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct BusId(pub String);

impl<'de> Deserialize<'de> for BusId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Str(String),
            Int(i64),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Str(s) => BusId(s),
            Repr::Int(i) => BusId(i.to_string()),
        })
    }
}

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for BusId {
    fn from(s: &str) -> Self {
        BusId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub r_pu: f64,
    pub x_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: BusId,
    pub p_kw: f64,
    pub q_kvar: f64,
    pub profile: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvFarm {
    pub bus: BusId,
    pub p_rated_kw: f64,
    pub profile: String,
}

impl PvFarm {
    /// Inverter apparent-power rating in kVA.
    pub fn s_rated(&self) -> f64 {
        INVERTER_OVERSIZE * self.p_rated_kw
    }

    pub fn q_limit(&self) -> f64 {
        pv_q_limit(self)
    }
}

/// Largest reactive power magnitude (kVAR) the PV inverter may command.
pub fn pv_q_limit(pv: &PvFarm) -> f64 {
    Q_LIMIT_FRACTION * INVERTER_OVERSIZE * pv.p_rated_kw
}

/// Serialized form of a feeder, one-to-one with the JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederDocument {
    pub base_power_kva: f64,
    pub source_bus: BusId,
    pub source_voltage_pu: f64,
    pub buses: Vec<BusId>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub loads: Vec<Load>,
    #[serde(default)]
    pub pvs: Vec<PvFarm>,
}

/// A validated radial feeder.
///
/// Construction checks that the lines form a spanning tree rooted at the
/// source bus and precomputes the sweep ordering used by the solver.
#[derive(Debug, Clone)]
pub struct FeederModel {
    doc: FeederDocument,
    index: HashMap<BusId, usize>,
    source: usize,
    /// Breadth-first order from the source; parents precede children.
    order: Vec<usize>,
    /// Parent bus of every non-source bus (`usize::MAX` for the source).
    parent: Vec<usize>,
    /// Series impedance of the line joining a bus to its parent.
    upstream_z: Vec<Complex64>,
    load_bus: Vec<usize>,
    pv_bus: Vec<usize>,
}

impl FeederModel {
    pub fn from_json(text: &str) -> Result<Self, FeederError> {
        let doc: FeederDocument = serde_json::from_str(text)?;
        Self::from_document(doc)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, FeederError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The bundled 123-node positive-sequence feeder with three PV farms.
    pub fn bundled_123() -> Self {
        Self::from_json(FEEDER_123).expect("bundled feeder123.json is valid")
    }

    /// The bundled 13-node desk-scale feeder with two PV farms.
    pub fn bundled_13() -> Self {
        Self::from_json(FEEDER_13).expect("bundled feeder13.json is valid")
    }

    /// Resolves `feeder123.json` / `feeder13.json` to the bundled copies,
    /// otherwise reads the path from disk.
    pub fn load(name_or_path: &str) -> Result<Self, FeederError> {
        match name_or_path {
            "feeder123" | "feeder123.json" => Ok(Self::bundled_123()),
            "feeder13" | "feeder13.json" => Ok(Self::bundled_13()),
            p => Self::from_path(p),
        }
    }

    pub fn from_document(doc: FeederDocument) -> Result<Self, FeederError> {
        if !(doc.base_power_kva > 0.0 && doc.base_power_kva.is_finite()) {
            return Err(FeederError::Invalid("base_power_kva must be positive".into()));
        }
        if !(doc.source_voltage_pu > 0.0 && doc.source_voltage_pu.is_finite()) {
            return Err(FeederError::Invalid("source_voltage_pu must be positive".into()));
        }
        let n = doc.buses.len();
        let mut index = HashMap::with_capacity(n);
        for (i, b) in doc.buses.iter().enumerate() {
            if index.insert(b.clone(), i).is_some() {
                return Err(FeederError::Topology(format!("duplicate bus `{b}`")));
            }
        }
        let lookup = |b: &BusId, what: &str| {
            index
                .get(b)
                .copied()
                .ok_or_else(|| FeederError::Topology(format!("{what} references unknown bus `{b}`")))
        };
        let source = lookup(&doc.source_bus, "source_bus")?;

        if doc.lines.len() + 1 != n {
            return Err(FeederError::Topology(format!(
                "radial feeder with {n} buses needs {} lines, found {}",
                n.saturating_sub(1),
                doc.lines.len()
            )));
        }
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (li, line) in doc.lines.iter().enumerate() {
            let a = lookup(&line.from, "line")?;
            let b = lookup(&line.to, "line")?;
            if a == b {
                return Err(FeederError::Topology(format!("line {li} is a self-loop at `{}`", line.from)));
            }
            if !(line.r_pu >= 0.0) || !line.x_pu.is_finite() || !line.r_pu.is_finite() {
                return Err(FeederError::Invalid(format!(
                    "line {}-{} has invalid impedance",
                    line.from, line.to
                )));
            }
            adjacency[a].push((b, li));
            adjacency[b].push((a, li));
        }

        let mut parent = vec![usize::MAX; n];
        let mut upstream_z = vec![Complex64::new(0.0, 0.0); n];
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([source]);
        visited[source] = true;
        while let Some(k) = queue.pop_front() {
            order.push(k);
            for &(m, li) in &adjacency[k] {
                if visited[m] {
                    if parent[k] != m {
                        return Err(FeederError::Topology(format!(
                            "cycle detected through line {}-{}",
                            doc.lines[li].from, doc.lines[li].to
                        )));
                    }
                    continue;
                }
                visited[m] = true;
                parent[m] = k;
                upstream_z[m] = Complex64::new(doc.lines[li].r_pu, doc.lines[li].x_pu);
                queue.push_back(m);
            }
        }
        if let Some(k) = visited.iter().position(|v| !v) {
            return Err(FeederError::Topology(format!(
                "bus `{}` is not connected to the source",
                doc.buses[k]
            )));
        }

        let mut load_bus = Vec::with_capacity(doc.loads.len());
        for load in &doc.loads {
            if !(load.p_kw >= 0.0) {
                return Err(FeederError::Invalid(format!("load at `{}` has negative p_kw", load.bus)));
            }
            load_bus.push(lookup(&load.bus, "load")?);
        }
        let mut pv_bus = Vec::with_capacity(doc.pvs.len());
        for pv in &doc.pvs {
            if !(pv.p_rated_kw >= 0.0) {
                return Err(FeederError::Invalid(format!("pv at `{}` has negative rating", pv.bus)));
            }
            pv_bus.push(lookup(&pv.bus, "pv")?);
        }

        Ok(Self {
            doc,
            index,
            source,
            order,
            parent,
            upstream_z,
            load_bus,
            pv_bus,
        })
    }

    pub fn document(&self) -> &FeederDocument {
        &self.doc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("feeder document serializes")
    }

    pub fn bus_count(&self) -> usize {
        self.doc.buses.len()
    }

    pub fn buses(&self) -> &[BusId] {
        &self.doc.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.doc.lines
    }

    pub fn loads(&self) -> &[Load] {
        &self.doc.loads
    }

    pub fn pvs(&self) -> &[PvFarm] {
        &self.doc.pvs
    }

    pub fn base_power(&self) -> f64 {
        self.doc.base_power_kva
    }

    pub fn source_voltage(&self) -> f64 {
        self.doc.source_voltage_pu
    }

    pub fn source_index(&self) -> usize {
        self.source
    }

    pub fn bus_index(&self, bus: &BusId) -> Option<usize> {
        self.index.get(bus).copied()
    }

    pub fn parent_of(&self, bus: usize) -> Option<usize> {
        (bus != self.source).then(|| self.parent[bus])
    }

    /// Bus index of every load, in document order.
    pub fn load_buses(&self) -> &[usize] {
        &self.load_bus
    }

    /// Bus index of every PV farm, in document order.
    pub fn pv_buses(&self) -> &[usize] {
        &self.pv_bus
    }

    /// Every bus reachable from the source with exactly `n - 1` lines.
    pub fn is_radial(&self) -> bool {
        self.order.len() == self.bus_count() && self.doc.lines.len() + 1 == self.bus_count()
    }

    /// Solves with the default tolerance and iteration cap.
    pub fn solve(&self, injections: &Injections) -> Result<PowerFlowResult, PowerFlowError> {
        self.solve_with(injections, &SolverOptions::default())
    }

    pub fn solve_with(
        &self,
        injections: &Injections,
        opts: &SolverOptions,
    ) -> Result<PowerFlowResult, PowerFlowError> {
        let n = self.bus_count();
        if injections.0.len() != n {
            return Err(PowerFlowError::Shape { expected: n, got: injections.0.len() });
        }
        let base = self.doc.base_power_kva;
        // Complex power consumed at each bus, per unit.
        let demand: Vec<Complex64> = injections.0.iter().map(|s| -s / base).collect();
        let v0 = Complex64::new(self.doc.source_voltage_pu, 0.0);
        let mut v = vec![v0; n];
        let mut current = vec![Complex64::new(0.0, 0.0); n];
        let mut mismatch = f64::INFINITY;

        for iteration in 1..=opts.max_iterations {
            self.backward(&demand, &v, &mut current);
            mismatch = 0.0;
            for &k in &self.order[1..] {
                let next = v[self.parent[k]] - self.upstream_z[k] * current[k];
                mismatch = f64::max(mismatch, (next - v[k]).norm());
                v[k] = next;
                if !(v[k].norm() > 1e-3) {
                    return Err(PowerFlowError::Diverged { iteration, bus: k });
                }
            }
            if mismatch < opts.tolerance {
                self.backward(&demand, &v, &mut current);
                let head = v0 * current[self.source].conj() * base;
                return Ok(PowerFlowResult {
                    voltages: v.iter().map(|x| x.norm()).collect(),
                    phasors: v,
                    feeder_head_p: head.re,
                    feeder_head_q: head.im,
                    iterations: iteration,
                    converged: true,
                    mismatch,
                });
            }
        }
        Err(PowerFlowError::NotConverged { iterations: opts.max_iterations, mismatch })
    }

    /// Leaf-to-root current aggregation. `current[k]` ends as the current
    /// flowing from `parent[k]` into the subtree of `k`; at the source it is
    /// the total current drawn from the substation.
    fn backward(&self, demand: &[Complex64], v: &[Complex64], current: &mut [Complex64]) {
        for k in 0..demand.len() {
            current[k] = (demand[k] / v[k]).conj();
        }
        for &k in self.order[1..].iter().rev() {
            let c = current[k];
            current[self.parent[k]] += c;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 100 }
    }
}

/// Net complex power injection per bus (kW + j kVAR), indexed like
/// [`FeederModel::buses`].
#[derive(Debug, Clone, PartialEq)]
pub struct Injections(pub Vec<Complex64>);

impl Injections {
    pub fn zeros(model: &FeederModel) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); model.bus_count()])
    }

    pub fn add(&mut self, bus: usize, p_kw: f64, q_kvar: f64) {
        self.0[bus] += Complex64::new(p_kw, q_kvar);
    }

    pub fn from_map(
        model: &FeederModel,
        map: &HashMap<BusId, (f64, f64)>,
    ) -> Result<Self, PowerFlowError> {
        let mut inj = Self::zeros(model);
        for (bus, &(p, q)) in map {
            let k = model.bus_index(bus).ok_or_else(|| PowerFlowError::UnknownBus(bus.0.clone()))?;
            inj.add(k, p, q);
        }
        Ok(inj)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowResult {
    /// Voltage magnitude per bus, per unit.
    pub voltages: Vec<f64>,
    pub phasors: Vec<Complex64>,
    /// Active power delivered by the substation, kW.
    pub feeder_head_p: f64,
    /// Reactive power delivered by the substation, kVAR.
    pub feeder_head_q: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest voltage change in the final sweep.
    pub mismatch: f64,
}

impl PowerFlowResult {
    pub fn voltage_map(&self, model: &FeederModel) -> HashMap<BusId, f64> {
        model.buses().iter().cloned().zip(self.voltages.iter().copied()).collect()
    }
}
