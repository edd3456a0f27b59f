//! Load and PV time series: CSV ingestion, synthetic generation and
//! per-step snapshots of the feeder's injections.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::FeederModel;

pub const DEFAULT_STEP_MINUTES: u32 = 5;
pub const DEFAULT_EPISODE_LENGTH: usize = 6;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile document is empty")]
    Empty,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("header must start with `t`, found `{0}`")]
    Header(String),
    #[error("row {row} has {got} fields, expected {expected}")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("row {row}, column `{column}`: {reason}")]
    Value { row: usize, column: String, reason: String },
    #[error("step {t} outside horizon {horizon}")]
    OutOfRange { t: usize, horizon: usize },
    #[error("no series named `{0}`")]
    MissingProfile(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// A set of equal-length multiplier series sampled every `step_minutes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub step_minutes: u32,
    pub horizon: usize,
    pub series: BTreeMap<String, Vec<f64>>,
}

impl ProfileSet {
    pub fn new(step_minutes: u32, series: BTreeMap<String, Vec<f64>>) -> Result<Self, ProfileError> {
        if step_minutes == 0 {
            return Err(ProfileError::Config("step_minutes must be positive".into()));
        }
        let horizon = series.values().next().map_or(0, Vec::len);
        if horizon == 0 {
            return Err(ProfileError::Empty);
        }
        for (id, s) in &series {
            if s.len() != horizon {
                return Err(ProfileError::Config(format!(
                    "series `{id}` has length {}, expected {horizon}",
                    s.len()
                )));
            }
            if let Some(row) = s.iter().position(|x| !(*x >= 0.0 && x.is_finite())) {
                return Err(ProfileError::Value {
                    row,
                    column: id.clone(),
                    reason: "multiplier must be finite and non-negative".into(),
                });
            }
        }
        Ok(Self { step_minutes, horizon, series })
    }

    pub fn steps_per_day(&self) -> usize {
        (24 * 60 / self.step_minutes as usize).max(1)
    }

    pub fn days(&self) -> usize {
        self.horizon.div_ceil(self.steps_per_day())
    }

    pub fn get(&self, id: &str) -> Result<&[f64], ProfileError> {
        self.series
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| ProfileError::MissingProfile(id.to_string()))
    }

    /// Consecutive non-overlapping windows covering one day.
    pub fn day_windows(&self, day: usize, length: usize) -> Vec<EpisodeWindow> {
        let spd = self.steps_per_day();
        let first = day * spd;
        (0..)
            .map(|k| first + k * length)
            .take_while(|&s| s < first + spd)
            .map(|start_step| EpisodeWindow { start_step, length })
            .filter(|w| w.validate(self.horizon).is_ok())
            .collect()
    }

    /// A window starting uniformly at random inside one of `days`.
    pub fn sample_window<R: Rng>(
        &self,
        days: &[usize],
        length: usize,
        rng: &mut R,
    ) -> Result<EpisodeWindow, ProfileError> {
        if days.is_empty() {
            return Err(ProfileError::Config("no days to sample from".into()));
        }
        let spd = self.steps_per_day();
        let day = days[rng.random_range(0..days.len())];
        let lo = day * spd;
        let hi = ((day + 1) * spd).min(self.horizon.saturating_sub(length));
        if hi <= lo {
            return Err(ProfileError::OutOfRange { t: lo + length, horizon: self.horizon });
        }
        Ok(EpisodeWindow { start_step: rng.random_range(lo..hi), length })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for id in self.series.keys() {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for t in 0..self.horizon {
            out.push_str(&t.to_string());
            for s in self.series.values() {
                out.push(',');
                out.push_str(&s[t].to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Parses a `t,<profile_id>,...` CSV document.
pub fn load_profiles(text: &str, step_minutes: u32) -> Result<ProfileSet, ProfileError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(ProfileError::Empty);
    }
    if &header[0] != "t" {
        return Err(ProfileError::Header(header[0].to_string()));
    }
    let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(ProfileError::Ragged { row, expected: header.len(), got: record.len() });
        }
        for (c, field) in record.iter().skip(1).enumerate() {
            let value: f64 = field.parse().map_err(|_| ProfileError::Value {
                row,
                column: ids[c].clone(),
                reason: format!("`{field}` is not a number"),
            })?;
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ProfileError::Value {
                    row,
                    column: ids[c].clone(),
                    reason: format!("multiplier {value} is negative or non-finite"),
                });
            }
            columns[c].push(value);
        }
    }
    if ids.is_empty() || columns[0].is_empty() {
        return Err(ProfileError::Empty);
    }
    ProfileSet::new(step_minutes, ids.into_iter().zip(columns).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadShape {
    /// Overnight floor of the normalized load.
    pub base: f64,
    pub morning_peak: f64,
    pub evening_peak: f64,
    /// Standard deviation of the multiplicative per-step noise.
    pub noise: f64,
    /// Half-width of the uniform day-to-day scaling around 1.
    pub day_spread: f64,
}

impl Default for LoadShape {
    fn default() -> Self {
        Self { base: 0.45, morning_peak: 0.25, evening_peak: 0.55, noise: 0.03, day_spread: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub days: usize,
    pub step_minutes: u32,
    pub seed: u64,
    /// Expected passing-cloud events per daylight hour.
    pub cloud_intensity: f64,
    /// Lowest clear-sky peak drawn for a day; the highest is 1.
    pub pv_peak_min: f64,
    pub load_shape: LoadShape,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 8,
            step_minutes: DEFAULT_STEP_MINUTES,
            seed: 7,
            cloud_intensity: 0.5,
            pv_peak_min: 0.6,
            load_shape: LoadShape::default(),
        }
    }
}

pub const SUNRISE_HOUR: f64 = 6.0;
pub const SUNSET_HOUR: f64 = 18.0;

/// Normalized clear-sky irradiance shape at an hour of the day.
pub fn clear_sky(hour: f64) -> f64 {
    if hour <= SUNRISE_HOUR || hour >= SUNSET_HOUR {
        0.0
    } else {
        (std::f64::consts::PI * (hour - SUNRISE_HOUR) / (SUNSET_HOUR - SUNRISE_HOUR)).sin()
    }
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((hour - center) / width).powi(2)).exp()
}

/// Diurnal double-peak load shape before noise and day scaling.
pub fn load_shape_at(shape: &LoadShape, hour: f64) -> f64 {
    shape.base + shape.morning_peak * bump(hour, 8.0, 1.5) + shape.evening_peak * bump(hour, 19.0, 2.0)
}

/// Generates one series per profile id referenced by `model`. PV ids get
/// clear-sky bells with cloud dips; every other id gets a load curve.
pub fn synth_profiles(cfg: &SynthConfig, model: &FeederModel) -> Result<ProfileSet, ProfileError> {
    if cfg.days == 0 {
        return Err(ProfileError::Config("days must be >= 1".into()));
    }
    if cfg.step_minutes == 0 || 1440 % cfg.step_minutes != 0 {
        return Err(ProfileError::Config("step_minutes must divide a day".into()));
    }
    let pv_ids: BTreeSet<&str> = model.pvs().iter().map(|p| p.profile.as_str()).collect();
    let load_ids: BTreeSet<&str> = model
        .loads()
        .iter()
        .map(|l| l.profile.as_str())
        .filter(|id| !pv_ids.contains(id))
        .collect();

    let spd = 1440 / cfg.step_minutes as usize;
    let horizon = cfg.days * spd;
    let dt_hours = cfg.step_minutes as f64 / 60.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let shape = cfg.load_shape;
    let load_scale: Vec<f64> = (0..cfg.days)
        .map(|_| 1.0 + shape.day_spread * rng.random_range(-1.0..=1.0))
        .collect();
    let pv_peak: Vec<f64> = (0..cfg.days)
        .map(|_| rng.random_range(cfg.pv_peak_min.min(1.0)..=1.0))
        .collect();
    let peak_shape = (0..spd)
        .map(|k| load_shape_at(&shape, k as f64 * dt_hours))
        .fold(0.0, f64::max);

    let mut series = BTreeMap::new();
    for id in &load_ids {
        let noise = Normal::new(0.0, shape.noise.max(0.0)).expect("finite noise");
        let s: Vec<f64> = (0..horizon)
            .map(|t| {
                let hour = (t % spd) as f64 * dt_hours;
                let base = load_shape_at(&shape, hour) / peak_shape * load_scale[t / spd];
                (base * (1.0 + noise.sample(&mut rng))).max(0.0)
            })
            .collect();
        series.insert(id.to_string(), s);
    }

    let daylight_steps = ((SUNSET_HOUR - SUNRISE_HOUR) / dt_hours) as usize;
    let first_light = (SUNRISE_HOUR / dt_hours) as usize;
    for id in &pv_ids {
        let mut s: Vec<f64> = (0..horizon)
            .map(|t| clear_sky((t % spd) as f64 * dt_hours) * pv_peak[t / spd])
            .collect();
        if cfg.cloud_intensity > 0.0 {
            let mean_events = cfg.cloud_intensity * (SUNSET_HOUR - SUNRISE_HOUR);
            let events = Poisson::new(mean_events).expect("positive rate");
            for day in 0..cfg.days {
                let count = events.sample(&mut rng) as usize;
                for _ in 0..count {
                    let start = day * spd + first_light + rng.random_range(0..daylight_steps);
                    let duration = rng.random_range(1..=6);
                    let depth = rng.random_range(0.2..=0.8);
                    for x in s.iter_mut().skip(start).take(duration) {
                        *x *= 1.0 - depth;
                    }
                }
            }
        }
        series.insert(id.to_string(), s);
    }
    ProfileSet::new(cfg.step_minutes, series)
}

/// A contiguous run of control steps. Stepping consumes snapshots
/// `start_step + 1 ..= start_step + length`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeWindow {
    pub start_step: usize,
    pub length: usize,
}

impl EpisodeWindow {
    pub fn new(start_step: usize) -> Self {
        Self { start_step, length: DEFAULT_EPISODE_LENGTH }
    }

    pub fn validate(&self, horizon: usize) -> Result<(), ProfileError> {
        if self.length == 0 {
            return Err(ProfileError::Config("episode length must be >= 1".into()));
        }
        let last = self.start_step + self.length;
        if last >= horizon {
            return Err(ProfileError::OutOfRange { t: last, horizon });
        }
        Ok(())
    }
}

/// Feeder injections available at one step, before any reactive control.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    /// Aggregated load per bus (kW + j kVAR consumed).
    pub load: Vec<Complex64>,
    /// Available real power per PV farm, kW.
    pub pv_available_p: Vec<f64>,
}

impl Snapshot {
    /// Net bus injections with PV farm `i` injecting `pv_available_p[i] + j q_kvar[i]`.
    pub fn injections(&self, model: &FeederModel, q_kvar: &[f64]) -> crate::feeder::Injections {
        let mut inj = crate::feeder::Injections(self.load.iter().map(|s| -s).collect());
        for (i, &bus) in model.pv_buses().iter().enumerate() {
            inj.add(bus, self.pv_available_p[i], q_kvar.get(i).copied().unwrap_or(0.0));
        }
        inj
    }
}

pub fn snapshot_at(profiles: &ProfileSet, model: &FeederModel, t: usize) -> Result<Snapshot, ProfileError> {
    if t >= profiles.horizon {
        return Err(ProfileError::OutOfRange { t, horizon: profiles.horizon });
    }
    let mut load = vec![Complex64::new(0.0, 0.0); model.bus_count()];
    for (l, &bus) in model.loads().iter().zip(model.load_buses()) {
        let m = profiles.get(&l.profile)?[t];
        load[bus] += Complex64::new(l.p_kw * m, l.q_kvar * m);
    }
    let pv_available_p = model
        .pvs()
        .iter()
        .map(|pv| Ok(pv.p_rated_kw * profiles.get(&pv.profile)?[t].min(1.0)))
        .collect::<Result<_, ProfileError>>()?;
    Ok(Snapshot { t, load, pv_available_p })
}
