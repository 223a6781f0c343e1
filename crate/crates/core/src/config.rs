//! Scenario configuration: defaults, dotted-key TOML parsing and validation.
//!
//! A config file is TOML whose tables flatten to dotted keys such as
//! `env.rate_hi_mbps` or `region.3.kind`. Command-line overrides use the same
//! keys and are applied after the file, last one winning.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{EnvConfig, ShiftedExp};
use crate::error::{Error, Result};
use crate::penalty::{PenaltyModel, ScenarioKind, SurfaceParams};
use crate::region::SensorSpec;
use crate::sched::{SchedulerConfig, SchedulerKind};
use crate::volume::{ExpectationMethod, VolumeBounds};

/// Saliency weights of a corridor region (two roadside sensors).
pub const CORRIDOR_WEIGHTS: [f64; 2] = [1.0, 0.6];
/// Saliency weights of an intersection region (four sensors).
pub const INTERSECTION_WEIGHTS: [f64; 4] = [1.0, 0.6, 0.4, 0.4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RosterPreset {
    /// Every region is a corridor.
    Homogeneous,
    /// Alternating corridor and intersection regions.
    Heterogeneous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColdStart {
    /// Regions start as if their last task used `b_max`.
    MaxVolume,
    /// AP is not counted for a region until its first completion.
    Exclude,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RosterConfig {
    pub preset: RosterPreset,
    pub count: usize,
    pub gamma_mb: f64,
    pub v: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionOverride {
    pub kind: Option<ScenarioKind>,
    pub gamma_mb: Option<f64>,
    pub v: Option<f64>,
    pub weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Parameter overrides for the intersection surface, by name.
    pub intersection: BTreeMap<String, f64>,
    /// Parameter overrides for the corridor surface, by name.
    pub corridor: BTreeMap<String, f64>,
    pub compensation_window_s: f64,
    pub compensation_cap_ap: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            intersection: BTreeMap::new(),
            corridor: BTreeMap::new(),
            compensation_window_s: crate::penalty::DEFAULT_COMPENSATION_WINDOW_S,
            compensation_cap_ap: crate::penalty::DEFAULT_COMPENSATION_CAP_AP,
        }
    }
}

const INTERSECTION_KEYS: [&str; 6] = ["alpha", "beta", "gamma", "delta", "epsilon", "rho_max"];
const CORRIDOR_KEYS: [&str; 6] = ["kappa", "lambda", "lambda0", "nu", "mu", "rho_max"];

impl PenaltyConfig {
    /// Default surface for `kind`, with overrides applied. Unless `rho_max`
    /// is overridden it is calibrated so the penalty is zero at `(0, b_max)`.
    pub fn model(&self, kind: ScenarioKind, tau_ms: f64, b_max_mb: f64) -> Result<PenaltyModel> {
        let mut model = PenaltyModel::default_for(kind, tau_ms, b_max_mb)?;
        let overrides = match kind {
            ScenarioKind::Intersection => &self.intersection,
            ScenarioKind::Corridor => &self.corridor,
        };
        for (name, &value) in overrides {
            let key = || format!("penalty.{}.{}", kind.as_str(), name);
            match &mut model.surface {
                SurfaceParams::Intersection(p) => match name.as_str() {
                    "alpha" => p.alpha = value,
                    "beta" => p.beta = value,
                    "gamma" => p.gamma = value,
                    "delta" => p.delta = value,
                    "epsilon" => p.epsilon = value,
                    "rho_max" => p.rho_max = value,
                    _ => return Err(Error::config(key(), "unknown parameter")),
                },
                SurfaceParams::Corridor(p) => match name.as_str() {
                    "kappa" => p.kappa = value,
                    "lambda" => p.lambda = value,
                    "lambda0" => p.lambda0 = value,
                    "nu" => p.nu = value,
                    "mu" => p.mu = value,
                    "rho_max" => p.rho_max = value,
                    _ => return Err(Error::config(key(), "unknown parameter")),
                },
            }
        }
        model.compensation_window_s = self.compensation_window_s;
        model.compensation_cap_ap = self.compensation_cap_ap;
        if !overrides.contains_key("rho_max") {
            model = model.with_rho_max_at(b_max_mb).map_err(|e| rename(e, format!("penalty.{}", kind.as_str())))?;
        }
        model
            .validate()
            .map_err(|e| rename(e, format!("penalty.{}", kind.as_str())))?;
        Ok(model)
    }
}

fn rename(err: Error, key: String) -> Error {
    match err {
        Error::Domain(reason) => Error::Config { key, reason },
        other => other,
    }
}

/// Everything needed to run one simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub env: EnvConfig,
    pub volume: VolumeBounds,
    pub scheduler: SchedulerConfig,
    /// Fixed volumes tried for each baseline in a sweep.
    pub b_fixed_list: Vec<f64>,
    pub horizon: u64,
    pub warmup: u64,
    pub cold_start: ColdStart,
    pub seed: u64,
    pub roster: RosterConfig,
    pub regions: BTreeMap<usize, RegionOverride>,
    pub penalty: PenaltyConfig,
    pub output_path: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            env: EnvConfig::default(),
            volume: VolumeBounds::default(),
            scheduler: SchedulerConfig::default(),
            b_fixed_list: vec![8.0, 14.0],
            horizon: 5000,
            warmup: 200,
            cold_start: ColdStart::MaxVolume,
            seed: 0,
            roster: RosterConfig {
                preset: RosterPreset::Homogeneous,
                count: 20,
                gamma_mb: 2.0,
                v: 1e-3,
            },
            regions: BTreeMap::new(),
            penalty: PenaltyConfig::default(),
            output_path: None,
        }
    }
}

/// A region after roster expansion and overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSpec {
    pub id: usize,
    pub kind: ScenarioKind,
    pub sensors: Vec<SensorSpec>,
    pub gamma: f64,
    pub v: f64,
    pub model: PenaltyModel,
}

fn as_f64(key: &str, value: &toml::Value) -> Result<f64> {
    match value {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::String(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::config(key, format!("expected a number, got `{s}`"))),
        other => Err(Error::config(key, format!("expected a number, got {other}"))),
    }
}

fn as_u64(key: &str, value: &toml::Value) -> Result<u64> {
    match value {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        toml::Value::String(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::config(key, format!("expected a nonnegative integer, got `{s}`"))),
        other => Err(Error::config(key, format!("expected a nonnegative integer, got {other}"))),
    }
}

fn as_str<'a>(key: &str, value: &'a toml::Value) -> Result<&'a str> {
    value
        .as_str()
        .ok_or_else(|| Error::config(key, format!("expected a string, got {value}")))
}

fn as_f64_list(key: &str, value: &toml::Value) -> Result<Vec<f64>> {
    match value {
        toml::Value::Array(items) => items.iter().map(|v| as_f64(key, v)).collect(),
        toml::Value::String(s) => s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| as_f64(key, &toml::Value::String(p.to_string())))
            .collect(),
        other => Err(Error::config(key, format!("expected a list of numbers, got {other}"))),
    }
}

fn parse_enum<T: for<'de> Deserialize<'de>>(key: &str, value: &toml::Value) -> Result<T> {
    let s = as_str(key, value)?;
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s))
        .map_err(|_| Error::config(key, format!("unknown value `{s}`")))
}

/// Flattens nested TOML tables into `(dotted.key, leaf)` pairs.
pub fn flatten_toml(table: &toml::Table) -> Vec<(String, toml::Value)> {
    fn walk(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
        for (k, v) in table {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(t) => walk(&key, t, out),
                leaf => out.push((key, leaf.clone())),
            }
        }
    }
    let mut out = Vec::new();
    walk("", table, &mut out);
    out
}

/// Parses a `key=value` override. Values that parse as TOML keep their
/// type; anything else is taken as a bare string.
pub fn parse_override(spec: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

impl ScenarioConfig {
    /// Reads a TOML file and applies its keys over the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        let mut cfg = ScenarioConfig::default();
        for (key, value) in flatten_toml(&table) {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    /// Applies one dotted key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &toml::Value) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["seed"] => self.seed = as_u64(key, value)?,
            ["output", "path"] => self.output_path = Some(PathBuf::from(as_str(key, value)?)),

            ["env", "rate_lo_mbps"] => self.env.rate.lo_mbps = as_f64(key, value)?,
            ["env", "rate_hi_mbps"] => self.env.rate.hi_mbps = as_f64(key, value)?,
            ["env", "ext_shift_ms"] => self.env.ext.shift_ms = as_f64(key, value)?,
            ["env", "ext_scale_ms"] => self.env.ext.scale_ms = as_f64(key, value)?,
            ["env", "det_shift_ms"] => self.env.det.shift_ms = as_f64(key, value)?,
            ["env", "det_scale_ms"] => self.env.det.scale_ms = as_f64(key, value)?,
            ["env", "compression_factor"] => self.env.compression_factor = as_f64(key, value)?,

            ["volume", "b_min_mb"] => self.volume.b_min = as_f64(key, value)?,
            ["volume", "b_max_mb"] => self.volume.b_max = as_f64(key, value)?,
            ["volume", "grid_points"] => self.volume.grid_points = as_u64(key, value)? as usize,
            ["volume", "golden_tol_mb"] => self.volume.golden_tol_mb = as_f64(key, value)?,
            ["volume", "e_f_method"] => self.volume.e_f_method = parse_enum::<ExpectationMethod>(key, value)?,

            ["scheduler", "kind"] => self.scheduler.kind = as_str(key, value)?.parse()?,
            ["scheduler", "b_fixed_mb"] => self.scheduler.b_fixed_mb = as_f64(key, value)?,
            ["scheduler", "b_fixed_list"] => self.b_fixed_list = as_f64_list(key, value)?,
            ["scheduler", "xi_tol_mb"] => self.scheduler.xi_tol_mb = as_f64(key, value)?,
            ["scheduler", "capacity_m"] => self.scheduler.capacity_m = as_u64(key, value)? as usize,
            ["scheduler", "b_total"] => self.scheduler.b_total = as_f64(key, value)?,

            ["sim", "horizon"] => self.horizon = as_u64(key, value)?,
            ["sim", "warmup"] => self.warmup = as_u64(key, value)?,
            ["sim", "tau_ms"] => self.env.tau_ms = as_f64(key, value)?,
            ["sim", "cold_start"] => self.cold_start = parse_enum(key, value)?,

            ["roster", "preset"] => self.roster.preset = parse_enum(key, value)?,
            ["roster", "count"] => self.roster.count = as_u64(key, value)? as usize,
            ["roster", "gamma_mb"] => self.roster.gamma_mb = as_f64(key, value)?,
            ["roster", "v"] => self.roster.v = as_f64(key, value)?,

            ["region", idx, field] => {
                let id: usize = idx
                    .parse()
                    .map_err(|_| Error::config(key, "region index must be a nonnegative integer"))?;
                let entry = self.regions.entry(id).or_default();
                match *field {
                    "kind" => entry.kind = Some(parse_enum(key, value)?),
                    "gamma_mb" => entry.gamma_mb = Some(as_f64(key, value)?),
                    "v" => entry.v = Some(as_f64(key, value)?),
                    "weights" => entry.weights = Some(as_f64_list(key, value)?),
                    _ => return Err(Error::config(key, "unknown key")),
                }
            }

            ["penalty", "compensation_window_s"] => self.penalty.compensation_window_s = as_f64(key, value)?,
            ["penalty", "compensation_cap_ap"] => self.penalty.compensation_cap_ap = as_f64(key, value)?,
            ["penalty", "intersection", name] if INTERSECTION_KEYS.contains(name) => {
                self.penalty.intersection.insert(name.to_string(), as_f64(key, value)?);
            }
            ["penalty", "corridor", name] if CORRIDOR_KEYS.contains(name) => {
                self.penalty.corridor.insert(name.to_string(), as_f64(key, value)?);
            }

            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for spec in overrides {
            let (key, value) = parse_override(spec.as_ref())?;
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.roster.count;
        let m = self.scheduler.capacity_m;
        if m == 0 {
            return Err(Error::config("scheduler.capacity_m", "must be >= 1"));
        }
        if a < m {
            return Err(Error::config(
                "roster.count",
                format!("needs at least capacity_m = {m} regions, got {a}"),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::config("sim.horizon", "must be >= 1"));
        }
        if self.warmup >= self.horizon {
            return Err(Error::config("sim.warmup", "must be smaller than the horizon"));
        }
        check_env(&self.env)?;
        self.volume
            .validate()
            .map_err(|e| rename(e, "volume".into()))?;
        self.scheduler.validate()?;
        if self.b_fixed_list.is_empty() || self.b_fixed_list.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::config("scheduler.b_fixed_list", "must be a nonempty list of positive volumes"));
        }
        check_budget("roster.gamma_mb", self.roster.gamma_mb)?;
        check_tradeoff("roster.v", self.roster.v)?;
        if !(self.penalty.compensation_window_s >= 0.0) {
            return Err(Error::config("penalty.compensation_window_s", "must be >= 0"));
        }
        if !(self.penalty.compensation_cap_ap >= 0.0) {
            return Err(Error::config("penalty.compensation_cap_ap", "must be >= 0"));
        }
        for (&id, o) in &self.regions {
            if id >= a {
                return Err(Error::config(format!("region.{id}"), format!("roster has only {a} regions")));
            }
            if let Some(g) = o.gamma_mb {
                check_budget(&format!("region.{id}.gamma_mb"), g)?;
            }
            if let Some(v) = o.v {
                check_tradeoff(&format!("region.{id}.v"), v)?;
            }
            if let Some(w) = &o.weights {
                let sum: f64 = w.iter().sum();
                if w.is_empty() || !(sum > 0.0) || w.iter().any(|x| !(*x >= 0.0)) {
                    return Err(Error::config(
                        format!("region.{id}.weights"),
                        "weights must be nonnegative with a positive sum",
                    ));
                }
            }
        }
        self.build_regions().map(|_| ())
    }

    /// Expands the roster, applies per-region overrides and builds each
    /// region's penalty model.
    pub fn build_regions(&self) -> Result<Vec<RegionSpec>> {
        (0..self.roster.count)
            .map(|id| {
                let o = self.regions.get(&id).cloned().unwrap_or_default();
                let preset_kind = match self.roster.preset {
                    RosterPreset::Homogeneous => ScenarioKind::Corridor,
                    RosterPreset::Heterogeneous if id % 2 == 0 => ScenarioKind::Corridor,
                    RosterPreset::Heterogeneous => ScenarioKind::Intersection,
                };
                let kind = o.kind.unwrap_or(preset_kind);
                let weights = o.weights.unwrap_or_else(|| match kind {
                    ScenarioKind::Corridor => CORRIDOR_WEIGHTS.to_vec(),
                    ScenarioKind::Intersection => INTERSECTION_WEIGHTS.to_vec(),
                });
                let sensors = weights
                    .into_iter()
                    .enumerate()
                    .map(|(i, w)| SensorSpec { id: i, saliency_weight: w })
                    .collect();
                Ok(RegionSpec {
                    id,
                    kind,
                    sensors,
                    gamma: o.gamma_mb.unwrap_or(self.roster.gamma_mb),
                    v: o.v.unwrap_or(self.roster.v),
                    model: self.penalty.model(kind, self.env.tau_ms, self.volume.b_max)?,
                })
            })
            .collect()
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes to JSON");
        hex::encode(Sha256::digest(&json))
    }

    pub fn with_scheduler(&self, kind: SchedulerKind) -> Self {
        let mut cfg = self.clone();
        cfg.scheduler.kind = kind;
        cfg
    }
}

fn check_env(env: &EnvConfig) -> Result<()> {
    let shifted = |prefix: &str, d: &ShiftedExp| -> Result<()> {
        if !(d.shift_ms >= 0.0 && d.shift_ms.is_finite()) {
            return Err(Error::config(format!("env.{prefix}_shift_ms"), "must be >= 0"));
        }
        if !(d.scale_ms > 0.0 && d.scale_ms.is_finite()) {
            return Err(Error::config(format!("env.{prefix}_scale_ms"), "must be > 0"));
        }
        Ok(())
    };
    shifted("ext", &env.ext)?;
    shifted("det", &env.det)?;
    if !(env.rate.lo_mbps > 0.0) {
        return Err(Error::config("env.rate_lo_mbps", "must be > 0"));
    }
    if !(env.rate.hi_mbps >= env.rate.lo_mbps && env.rate.hi_mbps.is_finite()) {
        return Err(Error::config("env.rate_hi_mbps", "must be finite and >= env.rate_lo_mbps"));
    }
    if !(env.compression_factor > 0.0) {
        return Err(Error::config("env.compression_factor", "must be > 0"));
    }
    if !(env.tau_ms > 0.0) {
        return Err(Error::config("sim.tau_ms", "must be > 0"));
    }
    Ok(())
}

fn check_budget(key: &str, gamma: f64) -> Result<()> {
    if gamma >= 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("budget must be >= 0 Mb/slot, got {gamma}")))
    }
}

fn check_tradeoff(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("trade-off V must be >= 0, got {v}")))
    }
}
