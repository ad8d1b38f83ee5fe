//! Flat `key = value` run configuration.
//!
//! One key per line, `#` starts a comment. Times accept either atomic units
//! (`412.5`) or multiples of the optical period (`6.2T`). List-valued keys
//! (`R`, `intensity_W_cm2`, `snapshot_times`) take comma-separated values.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{AppendixDemo, GaussianPacketParams};
use crate::bohm::{BohmError, TrajectoryMode};
use crate::ensemble::{SeedScheme, DEFAULT_SEED_CUTOFF, DEFAULT_SEED_STRIDE};
use crate::grid::Grid2D;
use crate::model::{
    field_from_intensity, omega_from_wavelength, Hamiltonian, LaserPulse, MolecularModel, RampShape, DEFAULT_ALPHA,
    DEFAULT_P,
};
use crate::propagator::Absorber;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{key}`: {message}")]
    Validation { key: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { key: key.to_string(), message: message.into() }
}

/// A time either in atomic units or in optical periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeSpec {
    Au(f64),
    Periods { periods: f64 },
}

impl TimeSpec {
    pub fn resolve(&self, period: f64) -> f64 {
        match *self {
            TimeSpec::Au(t) => t,
            TimeSpec::Periods { periods } => periods * period,
        }
    }
}

impl FromStr for TimeSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("`{s}` is not a time"));
        match s.strip_suffix('T') {
            Some(periods) => Ok(TimeSpec::Periods { periods: parse(periods)? }),
            None => Ok(TimeSpec::Au(parse(s)?)),
        }
    }
}

impl fmt::Display for TimeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeSpec::Au(t) => write!(f, "{t}"),
            TimeSpec::Periods { periods } => write!(f, "{periods}T"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryOutput {
    /// One file with a trailing `seed_id` column.
    Concatenated,
    /// One file per seed.
    PerSeed,
    None,
}

impl FromStr for TrajectoryOutput {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concatenated" => Ok(Self::Concatenated),
            "per_seed" => Ok(Self::PerSeed),
            "none" => Ok(Self::None),
            other => Err(format!("expected concatenated, per_seed or none, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(rename = "R")]
    pub r_values: Vec<f64>,
    pub alpha: f64,
    pub p: f64,
    pub wavelength_nm: f64,
    #[serde(rename = "intensity_W_cm2")]
    pub intensities: Vec<f64>,
    pub ramp_cycles: f64,
    pub ramp_shape: RampShape,
    pub t_end: TimeSpec,
    pub box_half_extent: f64,
    pub spacing: f64,
    pub dt: f64,
    pub absorber_on: bool,
    pub absorber_fraction: f64,
    pub eigen_states: usize,
    pub mode: String,
    pub t_switch: Option<TimeSpec>,
    pub coulomb_off_after: Option<TimeSpec>,
    pub seed_scheme: SeedScheme,
    pub snapshot_every: Option<TimeSpec>,
    pub snapshot_times: Vec<TimeSpec>,
    pub snapshot_csv_stride: usize,
    pub trajectory_output: TrajectoryOutput,
    pub trajectory_sample_every: TimeSpec,
    pub checkpoint_every: Option<TimeSpec>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            r_values: Vec::new(),
            alpha: DEFAULT_ALPHA,
            p: DEFAULT_P,
            wavelength_nm: 1064.0,
            intensities: vec![1.7e14],
            ramp_cycles: 5.0,
            ramp_shape: RampShape::Linear,
            t_end: TimeSpec::Au(1000.0),
            box_half_extent: 150.0,
            spacing: 0.2,
            dt: 0.02,
            absorber_on: true,
            absorber_fraction: 0.2,
            eigen_states: 4,
            mode: "full".to_string(),
            t_switch: None,
            coulomb_off_after: None,
            seed_scheme: SeedScheme::default(),
            snapshot_every: Some(TimeSpec::Periods { periods: 0.05 }),
            snapshot_times: Vec::new(),
            snapshot_csv_stride: 4,
            trajectory_output: TrajectoryOutput::Concatenated,
            trajectory_sample_every: TimeSpec::Au(1.0),
            checkpoint_every: Some(TimeSpec::Periods { periods: 1.0 }),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Quantities computed from the configuration, recorded alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedBlock {
    pub omega: f64,
    pub period: f64,
    pub peak_fields: Vec<f64>,
    pub t_end: f64,
    pub steps: u64,
    pub points_per_axis: usize,
    pub absorber_onset: Option<f64>,
    pub t_switch: Option<f64>,
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| invalid(key, format!("`{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    split_list(value).map(|v| parse_value(key, v)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(invalid(key, format!("`{other}` is not a boolean"))),
    }
}

fn parse_optional_time(key: &str, value: &str) -> Result<Option<TimeSpec>, ConfigError> {
    match value {
        "none" | "off" => Ok(None),
        v => {
            let t: TimeSpec = parse_value(key, v)?;
            Ok((t.resolve(1.0) > 0.0).then_some(t))
        }
    }
}

/// Split a flat config text into `key -> (line, value)`.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>, ConfigError> {
    let mut pairs = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Parse { line, message: "empty key".into() });
        }
        if pairs.insert(key.to_string(), (line, value.trim().to_string())).is_some() {
            return Err(ConfigError::Parse { line, message: format!("duplicate key `{key}`") });
        }
    }
    Ok(pairs)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        let mut stride = DEFAULT_SEED_STRIDE;
        let mut cutoff = DEFAULT_SEED_CUTOFF;
        let mut scheme = "grid".to_string();
        let mut mc_count = 2000usize;
        let mut mc_seed = 1u64;
        for (key, (line, value)) in parse_pairs(text)? {
            let v = value.as_str();
            let located = |e: ConfigError| match e {
                ConfigError::Validation { key, message } => ConfigError::Validation { key, message: format!("{message} (line {line})") },
                other => other,
            };
            let result: Result<(), ConfigError> = (|| {
                match key.as_str() {
                    "R" => c.r_values = parse_list(&key, v)?,
                    "alpha" => c.alpha = parse_value(&key, v)?,
                    "p" => c.p = parse_value(&key, v)?,
                    "wavelength_nm" => c.wavelength_nm = parse_value(&key, v)?,
                    "intensity_W_cm2" => c.intensities = parse_list(&key, v)?,
                    "ramp_cycles" => c.ramp_cycles = parse_value(&key, v)?,
                    "ramp_shape" => c.ramp_shape = parse_value(&key, v)?,
                    "t_end" => c.t_end = parse_value(&key, v)?,
                    "box_half_extent" => c.box_half_extent = parse_value(&key, v)?,
                    "spacing" => c.spacing = parse_value(&key, v)?,
                    "dt" => c.dt = parse_value(&key, v)?,
                    "absorber_on" => c.absorber_on = parse_bool(&key, v)?,
                    "absorber_fraction" => c.absorber_fraction = parse_value(&key, v)?,
                    "eigen_states" => c.eigen_states = parse_value(&key, v)?,
                    "mode" => c.mode = v.to_string(),
                    "t_switch" => c.t_switch = Some(parse_value(&key, v)?),
                    "coulomb_off_after" => c.coulomb_off_after = parse_optional_time(&key, v)?,
                    "seed_scheme" => scheme = v.to_string(),
                    "seed_stride" => stride = parse_value(&key, v)?,
                    "seed_cutoff" => cutoff = parse_value(&key, v)?,
                    "mc_count" => mc_count = parse_value(&key, v)?,
                    "mc_seed" => mc_seed = parse_value(&key, v)?,
                    "snapshot_every" => c.snapshot_every = parse_optional_time(&key, v)?,
                    "snapshot_times" => c.snapshot_times = parse_list(&key, v)?,
                    "snapshot_csv_stride" => c.snapshot_csv_stride = parse_value(&key, v)?,
                    "trajectory_output" => c.trajectory_output = parse_value(&key, v)?,
                    "trajectory_sample_every" => c.trajectory_sample_every = parse_value(&key, v)?,
                    "checkpoint_every" => c.checkpoint_every = parse_optional_time(&key, v)?,
                    "output_dir" => c.output_dir = PathBuf::from(v),
                    _ => return Err(invalid(&key, "unknown key")),
                }
                Ok(())
            })();
            result.map_err(located)?;
        }
        c.seed_scheme = match scheme.as_str() {
            "grid" => SeedScheme::DeterministicGrid { stride, cutoff },
            "mc" => SeedScheme::MonteCarlo { count: mc_count, rng_seed: mc_seed },
            other => return Err(invalid("seed_scheme", format!("expected grid or mc, got `{other}`"))),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.r_values.is_empty() {
            return Err(invalid("R", "required (internuclear distance in a.u.)"));
        }
        if let Some(r) = self.r_values.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
            return Err(invalid("R", format!("must be non-negative, got {r}")));
        }
        let positive = |key: &str, v: f64| -> Result<(), ConfigError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be positive, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("p", self.p)?;
        positive("wavelength_nm", self.wavelength_nm)?;
        if self.intensities.is_empty() {
            return Err(invalid("intensity_W_cm2", "at least one value required"));
        }
        for &i in &self.intensities {
            if !(i >= 0.0 && i.is_finite()) {
                return Err(invalid("intensity_W_cm2", format!("must be non-negative, got {i}")));
            }
        }
        if !(self.ramp_cycles >= 0.0) {
            return Err(invalid("ramp_cycles", "must be non-negative"));
        }
        positive("t_end", self.t_end.resolve(1.0))?;
        positive("box_half_extent", self.box_half_extent)?;
        positive("spacing", self.spacing)?;
        positive("dt", self.dt)?;
        if !(0.0..1.0).contains(&self.absorber_fraction) {
            return Err(invalid("absorber_fraction", "must lie in [0, 1)"));
        }
        if self.eigen_states == 0 {
            return Err(invalid("eigen_states", "must be at least 1"));
        }
        if self.snapshot_csv_stride == 0 {
            return Err(invalid("snapshot_csv_stride", "must be at least 1"));
        }
        positive("trajectory_sample_every", self.trajectory_sample_every.resolve(1.0))?;
        match self.seed_scheme {
            SeedScheme::DeterministicGrid { stride, cutoff } => {
                if stride == 0 {
                    return Err(invalid("seed_stride", "must be at least 1"));
                }
                if !(0.0..1.0).contains(&cutoff) {
                    return Err(invalid("seed_cutoff", "must lie in [0, 1)"));
                }
            }
            SeedScheme::MonteCarlo { count, .. } => {
                if count == 0 {
                    return Err(invalid("mc_count", "must be at least 1"));
                }
            }
        }
        self.grid()?;
        self.trajectory_mode()?;
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        omega_from_wavelength(self.wavelength_nm)
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega()
    }

    pub fn time(&self, spec: TimeSpec) -> f64 {
        spec.resolve(self.period())
    }

    pub fn t_end_au(&self) -> f64 {
        self.time(self.t_end)
    }

    pub fn steps(&self) -> u64 {
        (self.t_end_au() / self.dt).round() as u64
    }

    pub fn grid(&self) -> Result<Grid2D, ConfigError> {
        Grid2D::centered(self.box_half_extent, self.spacing).map_err(|e| invalid("spacing", e.to_string()))
    }

    /// Tracer mode, merging `mode`/`t_switch` with the `coulomb_off_after`
    /// shorthand.
    pub fn trajectory_mode(&self) -> Result<TrajectoryMode, ConfigError> {
        let switch = self.t_switch.map(|t| self.time(t));
        if let Some(t) = switch {
            if t < 0.0 {
                return Err(invalid("t_switch", "must be non-negative"));
            }
        }
        let mode = TrajectoryMode::parse(&self.mode, switch).map_err(|e| match e {
            BohmError::MissingSwitchTime(_) => invalid("t_switch", e.to_string()),
            _ => invalid("mode", e.to_string()),
        })?;
        match (mode, self.coulomb_off_after.map(|t| self.time(t))) {
            (m, None) => Ok(m),
            (TrajectoryMode::Full, Some(t)) => Ok(TrajectoryMode::CoulombOffAfter(t)),
            (TrajectoryMode::CoulombOffAfter(a), Some(b)) if (a - b).abs() < 1e-12 => Ok(mode),
            _ => Err(invalid("coulomb_off_after", format!("conflicts with mode `{}`", self.mode))),
        }
    }

    pub fn pulse(&self, intensity: f64) -> Result<LaserPulse, ConfigError> {
        LaserPulse::from_lab_units(self.wavelength_nm, intensity, self.ramp_cycles, self.ramp_shape, self.t_end_au())
            .map_err(|e| invalid("intensity_W_cm2", e.to_string()))
    }

    pub fn model(&self, r: f64) -> Result<MolecularModel, ConfigError> {
        MolecularModel::new(r, self.alpha, self.p).map_err(|e| invalid("R", e.to_string()))
    }

    pub fn hamiltonian(&self, r: f64, intensity: f64) -> Result<Hamiltonian, ConfigError> {
        let switch = match self.trajectory_mode()? {
            TrajectoryMode::CoulombOffAfter(t) => Some(t),
            _ => None,
        };
        Ok(Hamiltonian::new(self.model(r)?, self.pulse(intensity)?).with_repulsion_off_after(switch))
    }

    pub fn absorber(&self) -> Option<Absorber> {
        self.absorber_on.then(|| Absorber { fraction: self.absorber_fraction, ..Absorber::default() })
    }

    /// The single (R, intensity) pair of a non-sweep run.
    pub fn single_point(&self) -> Result<(f64, f64), ConfigError> {
        match (self.r_values.as_slice(), self.intensities.as_slice()) {
            ([r], [i]) => Ok((*r, *i)),
            ([_], _) => Err(invalid("intensity_W_cm2", "a single value is required outside `sweep`")),
            _ => Err(invalid("R", "a single value is required outside `sweep`")),
        }
    }

    /// Copy restricted to one (R, intensity) pair.
    pub fn at_point(&self, r: f64, intensity: f64) -> Self {
        Self { r_values: vec![r], intensities: vec![intensity], ..self.clone() }
    }

    pub fn derived(&self) -> DerivedBlock {
        let grid = self.grid().ok();
        DerivedBlock {
            omega: self.omega(),
            period: self.period(),
            peak_fields: self.intensities.iter().map(|&i| field_from_intensity(i)).collect(),
            t_end: self.t_end_au(),
            steps: self.steps(),
            points_per_axis: grid.map_or(0, |g| g.n()),
            absorber_onset: grid.and_then(|g| self.absorber().map(|a| a.onset(&g))),
            t_switch: self.trajectory_mode().ok().and_then(|m| m.switch_time()),
        }
    }
}

/// Appendix demo parameters read from the same flat format. All keys are
/// optional; unknown keys are ignored so a run config can be reused.
pub fn appendix_demo_from_text(text: &str) -> Result<AppendixDemo, ConfigError> {
    let mut demo = AppendixDemo::default();
    let pairs = parse_pairs(text)?;
    let get = |key: &str| -> Result<Option<f64>, ConfigError> {
        pairs.get(key).map(|(_, v)| parse_value::<f64>(key, v)).transpose()
    };
    let alpha0 = get("appendix_alpha0")?.unwrap_or(demo.packet1.alpha0);
    let p = get("appendix_p")?.unwrap_or(demo.packet1.p);
    let xc = get("appendix_center")?.unwrap_or(-demo.packet1.xc0);
    demo.packet1 = GaussianPacketParams::new(alpha0, p, -xc).map_err(|e| invalid("appendix_alpha0", e.to_string()))?;
    demo.packet2 = GaussianPacketParams::new(alpha0, -p, xc).map_err(|e| invalid("appendix_alpha0", e.to_string()))?;
    if let Some(dt) = get("appendix_dt")? {
        if !(dt > 0.0) {
            return Err(invalid("appendix_dt", "must be positive"));
        }
        demo.dt = dt;
    }
    if let Some(t) = get("appendix_t_end")? {
        if !(t > 0.0) {
            return Err(invalid("appendix_t_end", "must be positive"));
        }
        demo.t_end = t;
    }
    Ok(demo)
}
