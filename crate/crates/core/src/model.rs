//! Soft-core 1D H2 model and the length-gauge laser coupling.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Photon energy times wavelength, hartree·nm.
pub const HARTREE_NM: f64 = 45.5633;
/// Intensity corresponding to a field of one atomic unit, W/cm².
pub const ATOMIC_INTENSITY_W_CM2: f64 = 3.50945e16;

pub const DEFAULT_ALPHA: f64 = 0.7;
pub const DEFAULT_P: f64 = 1.2375;
pub const DEFAULT_WAVELENGTH_NM: f64 = 1064.0;
pub const DEFAULT_INTENSITY_W_CM2: f64 = 1.7e14;
pub const DEFAULT_RAMP_CYCLES: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{name} must be positive, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("internuclear distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("unknown ramp shape `{0}` (expected linear or sin2)")]
    UnknownRamp(String),
}

fn positive(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ModelError::NotPositive { name, value })
    }
}

/// Angular frequency (a.u.) of light with the given wavelength.
pub fn omega_from_wavelength(wavelength_nm: f64) -> f64 {
    HARTREE_NM / wavelength_nm
}

/// Peak field (a.u.) for a cycle-averaged intensity in W/cm².
pub fn field_from_intensity(intensity_w_cm2: f64) -> f64 {
    (intensity_w_cm2 / ATOMIC_INTENSITY_W_CM2).sqrt()
}

/// Fixed-nuclei soft-core H2: nuclei at ±R/2, electron-nucleus softening
/// `alpha`, electron-electron softening `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MolecularModel {
    r: f64,
    alpha: f64,
    p: f64,
    interelectronic_on: bool,
}

impl MolecularModel {
    pub fn new(r: f64, alpha: f64, p: f64) -> Result<Self, ModelError> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(ModelError::NegativeDistance(r));
        }
        Ok(Self {
            r,
            alpha: positive("alpha", alpha)?,
            p: positive("p", p)?,
            interelectronic_on: true,
        })
    }

    pub fn with_distance(r: f64) -> Result<Self, ModelError> {
        Self::new(r, DEFAULT_ALPHA, DEFAULT_P)
    }

    pub fn without_repulsion(mut self) -> Self {
        self.interelectronic_on = false;
        self
    }

    pub fn with_repulsion(mut self, on: bool) -> Self {
        self.interelectronic_on = on;
        self
    }

    pub fn distance(&self) -> f64 {
        self.r
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn interelectronic_on(&self) -> bool {
        self.interelectronic_on
    }

    /// Attraction of one electron to both nuclei.
    #[inline]
    pub fn nuclear_potential(&self, x: f64) -> f64 {
        let half = 0.5 * self.r;
        -1.0 / ((x - half).powi(2) + self.alpha).sqrt() - 1.0 / ((x + half).powi(2) + self.alpha).sqrt()
    }

    #[inline]
    fn nuclear_force(&self, x: f64) -> f64 {
        let half = 0.5 * self.r;
        let term = |d: f64| -d / (d * d + self.alpha).powf(1.5);
        term(x - half) + term(x + half)
    }

    #[inline]
    pub fn repulsion(&self, x1: f64, x2: f64) -> f64 {
        if self.interelectronic_on {
            1.0 / ((x1 - x2).powi(2) + self.p).sqrt()
        } else {
            0.0
        }
    }

    /// Field-free potential energy of the electron pair.
    #[inline]
    pub fn softcore_potential(&self, x1: f64, x2: f64) -> f64 {
        self.nuclear_potential(x1) + self.nuclear_potential(x2) + self.repulsion(x1, x2)
    }

    /// −∇ of [`Self::softcore_potential`].
    #[inline]
    pub fn softcore_force(&self, x1: f64, x2: f64) -> (f64, f64) {
        let mut f1 = self.nuclear_force(x1);
        let mut f2 = self.nuclear_force(x2);
        if self.interelectronic_on {
            let d = x1 - x2;
            let push = d / (d * d + self.p).powf(1.5);
            f1 += push;
            f2 -= push;
        }
        (f1, f2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampShape {
    #[default]
    Linear,
    Sin2,
}

impl FromStr for RampShape {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Self::Linear),
            "sin2" | "sin^2" | "sine2" => Ok(Self::Sin2),
            other => Err(ModelError::UnknownRamp(other.to_string())),
        }
    }
}

impl fmt::Display for RampShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Sin2 => "sin2",
        })
    }
}

/// Ramp-then-flat pulse `E(t) = E0 f(t) sin(ωt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserPulse {
    omega: f64,
    e0: f64,
    ramp_cycles: f64,
    shape: RampShape,
    t_end: f64,
}

impl LaserPulse {
    pub fn new(omega: f64, e0: f64, ramp_cycles: f64, shape: RampShape, t_end: f64) -> Result<Self, ModelError> {
        if !(e0 >= 0.0) || !(ramp_cycles >= 0.0) {
            return Err(ModelError::NotPositive {
                name: if e0 >= 0.0 { "ramp_cycles" } else { "E0" },
                value: if e0 >= 0.0 { ramp_cycles } else { e0 },
            });
        }
        Ok(Self {
            omega: positive("omega", omega)?,
            e0,
            ramp_cycles,
            shape,
            t_end: positive("t_end", t_end)?,
        })
    }

    pub fn from_lab_units(
        wavelength_nm: f64,
        intensity_w_cm2: f64,
        ramp_cycles: f64,
        shape: RampShape,
        t_end: f64,
    ) -> Result<Self, ModelError> {
        let wavelength_nm = positive("wavelength_nm", wavelength_nm)?;
        if !(intensity_w_cm2 >= 0.0) {
            return Err(ModelError::NotPositive {
                name: "intensity_W_cm2",
                value: intensity_w_cm2,
            });
        }
        Self::new(
            omega_from_wavelength(wavelength_nm),
            field_from_intensity(intensity_w_cm2),
            ramp_cycles,
            shape,
            t_end,
        )
    }

    /// A pulse with zero amplitude, for field-free runs.
    pub fn off(t_end: f64) -> Self {
        Self {
            omega: omega_from_wavelength(DEFAULT_WAVELENGTH_NM),
            e0: 0.0,
            ramp_cycles: DEFAULT_RAMP_CYCLES,
            shape: RampShape::Linear,
            t_end,
        }
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn peak_field(&self) -> f64 {
        self.e0
    }

    pub fn ramp_cycles(&self) -> f64 {
        self.ramp_cycles
    }

    pub fn shape(&self) -> RampShape {
        self.shape
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Optical period.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn envelope(&self, t: f64) -> f64 {
        let ramp = self.ramp_cycles * self.period();
        if t <= 0.0 {
            0.0
        } else if t >= ramp {
            1.0
        } else {
            let u = t / ramp;
            match self.shape {
                RampShape::Linear => u,
                RampShape::Sin2 => (0.5 * PI * u).sin().powi(2),
            }
        }
    }

    #[inline]
    pub fn field(&self, t: f64) -> f64 {
        self.e0 * self.envelope(t) * (self.omega * t).sin()
    }

    /// One-based optical cycle index containing `t` (the sixth cycle spans
    /// `[5T, 6T)`), counted through the zero crossings of the carrier.
    pub fn cycle_index(&self, t: f64) -> u32 {
        let half_cycles = (t.max(0.0) * self.omega / PI).floor() as u32;
        half_cycles / 2 + 1
    }
}

/// Model plus pulse; optionally switches the electron-electron repulsion off
/// from a given time onward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hamiltonian {
    pub model: MolecularModel,
    pub pulse: LaserPulse,
    pub repulsion_off_after: Option<f64>,
}

impl Hamiltonian {
    pub fn new(model: MolecularModel, pulse: LaserPulse) -> Self {
        Self {
            model,
            pulse,
            repulsion_off_after: None,
        }
    }

    pub fn with_repulsion_off_after(mut self, t_switch: Option<f64>) -> Self {
        self.repulsion_off_after = t_switch;
        self
    }

    /// Model in effect at time `t`.
    pub fn model_at(&self, t: f64) -> MolecularModel {
        match self.repulsion_off_after {
            Some(ts) if t >= ts => self.model.without_repulsion(),
            _ => self.model,
        }
    }

    /// Soft-core potential plus `E(t)·(x1 + x2)`.
    pub fn total_potential(&self, x1: f64, x2: f64, t: f64) -> f64 {
        self.model_at(t).softcore_potential(x1, x2) + self.pulse.field(t) * (x1 + x2)
    }

    /// Analytic −∇ of [`Self::total_potential`].
    pub fn classical_force(&self, x1: f64, x2: f64, t: f64) -> (f64, f64) {
        let (f1, f2) = self.model_at(t).softcore_force(x1, x2);
        let e = self.pulse.field(t);
        (f1 - e, f2 - e)
    }
}
