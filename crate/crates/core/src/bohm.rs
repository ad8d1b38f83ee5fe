//! Bohmian tracers: the velocity field, the quantum potential and its force,
//! and the trajectory integrators.
//!
//! Atomic units throughout; ħ and the electron mass are both one.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Axis, BandLimited, Grid2D, GridError, Spectral, Stencil, WaveField};
use crate::model::Hamiltonian;

pub const HBAR: f64 = 1.0;
pub const ELECTRON_MASS: f64 = 1.0;

/// Below this fraction of the peak density the velocity field is treated as
/// singular and the previous velocity is reused.
pub const NODE_DENSITY_RATIO: f64 = 1e-12;
/// Speed cap applied after node regularisation, a.u.
pub const SPEED_CAP: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BohmError {
    #[error(transparent)]
    OutOfBounds(#[from] GridError),
    #[error("density {density:.3e} at ({x1}, {x2}) is too small to divide by")]
    Node { x1: f64, x2: f64, density: f64 },
    #[error("unknown trajectory mode `{0}`")]
    UnknownMode(String),
    #[error("ablation mode `{0}` needs a switch time")]
    MissingSwitchTime(String),
    #[error("frame was built without the derivatives the quantum potential needs")]
    NoSecondDerivatives,
}

/// ψ and its spectral derivatives at one instant, as published by the
/// propagator for the tracers.
#[derive(Debug, Clone)]
pub struct FieldFrame {
    grid: Grid2D,
    time: f64,
    psi: Vec<Complex64>,
    d1: Vec<Complex64>,
    d2: Vec<Complex64>,
    second: Option<(Vec<Complex64>, Vec<Complex64>)>,
    band: Option<BandLimited>,
    peak_density: f64,
}

impl FieldFrame {
    /// First derivatives only; enough for the velocity field.
    pub fn new(field: &WaveField, spectral: &Spectral) -> Self {
        Self::build(field, spectral, false)
    }

    /// Also keeps second derivatives and the band-limited interpolant, needed
    /// for the quantum potential.
    pub fn with_second_derivatives(field: &WaveField, spectral: &Spectral) -> Self {
        Self::build(field, spectral, true)
    }

    fn build(field: &WaveField, spectral: &Spectral, second: bool) -> Self {
        let psi = field.amplitudes().to_vec();
        let d1 = spectral.derivative(&psi, Axis::X1, 1);
        let d2 = spectral.derivative(&psi, Axis::X2, 1);
        let band = second.then(|| BandLimited::new(&psi, field.grid(), spectral));
        let second = second.then(|| {
            (
                spectral.derivative(&psi, Axis::X1, 2),
                spectral.derivative(&psi, Axis::X2, 2),
            )
        });
        Self {
            grid: *field.grid(),
            time: field.time(),
            peak_density: field.peak_density(),
            psi,
            d1,
            d2,
            second,
            band,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn peak_density(&self) -> f64 {
        self.peak_density
    }

    pub fn psi(&self) -> &[Complex64] {
        &self.psi
    }

    fn sample(&self, stencil: &Stencil) -> Sample {
        Sample {
            psi: stencil.eval(&self.psi),
            d1: stencil.eval(&self.d1),
            d2: stencil.eval(&self.d2),
        }
    }

    /// Unregularised velocity `v_i = Re(-iħ ∂_iψ / ψ) / m` at a point.
    pub fn velocity(&self, x1: f64, x2: f64) -> Result<(f64, f64), BohmError> {
        let stencil = Stencil::new(&self.grid, x1, x2)?;
        self.sample(&stencil).velocity(0.0, x1, x2)
    }

    /// Quantum potential at node `idx`, from ψ and its derivatives:
    /// `∂²A/A = Re(∂²ψ/ψ) + (Im(∂ψ/ψ))²` per axis. `None` when the node
    /// carries no amplitude or second derivatives were not kept.
    pub fn quantum_potential_at_node(&self, idx: usize) -> Option<f64> {
        let (s1, s2) = self.second.as_ref()?;
        let psi = self.psi[idx];
        if psi.norm_sqr() == 0.0 {
            return None;
        }
        let curvature = |dd: Complex64, d: Complex64| (dd / psi).re + (d / psi).im.powi(2);
        let total = curvature(s1[idx], self.d1[idx]) + curvature(s2[idx], self.d2[idx]);
        Some(-HBAR * HBAR / (2.0 * ELECTRON_MASS) * total)
    }

    /// Band-limited ψ derivatives at a point, after the node check.
    fn point_derivatives<const M: usize>(&self, x1: f64, x2: f64, orders: [(u32, u32); M]) -> Result<[Complex64; M], BohmError> {
        if !self.grid.contains(x1, x2) {
            return Err(GridError::OutOfBounds { x1, x2 }.into());
        }
        let band = self.band.as_ref().ok_or(BohmError::NoSecondDerivatives)?;
        let d = band.derivatives(x1, x2, orders);
        let density = d[0].norm_sqr();
        if density <= NODE_DENSITY_RATIO * self.peak_density {
            return Err(BohmError::Node { x1, x2, density });
        }
        Ok(d)
    }

    /// Quantum potential at a point, from the band-limited interpolant of ψ.
    pub fn quantum_potential(&self, x1: f64, x2: f64) -> Result<f64, BohmError> {
        let [psi, d1, d2, d11, d22] = self.point_derivatives(x1, x2, [(0, 0), (1, 0), (0, 1), (2, 0), (0, 2)])?;
        let curvature = |dd: Complex64, d: Complex64| (dd / psi).re + (d / psi).im.powi(2);
        Ok(-HBAR * HBAR / (2.0 * ELECTRON_MASS) * (curvature(d11, d1) + curvature(d22, d2)))
    }

    /// `-∇Q` at a point, differentiating Q analytically through third
    /// derivatives of the band-limited ψ.
    pub fn quantum_force(&self, x1: f64, x2: f64) -> Result<(f64, f64), BohmError> {
        let [psi, p1, p2, p11, p22, p12, p111, p122, p112, p222] = self.point_derivatives(
            x1,
            x2,
            [(0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1), (3, 0), (1, 2), (2, 1), (0, 3)],
        )?;
        let g = [p1 / psi, p2 / psi];
        let h = [p11 / psi, p22 / psi];
        // second[j][k] = ∂_j∂_k ψ / ψ, third[j][k] = ∂_j∂_k∂_k ψ / ψ
        let second = [[p11 / psi, p12 / psi], [p12 / psi, p22 / psi]];
        let third = [[p111 / psi, p122 / psi], [p112 / psi, p222 / psi]];
        let grad = |j: usize| -> f64 {
            (0..2)
                .map(|k| (third[j][k] - h[k] * g[j]).re + 2.0 * g[k].im * (second[j][k] - g[j] * g[k]).im)
                .sum::<f64>()
        };
        let c = -HBAR * HBAR / (2.0 * ELECTRON_MASS);
        Ok((-c * grad(0), -c * grad(1)))
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    psi: Complex64,
    d1: Complex64,
    d2: Complex64,
}

impl Sample {
    fn lerp(a: Sample, b: Sample, w: f64) -> Sample {
        Sample {
            psi: a.psi * (1.0 - w) + b.psi * w,
            d1: a.d1 * (1.0 - w) + b.d1 * w,
            d2: a.d2 * (1.0 - w) + b.d2 * w,
        }
    }

    fn velocity(&self, threshold: f64, x1: f64, x2: f64) -> Result<(f64, f64), BohmError> {
        let density = self.psi.norm_sqr();
        if density <= threshold || density == 0.0 {
            return Err(BohmError::Node { x1, x2, density });
        }
        let flux = |d: Complex64| HBAR * (self.psi.conj() * d).im / (ELECTRON_MASS * density);
        Ok((flux(self.d1), flux(self.d2)))
    }
}

/// Velocity at a point of a field, building the derivative tables on the fly.
pub fn bohm_velocity(field: &WaveField, x1: f64, x2: f64) -> Result<(f64, f64), BohmError> {
    FieldFrame::new(field, &Spectral::new(field.grid())).velocity(x1, x2)
}

pub fn quantum_potential(field: &WaveField, x1: f64, x2: f64) -> Result<f64, BohmError> {
    FieldFrame::with_second_derivatives(field, &Spectral::new(field.grid())).quantum_potential(x1, x2)
}

pub fn quantum_force(field: &WaveField, x1: f64, x2: f64) -> Result<(f64, f64), BohmError> {
    FieldFrame::with_second_derivatives(field, &Spectral::new(field.grid())).quantum_force(x1, x2)
}

/// Classical force acting on the electron pair.
pub trait ForceField: Sync {
    fn force(&self, x1: f64, x2: f64, t: f64) -> (f64, f64);
}

impl ForceField for Hamiltonian {
    fn force(&self, x1: f64, x2: f64, t: f64) -> (f64, f64) {
        self.classical_force(x1, x2, t)
    }
}

impl<F> ForceField for F
where
    F: Fn(f64, f64, f64) -> (f64, f64) + Sync,
{
    fn force(&self, x1: f64, x2: f64, t: f64) -> (f64, f64) {
        self(x1, x2, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryMode {
    Full,
    /// Velocity-guided throughout; the propagator drops the electron-electron
    /// repulsion from the switch time on.
    CoulombOffAfter(f64),
    /// Velocity-guided before the switch time, purely classical after it.
    QuantumOffAfter(f64),
}

impl TrajectoryMode {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::CoulombOffAfter(_) => "coulomb_off_after",
            Self::QuantumOffAfter(_) => "quantum_off_after",
        }
    }

    pub fn switch_time(&self) -> Option<f64> {
        match *self {
            Self::Full => None,
            Self::CoulombOffAfter(t) | Self::QuantumOffAfter(t) => Some(t),
        }
    }

    /// Parse a mode label together with an optional switch time.
    pub fn parse(label: &str, switch_time: Option<f64>) -> Result<Self, BohmError> {
        let label = label.trim();
        match label {
            "full" => Ok(Self::Full),
            "coulomb_off_after" => switch_time
                .map(Self::CoulombOffAfter)
                .ok_or_else(|| BohmError::MissingSwitchTime(label.to_string())),
            "quantum_off_after" => switch_time
                .map(Self::QuantumOffAfter)
                .ok_or_else(|| BohmError::MissingSwitchTime(label.to_string())),
            other => Err(BohmError::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for TrajectoryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TrajectoryMode {
    type Err = BohmError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, None)
    }
}

/// How a tracer is currently being moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dynamics {
    /// dx/dt from the velocity field.
    Guided,
    /// Newton's law with the classical force only.
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BohmianState {
    pub x1: f64,
    pub x2: f64,
    pub v1: f64,
    pub v2: f64,
    pub time: f64,
    pub alive1: bool,
    pub alive2: bool,
    pub dynamics: Dynamics,
    /// Velocity-field evaluations that fell back to the previous velocity.
    pub regularized: u32,
}

impl BohmianState {
    /// At rest at the seed position.
    pub fn at_rest(x1: f64, x2: f64, time: f64) -> Self {
        Self {
            x1,
            x2,
            v1: 0.0,
            v2: 0.0,
            time,
            alive1: true,
            alive2: true,
            dynamics: Dynamics::Guided,
            regularized: 0,
        }
    }

    /// Both electrons still inside the box.
    pub fn active(&self) -> bool {
        self.alive1 && self.alive2
    }

    fn freeze_outside(&mut self, grid: &Grid2D, x1: f64, x2: f64) {
        let clamp = |x: f64| x.clamp(grid.x_min(), grid.x_max());
        self.alive1 = x1 >= grid.x_min() && x1 < grid.x_max();
        self.alive2 = x2 >= grid.x_min() && x2 < grid.x_max();
        self.x1 = clamp(x1);
        self.x2 = clamp(x2);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracerSettings {
    pub node_ratio: f64,
    pub speed_cap: f64,
}

impl Default for TracerSettings {
    fn default() -> Self {
        Self {
            node_ratio: NODE_DENSITY_RATIO,
            speed_cap: SPEED_CAP,
        }
    }
}

impl TracerSettings {
    fn cap(&self, v: (f64, f64)) -> (f64, f64) {
        let speed = v.0.hypot(v.1);
        if speed > self.speed_cap {
            let s = self.speed_cap / speed;
            (v.0 * s, v.1 * s)
        } else {
            v
        }
    }
}

/// Velocity-field lookup with node regularisation. `time_weight` blends the
/// two frames linearly (0 = `before`, 1 = `after`).
fn guided_velocity(
    before: &FieldFrame,
    after: &FieldFrame,
    time_weight: f64,
    x1: f64,
    x2: f64,
    fallback: (f64, f64),
    settings: &TracerSettings,
    regularized: &mut u32,
) -> Result<(f64, f64), GridError> {
    let stencil = Stencil::new(&before.grid, x1, x2)?;
    let sample = if time_weight == 0.0 {
        before.sample(&stencil)
    } else {
        Sample::lerp(before.sample(&stencil), after.sample(&stencil), time_weight)
    };
    let peak = before.peak_density.max(after.peak_density);
    match sample.velocity(settings.node_ratio * peak, x1, x2) {
        Ok(v) => Ok(settings.cap(v)),
        Err(_) => {
            *regularized += 1;
            log::trace!("node regularisation at ({x1:.3}, {x2:.3})");
            Ok(settings.cap(fallback))
        }
    }
}

/// Classical RK4 step for `dx/dt = v, dv/dt = F/m`.
fn classical_step<F: ForceField>(state: &mut BohmianState, force: &F, dt: f64) {
    let t = state.time;
    let acc = |x1: f64, x2: f64, t: f64| {
        let (f1, f2) = force.force(x1, x2, t);
        (f1 / ELECTRON_MASS, f2 / ELECTRON_MASS)
    };
    let (x1, x2, v1, v2) = (state.x1, state.x2, state.v1, state.v2);
    let a1 = acc(x1, x2, t);
    let (x1b, x2b, v1b, v2b) = (x1 + 0.5 * dt * v1, x2 + 0.5 * dt * v2, v1 + 0.5 * dt * a1.0, v2 + 0.5 * dt * a1.1);
    let a2 = acc(x1b, x2b, t + 0.5 * dt);
    let (x1c, x2c, v1c, v2c) = (x1 + 0.5 * dt * v1b, x2 + 0.5 * dt * v2b, v1 + 0.5 * dt * a2.0, v2 + 0.5 * dt * a2.1);
    let a3 = acc(x1c, x2c, t + 0.5 * dt);
    let (x1d, x2d, v1d, v2d) = (x1 + dt * v1c, x2 + dt * v2c, v1 + dt * a3.0, v2 + dt * a3.1);
    let a4 = acc(x1d, x2d, t + dt);
    state.x1 = x1 + dt / 6.0 * (v1 + 2.0 * v1b + 2.0 * v1c + v1d);
    state.x2 = x2 + dt / 6.0 * (v2 + 2.0 * v2b + 2.0 * v2c + v2d);
    state.v1 = v1 + dt / 6.0 * (a1.0 + 2.0 * a2.0 + 2.0 * a3.0 + a4.0);
    state.v2 = v2 + dt / 6.0 * (a1.1 + 2.0 * a2.1 + 2.0 * a3.1 + a4.1);
}

/// Advance one tracer across the interval between two published frames.
pub fn advance_state<F: ForceField>(
    state: &mut BohmianState,
    before: &FieldFrame,
    after: &FieldFrame,
    force: &F,
    mode: TrajectoryMode,
    settings: &TracerSettings,
) {
    let t0 = before.time;
    let dt = after.time - before.time;
    let grid = before.grid;
    if !state.active() {
        state.time = after.time;
        return;
    }
    if let TrajectoryMode::QuantumOffAfter(ts) = mode {
        if state.dynamics == Dynamics::Guided && t0 >= ts {
            // hand-off: start the classical phase with the guided velocity
            let fallback = (state.v1, state.v2);
            match guided_velocity(before, after, 0.0, state.x1, state.x2, fallback, settings, &mut state.regularized) {
                Ok((v1, v2)) => {
                    state.v1 = v1;
                    state.v2 = v2;
                }
                Err(_) => {
                    state.freeze_outside(&grid, state.x1, state.x2);
                    return;
                }
            }
            state.dynamics = Dynamics::Classical;
        }
    }
    match state.dynamics {
        Dynamics::Classical => {
            state.time = t0;
            classical_step(state, force, dt);
            state.time = after.time;
            if !grid.contains(state.x1, state.x2) {
                let (x1, x2) = (state.x1, state.x2);
                state.freeze_outside(&grid, x1, x2);
            }
        }
        Dynamics::Guided => {
            let (x1, x2) = (state.x1, state.x2);
            let mut count = state.regularized;
            let mut step = || -> Result<(f64, f64, (f64, f64)), GridError> {
                let k1 = guided_velocity(before, after, 0.0, x1, x2, (state.v1, state.v2), settings, &mut count)?;
                let (m1, m2) = (x1 + 0.5 * dt * k1.0, x2 + 0.5 * dt * k1.1);
                let k2 = guided_velocity(before, after, 0.5, m1, m2, k1, settings, &mut count)?;
                Ok((x1 + dt * k2.0, x2 + dt * k2.1, k2))
            };
            let result = step();
            state.regularized = count;
            state.time = after.time;
            match result {
                Ok((n1, n2, (v1, v2))) => {
                    state.v1 = v1;
                    state.v2 = v2;
                    if grid.contains(n1, n2) {
                        state.x1 = n1;
                        state.x2 = n2;
                    } else {
                        state.freeze_outside(&grid, n1, n2);
                    }
                }
                Err(_) => {
                    // the half-step position already left the box
                    let (v1, v2) = (state.v1, state.v2);
                    state.freeze_outside(&grid, x1 + dt * v1, x2 + dt * v2);
                }
            }
        }
    }
}

/// Advance a set of tracers between two published frames. Tracers are
/// independent, so the work is split across threads; results do not depend
/// on the thread count.
pub fn advance_trajectories<F: ForceField>(
    states: &mut [BohmianState],
    before: &FieldFrame,
    after: &FieldFrame,
    force: &F,
    mode: TrajectoryMode,
    settings: &TracerSettings,
) {
    states
        .par_iter_mut()
        .for_each(|s| advance_state(s, before, after, force, mode, settings));
}

/// Velocity-Verlet integration of `m dv/dt = -∂(U + Q)`, with Q taken from the
/// frames at both ends of the step. Falls back to the classical force where Q
/// is undefined.
pub fn advance_with_quantum_force<F: ForceField>(state: &mut BohmianState, before: &FieldFrame, after: &FieldFrame, force: &F) {
    let dt = after.time - before.time;
    let total = |frame: &FieldFrame, x1: f64, x2: f64| -> (f64, f64) {
        let (c1, c2) = force.force(x1, x2, frame.time);
        let (q1, q2) = frame.quantum_force(x1, x2).unwrap_or((0.0, 0.0));
        ((c1 + q1) / ELECTRON_MASS, (c2 + q2) / ELECTRON_MASS)
    };
    let a = total(before, state.x1, state.x2);
    let n1 = state.x1 + state.v1 * dt + 0.5 * a.0 * dt * dt;
    let n2 = state.x2 + state.v2 * dt + 0.5 * a.1 * dt * dt;
    if !before.grid.contains(n1, n2) {
        state.freeze_outside(&before.grid.clone(), n1, n2);
        state.time = after.time;
        return;
    }
    let b = total(after, n1, n2);
    state.x1 = n1;
    state.x2 = n2;
    state.v1 += 0.5 * (a.0 + b.0) * dt;
    state.v2 += 0.5 * (a.1 + b.1) * dt;
    state.time = after.time;
}

/// Recorded path of one tracer pair.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub seed: (f64, f64),
    pub mode: TrajectoryMode,
    pub samples: Vec<BohmianState>,
}

impl Trajectory {
    pub fn new(seed: (f64, f64), mode: TrajectoryMode) -> Self {
        Self {
            seed,
            mode,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, state: BohmianState) {
        self.samples.push(state);
    }

    pub fn last(&self) -> Option<&BohmianState> {
        self.samples.last()
    }
}

/// Smallest signed separation `x2 - x1`, oriented so that a positive value
/// means the two electrons kept their initial ordering.
pub fn check_non_crossing(trajectory: &Trajectory) -> f64 {
    let Some(first) = trajectory.samples.first() else {
        return f64::INFINITY;
    };
    let orientation = if first.x2 >= first.x1 { 1.0 } else { -1.0 };
    trajectory
        .samples
        .iter()
        .map(|s| orientation * (s.x2 - s.x1))
        .fold(f64::INFINITY, f64::min)
}
