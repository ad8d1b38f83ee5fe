//! Closed-form free Gaussian packets and the two-particle pair built from
//! them, used as an exact reference for the velocity field and for the
//! non-crossing behaviour of identical particles.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bohm::{BohmianState, Trajectory, TrajectoryMode};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("alpha0 must be positive, got {0}")]
    InvalidWidth(f64),
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("pair amplitude vanishes at ({x1}, {x2}), t = {t}")]
    Node { x1: f64, x2: f64, t: f64 },
    #[error("unknown pair kind `{0}`")]
    UnknownKind(String),
}

/// One free Gaussian packet, `exp[-α(t)(x-x_c(t))² + ip(x-x_c(t)) + iγ(t)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPacketParams {
    pub alpha0: f64,
    pub p: f64,
    pub xc0: f64,
}

impl GaussianPacketParams {
    pub fn new(alpha0: f64, p: f64, xc0: f64) -> Result<Self, AnalyticError> {
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(AnalyticError::InvalidWidth(alpha0));
        }
        Ok(Self { alpha0, p, xc0 })
    }

    fn spread(&self, t: f64) -> Complex64 {
        Complex64::new(1.0, 2.0 * self.alpha0 * t)
    }

    pub fn alpha(&self, t: f64) -> Complex64 {
        self.alpha0 / self.spread(t)
    }

    pub fn center(&self, t: f64) -> f64 {
        self.xc0 + self.p * t
    }

    pub fn gamma(&self, t: f64) -> Complex64 {
        0.5 * self.p * self.p * t + 0.5 * Complex64::i() * self.spread(t).ln()
    }

    /// Natural log of the normalised packet amplitude.
    pub fn log_value(&self, x: f64, t: f64) -> Complex64 {
        let d = x - self.center(t);
        let norm = 0.25 * (2.0 * self.alpha0 / PI).ln();
        norm - self.alpha(t) * d * d + Complex64::i() * (self.p * d + self.gamma(t))
    }

    /// `∂/∂x ln ψ`.
    pub fn log_derivative(&self, x: f64, t: f64) -> Complex64 {
        -2.0 * self.alpha(t) * (x - self.center(t)) + Complex64::i() * self.p
    }
}

pub fn packet_value(params: &GaussianPacketParams, x: f64, t: f64) -> Complex64 {
    params.log_value(x, t).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Symmetrized,
    Product,
}

impl PairKind {
    pub fn label(&self) -> &'static str {
        match self {
            PairKind::Symmetrized => "symmetrized",
            PairKind::Product => "product",
        }
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PairKind {
    type Err = AnalyticError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symmetrized" => Ok(PairKind::Symmetrized),
            "product" => Ok(PairKind::Product),
            other => Err(AnalyticError::UnknownKind(other.to_string())),
        }
    }
}

/// Two-particle amplitude. The symmetrized form carries the plain `1/√2`
/// prefactor and is not renormalised.
pub fn pair_value(
    p1: &GaussianPacketParams,
    p2: &GaussianPacketParams,
    kind: PairKind,
    x1: f64,
    x2: f64,
    t: f64,
) -> Complex64 {
    let direct = (p1.log_value(x1, t) + p2.log_value(x2, t)).exp();
    match kind {
        PairKind::Product => direct,
        PairKind::Symmetrized => {
            let swapped = (p2.log_value(x1, t) + p1.log_value(x2, t)).exp();
            (direct + swapped) * std::f64::consts::FRAC_1_SQRT_2
        }
    }
}

/// Exact velocity `v_i = Im(∂_i ψ / ψ)` of the pair, by analytic
/// differentiation. The two exchange terms are combined through their log
/// ratio so the result stays finite far out in the tails.
pub fn analytic_velocity(
    p1: &GaussianPacketParams,
    p2: &GaussianPacketParams,
    kind: PairKind,
    x1: f64,
    x2: f64,
    t: f64,
) -> Result<(f64, f64), AnalyticError> {
    let a1 = p1.log_derivative(x1, t);
    let a2 = p2.log_derivative(x2, t);
    if kind == PairKind::Product {
        return Ok((a1.im, a2.im));
    }
    let b1 = p2.log_derivative(x1, t);
    let b2 = p1.log_derivative(x2, t);
    let log_ratio = p2.log_value(x1, t) + p1.log_value(x2, t) - p1.log_value(x1, t) - p2.log_value(x2, t);
    // weight of the swapped term, w = r / (1 + r)
    let w = if log_ratio.re <= 0.0 {
        let r = log_ratio.exp();
        let denom = 1.0 + r;
        if denom.norm_sqr() == 0.0 {
            return Err(AnalyticError::Node { x1, x2, t });
        }
        r / denom
    } else {
        let inv = (-log_ratio).exp();
        let denom = inv + 1.0;
        if denom.norm_sqr() == 0.0 {
            return Err(AnalyticError::Node { x1, x2, t });
        }
        Complex64::new(1.0, 0.0) / denom
    };
    let v1 = a1 + (b1 - a1) * w;
    let v2 = a2 + (b2 - a2) * w;
    if !(v1.im.is_finite() && v2.im.is_finite()) {
        return Err(AnalyticError::Node { x1, x2, t });
    }
    Ok((v1.im, v2.im))
}

/// Approximate velocity of the symmetrized pair for mirror-image packets,
/// `Re[(p_i + p_j e) / (1 + e)]` with `e = exp[-8α x_c,i x_i + 4i x_i p_i]`.
pub fn approximate_velocity(
    p1: &GaussianPacketParams,
    p2: &GaussianPacketParams,
    x1: f64,
    x2: f64,
    t: f64,
) -> (f64, f64) {
    let one = |own: &GaussianPacketParams, other: &GaussianPacketParams, x: f64| {
        let e = approximate_exchange_factor(own, x, t);
        let v = (own.p + other.p * e) / (1.0 + e);
        if v.re.is_finite() { v.re } else { other.p }
    };
    (one(p1, p2, x1), one(p2, p1, x2))
}

fn approximate_exchange_factor(own: &GaussianPacketParams, x: f64, t: f64) -> Complex64 {
    (-8.0 * own.alpha(t) * own.center(t) * x + Complex64::i() * 4.0 * x * own.p).exp()
}

/// Relative size of the terms dropped by [`approximate_velocity`] for
/// electron `own` at `x`: the spreading term `α0² t δ / (|p| (1 + 4α0² t²))`,
/// with `δ` the larger distance from either packet centre, and the real-width
/// exchange term `2 Re α |x_c,i - x_c,j| |w| / |p|` with `w = e / (1 + e)`.
pub fn approximation_parameter(own: &GaussianPacketParams, other: &GaussianPacketParams, x: f64, t: f64) -> f64 {
    let a2 = own.alpha0 * own.alpha0;
    let offset = (x - own.center(t)).abs().max((x - other.center(t)).abs());
    let spreading = a2 * t * offset / (own.p.abs() * (1.0 + 4.0 * a2 * t * t));
    let e = approximate_exchange_factor(own, x, t);
    let w = if e.norm() > 1.0 { 1.0 / (1.0 / e + 1.0) } else { e / (1.0 + e) };
    let exchange = 2.0 * own.alpha(t).re * (own.center(t) - other.center(t)).abs() * w.norm() / own.p.abs();
    if exchange.is_finite() { spreading.max(exchange) } else { f64::INFINITY }
}

/// Counter-propagating pair with RK4 integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppendixDemo {
    pub packet1: GaussianPacketParams,
    pub packet2: GaussianPacketParams,
    pub dt: f64,
    pub t_end: f64,
}

impl Default for AppendixDemo {
    fn default() -> Self {
        Self {
            packet1: GaussianPacketParams { alpha0: 0.2, p: 3.0, xc0: -9.0 },
            packet2: GaussianPacketParams { alpha0: 0.2, p: -3.0, xc0: 9.0 },
            dt: 1e-3,
            t_end: 6.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AppendixRun {
    pub symmetrized: Trajectory,
    pub product: Trajectory,
}

impl AppendixDemo {
    /// Integrate one pair kind from the packet centres.
    pub fn trace(&self, kind: PairKind) -> Result<Trajectory, AnalyticError> {
        let (a, b) = (&self.packet1, &self.packet2);
        let seed = (a.xc0, b.xc0);
        let field = |x1: f64, x2: f64, t: f64| analytic_velocity(a, b, kind, x1, x2, t);
        let steps = (self.t_end / self.dt).round() as usize;
        let mut trajectory = Trajectory::new(seed, TrajectoryMode::Full);
        let (mut x1, mut x2) = seed;
        let mut v = field(x1, x2, 0.0)?;
        let record = |trajectory: &mut Trajectory, x1: f64, x2: f64, v: (f64, f64), t: f64| {
            let mut state = BohmianState::at_rest(x1, x2, t);
            state.v1 = v.0;
            state.v2 = v.1;
            trajectory.push(state);
        };
        record(&mut trajectory, x1, x2, v, 0.0);
        for k in 0..steps {
            let t = k as f64 * self.dt;
            let h = self.dt;
            let k1 = v;
            let k2 = field(x1 + 0.5 * h * k1.0, x2 + 0.5 * h * k1.1, t + 0.5 * h)?;
            let k3 = field(x1 + 0.5 * h * k2.0, x2 + 0.5 * h * k2.1, t + 0.5 * h)?;
            let k4 = field(x1 + h * k3.0, x2 + h * k3.1, t + h)?;
            x1 += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            x2 += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            let t_next = (k + 1) as f64 * self.dt;
            v = field(x1, x2, t_next)?;
            record(&mut trajectory, x1, x2, v, t_next);
        }
        Ok(trajectory)
    }

    pub fn run(&self) -> Result<AppendixRun, AnalyticError> {
        Ok(AppendixRun {
            symmetrized: self.trace(PairKind::Symmetrized)?,
            product: self.trace(PairKind::Product)?,
        })
    }
}

pub fn run_appendix_demo(demo: &AppendixDemo) -> Result<AppendixRun, AnalyticError> {
    demo.run()
}

/// First time at which `x2 - x1` changes sign, by linear interpolation
/// between samples.
pub fn crossing_time(trajectory: &Trajectory) -> Option<f64> {
    trajectory.samples.windows(2).find_map(|w| {
        let (d0, d1) = (w[0].x2 - w[0].x1, w[1].x2 - w[1].x1);
        (d0 != 0.0 && d0.signum() != d1.signum()).then(|| w[0].time + d0 / (d0 - d1) * (w[1].time - w[0].time))
    })
}
