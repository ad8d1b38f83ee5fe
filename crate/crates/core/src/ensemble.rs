//! Seeds drawn from the initial density, ionization events and their
//! Type 1 / Type 2 labels, and the weighted aggregates built from them.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bohm::{BohmianState, Trajectory};
use crate::grid::{Grid2D, WaveField};
use crate::io::IoError;
use crate::model::LaserPulse;

/// Distance from the origin beyond which an electron counts as ejected.
pub const IONIZATION_RADIUS: f64 = 15.0;
/// Partners closer than this to the origin cannot be assigned to a well.
pub const PARTNER_DEAD_BAND: f64 = 0.3;
pub const DEFAULT_SEED_STRIDE: usize = 4;
pub const DEFAULT_SEED_CUTOFF: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("no grid block exceeds the density cutoff {cutoff:e}")]
    NoSeeds { cutoff: f64 },
    #[error("seed stride must be at least 1")]
    InvalidStride,
    #[error("partner at {partner:.3} lies inside the dead band when electron {electron} is ejected at t = {time:.3}")]
    AmbiguousPartner { electron: u8, time: f64, partner: f64 },
    #[error("{0} outcomes for {1} seeds")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SeedScheme {
    /// One seed per `stride`×`stride` block of nodes whose peak density
    /// exceeds `cutoff` times the global peak, weighted by the block mass.
    DeterministicGrid { stride: usize, cutoff: f64 },
    /// `count` equally weighted rejection-sampled draws.
    MonteCarlo { count: usize, rng_seed: u64 },
}

impl Default for SeedScheme {
    fn default() -> Self {
        SeedScheme::DeterministicGrid { stride: DEFAULT_SEED_STRIDE, cutoff: DEFAULT_SEED_CUTOFF }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    pub seeds: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
    pub scheme: SeedScheme,
}

impl SeedSet {
    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Initial tracer states, at rest on the seeds.
    pub fn states(&self, t0: f64) -> Vec<BohmianState> {
        self.seeds.iter().map(|&(a, b)| BohmianState::at_rest(a, b, t0)).collect()
    }
}

pub fn sample_seeds(ground: &WaveField, scheme: SeedScheme) -> Result<SeedSet, EnsembleError> {
    match scheme {
        SeedScheme::DeterministicGrid { stride, cutoff } => grid_seeds(ground, stride, cutoff, scheme),
        SeedScheme::MonteCarlo { count, rng_seed } => Ok(monte_carlo_seeds(ground, count, rng_seed, scheme)),
    }
}

/// Blocks are aligned with the node grid, so the block list is mirror
/// symmetric about the diagonal. A diagonal block would put a seed on
/// `x1 = x2`, which the exchange-symmetric dynamics never leaves; it is split
/// into its two triangles instead, each seeded at its centroid with half the
/// block mass. Weights are rescaled so they add up to the full-box mass.
fn grid_seeds(ground: &WaveField, stride: usize, cutoff: f64, scheme: SeedScheme) -> Result<SeedSet, EnsembleError> {
    if stride == 0 {
        return Err(EnsembleError::InvalidStride);
    }
    let grid = ground.grid();
    let n = grid.n();
    let h = grid.spacing();
    let density = ground.density();
    let peak = ground.peak_density();
    let blocks = n.div_ceil(stride);
    let mut seeds = Vec::new();
    let mut weights = Vec::new();
    for bi in 0..blocks {
        for bj in 0..blocks {
            let (i0, j0) = (bi * stride, bj * stride);
            let (i1, j1) = ((i0 + stride).min(n), (j0 + stride).min(n));
            let mut mass = 0.0;
            let mut block_peak = 0.0f64;
            for i in i0..i1 {
                for j in j0..j1 {
                    let rho = density[grid.index(i, j)];
                    mass += rho;
                    block_peak = block_peak.max(rho);
                }
            }
            if block_peak <= cutoff * peak {
                continue;
            }
            mass *= h * h;
            // cell-centred block edges
            let a1 = grid.x(i0) - 0.5 * h;
            let a2 = grid.x(j0) - 0.5 * h;
            let side1 = (i1 - i0) as f64 * h;
            let side2 = (j1 - j0) as f64 * h;
            if bi == bj {
                seeds.push((a1 + side1 / 3.0, a2 + 2.0 * side2 / 3.0));
                weights.push(0.5 * mass);
                seeds.push((a1 + 2.0 * side1 / 3.0, a2 + side2 / 3.0));
                weights.push(0.5 * mass);
            } else {
                seeds.push((a1 + 0.5 * side1, a2 + 0.5 * side2));
                weights.push(mass);
            }
        }
    }
    if seeds.is_empty() {
        return Err(EnsembleError::NoSeeds { cutoff });
    }
    let total: f64 = weights.iter().sum();
    let target = ground.norm_sqr();
    weights.iter_mut().for_each(|w| *w *= target / total);
    Ok(SeedSet { seeds, weights, scheme })
}

/// Bilinear interpolant of the node density; non-negative everywhere.
pub fn bilinear_density(grid: &Grid2D, density: &[f64], x1: f64, x2: f64) -> f64 {
    let h = grid.spacing();
    let n = grid.n();
    let u = (x1 - grid.x_min()) / h;
    let v = (x2 - grid.x_min()) / h;
    let (i, j) = (u.floor(), v.floor());
    let (fu, fv) = (u - i, v - j);
    let (i, j) = (i as usize, j as usize);
    let (i1, j1) = ((i + 1).min(n - 1), (j + 1).min(n - 1));
    let d = |a: usize, b: usize| density[grid.index(a, b)];
    (1.0 - fu) * ((1.0 - fv) * d(i, j) + fv * d(i, j1)) + fu * ((1.0 - fv) * d(i1, j) + fv * d(i1, j1))
}

/// Rejection sampling from the bilinear interpolant of `|ψ|²` under a
/// uniform proposal on the bounding square of nodes above the default cutoff.
fn monte_carlo_seeds(ground: &WaveField, count: usize, rng_seed: u64, scheme: SeedScheme) -> SeedSet {
    let grid = ground.grid();
    let density = ground.density();
    let peak = ground.peak_density();
    let (lo, hi) = support_bounds(grid, &density, DEFAULT_SEED_CUTOFF * peak);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut seeds = Vec::with_capacity(count);
    while seeds.len() < count {
        let x1 = rng.random_range(lo..hi);
        let x2 = rng.random_range(lo..hi);
        if rng.random::<f64>() * peak < bilinear_density(grid, &density, x1, x2) {
            seeds.push((x1, x2));
        }
    }
    let weights = vec![1.0 / count.max(1) as f64; seeds.len()];
    SeedSet { seeds, weights, scheme }
}

/// Square `[lo, hi)` (same on both axes) covering every node above
/// `threshold`, widened by one cell and kept on node positions.
pub fn support_bounds(grid: &Grid2D, density: &[f64], threshold: f64) -> (f64, f64) {
    let n = grid.n();
    let (mut lo, mut hi) = (n - 1, 0);
    for i in 0..n {
        for j in 0..n {
            if density[grid.index(i, j)] > threshold {
                lo = lo.min(i).min(j);
                hi = hi.max(i).max(j);
            }
        }
    }
    let lo = lo.saturating_sub(1);
    let hi = (hi + 1).min(n - 1);
    (grid.x(lo), grid.x(hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IonizationType {
    Type1,
    Type2,
    Ambiguous,
}

impl IonizationType {
    pub fn label(&self) -> &'static str {
        match self {
            IonizationType::Type1 => "type1",
            IonizationType::Type2 => "type2",
            IonizationType::Ambiguous => "ambiguous",
        }
    }
}

impl fmt::Display for IonizationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for IonizationType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "type1" => Ok(Self::Type1),
            "type2" => Ok(Self::Type2),
            "ambiguous" => Ok(Self::Ambiguous),
            other => Err(format!("unknown ionization type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonizationEvent {
    /// 1 or 2.
    pub electron: u8,
    pub time: f64,
    pub direction: Direction,
    pub partner_position: f64,
    pub label: IonizationType,
}

/// Type 1 when the partner sits on the same side of the origin as the
/// ejection direction, Type 2 on the opposite side.
pub fn classify_partner(direction: Direction, partner: f64) -> IonizationType {
    if partner.abs() < PARTNER_DEAD_BAND {
        return IonizationType::Ambiguous;
    }
    let same_side = match direction {
        Direction::Left => partner < 0.0,
        Direction::Right => partner > 0.0,
    };
    if same_side {
        IonizationType::Type1
    } else {
        IonizationType::Type2
    }
}

/// Online ionization detection over successive tracer states.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EventDetector {
    previous: Option<BohmianState>,
    event: Option<IonizationEvent>,
}

impl EventDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn event(&self) -> Option<&IonizationEvent> {
        self.event.as_ref()
    }

    pub fn observe(&mut self, state: &BohmianState) {
        if self.event.is_some() {
            return;
        }
        let Some(prev) = self.previous.replace(*state) else {
            // a seed may already start outside the radius
            self.event = first_crossing(state, state);
            return;
        };
        self.event = first_crossing(&prev, state);
    }
}

fn first_crossing(prev: &BohmianState, cur: &BohmianState) -> Option<IonizationEvent> {
    let crossing = |a: f64, b: f64| -> Option<f64> {
        if b.abs() <= IONIZATION_RADIUS {
            None
        } else if a.abs() > IONIZATION_RADIUS || b.abs() == a.abs() {
            Some(0.0)
        } else {
            Some(((IONIZATION_RADIUS - a.abs()) / (b.abs() - a.abs())).clamp(0.0, 1.0))
        }
    };
    let c1 = crossing(prev.x1, cur.x1);
    let c2 = crossing(prev.x2, cur.x2);
    let (electron, f) = match (c1, c2) {
        (None, None) => return None,
        (Some(f), None) => (1, f),
        (None, Some(f)) => (2, f),
        (Some(f1), Some(f2)) => {
            if f1 <= f2 {
                (1, f1)
            } else {
                (2, f2)
            }
        }
    };
    let lerp = |a: f64, b: f64| a + f * (b - a);
    let time = lerp(prev.time, cur.time);
    let (ejected, partner) = if electron == 1 {
        (cur.x1, lerp(prev.x2, cur.x2))
    } else {
        (cur.x2, lerp(prev.x1, cur.x1))
    };
    let direction = if ejected < 0.0 { Direction::Left } else { Direction::Right };
    Some(IonizationEvent { electron, time, direction, partner_position: partner, label: classify_partner(direction, partner) })
}

/// Scan a recorded trajectory for its first ionization event.
pub fn detect_and_classify(trajectory: &Trajectory) -> Result<Option<IonizationEvent>, EnsembleError> {
    let mut detector = EventDetector::new();
    for s in &trajectory.samples {
        detector.observe(s);
        if detector.event.is_some() {
            break;
        }
    }
    match detector.event {
        Some(e) if e.label == IonizationType::Ambiguous => Err(EnsembleError::AmbiguousPartner {
            electron: e.electron,
            time: e.time,
            partner: e.partner_position,
        }),
        other => Ok(other),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub r: f64,
    pub intensity_w_cm2: f64,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: (f64, f64),
    pub weight: f64,
    pub event: Option<IonizationEvent>,
    /// Optical cycle (one-based) containing the ejection time.
    pub cycle: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub metadata: RunMetadata,
    pub outcomes: Vec<SeedOutcome>,
    /// `1 - ∫∫_{|x1|,|x2|<15} |ψ|²` at the end of the run.
    pub p_norm_loss: f64,
    /// Weighted mass of seeds with an ionization event.
    pub p_trajectory: f64,
    pub p_type1: f64,
    pub p_type2: f64,
    pub p_ambiguous: f64,
}

impl EnsembleResult {
    /// `P_type2 / P_type1`, infinite when no Type 1 mass was found.
    pub fn type_ratio(&self) -> f64 {
        if self.p_type1 > 0.0 {
            self.p_type2 / self.p_type1
        } else if self.p_type2 > 0.0 {
            f64::INFINITY
        } else {
            f64::NAN
        }
    }

    /// Weighted mean ejection time of one label within `[t0, t1]`.
    pub fn mean_ejection_time(&self, label: IonizationType, t0: f64, t1: f64) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for o in &self.outcomes {
            if let Some(e) = o.event.filter(|e| e.label == label && e.time >= t0 && e.time <= t1) {
                num += o.weight * e.time;
                den += o.weight;
            }
        }
        (den > 0.0).then(|| num / den)
    }
}

pub fn aggregate(
    seeds: &SeedSet,
    events: &[Option<IonizationEvent>],
    metadata: RunMetadata,
    p_norm_loss: f64,
    pulse: &LaserPulse,
) -> Result<EnsembleResult, EnsembleError> {
    if events.len() != seeds.len() {
        return Err(EnsembleError::LengthMismatch(events.len(), seeds.len()));
    }
    let mut result = EnsembleResult {
        metadata,
        outcomes: Vec::with_capacity(seeds.len()),
        p_norm_loss,
        p_trajectory: 0.0,
        p_type1: 0.0,
        p_type2: 0.0,
        p_ambiguous: 0.0,
    };
    for ((&seed, &weight), event) in seeds.seeds.iter().zip(&seeds.weights).zip(events) {
        if let Some(e) = event {
            result.p_trajectory += weight;
            match e.label {
                IonizationType::Type1 => result.p_type1 += weight,
                IonizationType::Type2 => result.p_type2 += weight,
                IonizationType::Ambiguous => result.p_ambiguous += weight,
            }
        }
        result.outcomes.push(SeedOutcome { seed, weight, event: *event, cycle: event.map(|e| pulse.cycle_index(e.time)) });
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMapEntry {
    #[serde(rename = "X1")]
    pub x1: f64,
    #[serde(rename = "X2")]
    pub x2: f64,
    pub weight: f64,
    pub label: String,
    pub eject_time: Option<f64>,
    pub cycle: Option<u32>,
}

/// Per-seed label (`type1`, `type2`, `ambiguous` or `none`), ejection time
/// and cycle index.
pub fn seed_map(result: &EnsembleResult) -> Vec<SeedMapEntry> {
    result
        .outcomes
        .iter()
        .map(|o| SeedMapEntry {
            x1: o.seed.0,
            x2: o.seed.1,
            weight: o.weight,
            label: o.event.map_or("none", |e| e.label.label()).to_string(),
            eject_time: o.event.map(|e| e.time),
            cycle: o.cycle,
        })
        .collect()
}

pub fn write_seed_map_csv(path: &Path, entries: &[SeedMapEntry]) -> Result<(), EnsembleError> {
    let wrap = |source| IoError::Csv { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        crate::io::ensure_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    for e in entries {
        w.serialize(e).map_err(wrap)?;
    }
    w.flush().map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn read_seed_map_csv(path: &Path) -> Result<Vec<SeedMapEntry>, EnsembleError> {
    let wrap = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let entries = r.deserialize().collect::<Result<Vec<SeedMapEntry>, _>>().map_err(wrap)?;
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurveRow {
    #[serde(rename = "R")]
    pub r: f64,
    pub intensity: f64,
    #[serde(rename = "P_total_norm")]
    pub p_total_norm: f64,
    #[serde(rename = "P_traj")]
    pub p_traj: f64,
    #[serde(rename = "P_type1")]
    pub p_type1: f64,
    #[serde(rename = "P_type2")]
    pub p_type2: f64,
}

impl From<&EnsembleResult> for PrCurveRow {
    fn from(r: &EnsembleResult) -> Self {
        PrCurveRow {
            r: r.metadata.r,
            intensity: r.metadata.intensity_w_cm2,
            p_total_norm: r.p_norm_loss,
            p_traj: r.p_trajectory,
            p_type1: r.p_type1,
            p_type2: r.p_type2,
        }
    }
}

pub fn write_pr_curve_csv(path: &Path, rows: &[PrCurveRow]) -> Result<(), EnsembleError> {
    let wrap = |source| IoError::Csv { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        crate::io::ensure_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    for row in rows {
        w.serialize(row).map_err(wrap)?;
    }
    w.flush().map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn read_pr_curve_csv(path: &Path) -> Result<Vec<PrCurveRow>, EnsembleError> {
    let wrap = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let rows = r.deserialize().collect::<Result<Vec<PrCurveRow>, _>>().map_err(wrap)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bohm::TrajectoryMode;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn two_well_field() -> WaveField {
        let g = Grid2D::new(-12.0, 12.0, 96).unwrap();
        let well = |x: f64| (-(x - 2.0).powi(2)).exp() + (-(x + 2.0).powi(2)).exp();
        WaveField::from_fn(g, 0.0, |x1, x2| Complex64::new(well(x1) * well(x2) * (-0.1 * (x1 - x2).powi(2)).exp(), 0.0))
            .normalized()
    }

    #[test]
    fn grid_seed_weights_partition_the_mass() {
        let f = two_well_field();
        let set = sample_seeds(&f, SeedScheme::default()).unwrap();
        let full = f.region_norm(f.grid().half_extent());
        assert!((set.total_weight() - full).abs() < 1e-10);
        assert!(set.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn grid_seeds_are_exchange_symmetric_and_off_diagonal() {
        let f = two_well_field();
        let set = sample_seeds(&f, SeedScheme::default()).unwrap();
        for (&(a, b), &w) in set.seeds.iter().zip(&set.weights) {
            assert!((a - b).abs() > 1e-9);
            let k = set
                .seeds
                .iter()
                .position(|&(c, d)| (c - b).abs() < 1e-12 && (d - a).abs() < 1e-12)
                .expect("mirror seed");
            assert!((set.weights[k] - w).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_cutoff_is_an_error() {
        let f = two_well_field();
        let err = sample_seeds(&f, SeedScheme::DeterministicGrid { stride: 4, cutoff: 2.0 }).unwrap_err();
        assert!(matches!(err, EnsembleError::NoSeeds { .. }));
    }

    #[test]
    fn monte_carlo_weights_sum_to_one_and_are_reproducible() {
        let f = two_well_field();
        let scheme = SeedScheme::MonteCarlo { count: 500, rng_seed: 3 };
        let a = sample_seeds(&f, scheme).unwrap();
        let b = sample_seeds(&f, scheme).unwrap();
        assert_eq!(a, b);
        assert!((a.total_weight() - 1.0).abs() < 1e-12);
    }

    fn state(t: f64, x1: f64, x2: f64) -> BohmianState {
        BohmianState::at_rest(x1, x2, t)
    }

    fn trajectory(points: &[(f64, f64, f64)]) -> Trajectory {
        let mut t = Trajectory::new((points[0].1, points[0].2), TrajectoryMode::Full);
        for &(time, x1, x2) in points {
            t.push(state(time, x1, x2));
        }
        t
    }

    #[test]
    fn left_ejection_with_partner_on_the_right_is_type2() {
        let t = trajectory(&[(0.0, 2.1, -3.0), (1.0, 2.1, -14.0), (2.0, 2.1, -16.0)]);
        let e = detect_and_classify(&t).unwrap().unwrap();
        assert_eq!((e.electron, e.direction, e.label), (2, Direction::Left, IonizationType::Type2));
        assert!((e.time - 1.5).abs() < 1e-12);
        assert!((e.partner_position - 2.1).abs() < 1e-12);
    }

    #[test]
    fn left_ejection_with_partner_on_the_left_is_type1() {
        let t = trajectory(&[(0.0, -1.2, -3.0), (1.0, -1.2, -16.0)]);
        assert_eq!(detect_and_classify(&t).unwrap().unwrap().label, IonizationType::Type1);
    }

    #[test]
    fn right_ejection_uses_the_mirrored_rule() {
        let t = trajectory(&[(0.0, 3.0, 1.0), (1.0, 16.0, 1.0)]);
        let e = detect_and_classify(&t).unwrap().unwrap();
        assert_eq!((e.electron, e.direction, e.label), (1, Direction::Right, IonizationType::Type1));
        let t = trajectory(&[(0.0, 3.0, -1.0), (1.0, 16.0, -1.0)]);
        assert_eq!(detect_and_classify(&t).unwrap().unwrap().label, IonizationType::Type2);
    }

    #[test]
    fn bound_trajectory_has_no_event() {
        let t = trajectory(&[(0.0, 1.0, -1.0), (1.0, 14.9, -14.9), (2.0, 0.0, 0.0)]);
        assert!(detect_and_classify(&t).unwrap().is_none());
    }

    #[test]
    fn partner_in_dead_band_is_ambiguous() {
        let t = trajectory(&[(0.0, 0.1, -3.0), (1.0, 0.1, -16.0)]);
        assert!(matches!(detect_and_classify(&t), Err(EnsembleError::AmbiguousPartner { electron: 2, .. })));
    }

    #[test]
    fn earliest_crossing_wins_within_a_step() {
        let e = first_crossing(&state(0.0, 14.0, -14.8), &state(1.0, 16.0, -15.4)).unwrap();
        assert_eq!(e.electron, 2);
        assert!((e.time - 1.0 / 3.0).abs() < 1e-12);
    }

    fn pulse() -> LaserPulse {
        LaserPulse::from_lab_units(1064.0, 1.7e14, 5.0, crate::model::RampShape::Linear, 1000.0).unwrap()
    }

    fn meta() -> RunMetadata {
        RunMetadata { r: 5.6, intensity_w_cm2: 1.7e14, mode: "full".into() }
    }

    #[test]
    fn aggregate_without_events_is_zero() {
        let seeds = SeedSet { seeds: vec![(1.0, -1.0), (-1.0, 1.0)], weights: vec![0.5, 0.5], scheme: SeedScheme::default() };
        let r = aggregate(&seeds, &[None, None], meta(), 0.0, &pulse()).unwrap();
        assert_eq!((r.p_type1, r.p_type2, r.p_trajectory), (0.0, 0.0, 0.0));
    }

    #[test]
    fn aggregate_sums_weights_by_label_and_indexes_cycles() {
        let p = pulse();
        let period = p.period();
        let ev = |label, time| Some(IonizationEvent { electron: 2, time, direction: Direction::Left, partner_position: 1.0, label });
        let seeds = SeedSet {
            seeds: vec![(0.0, 1.0), (1.0, 0.0), (2.0, 1.0)],
            weights: vec![0.2, 0.3, 0.4],
            scheme: SeedScheme::default(),
        };
        let events = [ev(IonizationType::Type1, 5.5 * period), ev(IonizationType::Type2, 6.2 * period), None];
        let r = aggregate(&seeds, &events, meta(), 0.45, &p).unwrap();
        assert!((r.p_type1 - 0.2).abs() < 1e-15 && (r.p_type2 - 0.3).abs() < 1e-15);
        assert!((r.p_trajectory - 0.5).abs() < 1e-15);
        assert_eq!(r.outcomes[0].cycle, Some(6));
        assert_eq!(r.outcomes[1].cycle, Some(7));
        assert!(r.p_type1 + r.p_type2 <= r.p_trajectory + 1e-15);
        let map = seed_map(&r);
        assert_eq!(map[2].label, "none");
        assert_eq!(map[1].label, "type2");
        assert!((r.type_ratio() - 1.5).abs() < 1e-12);
        assert!(aggregate(&seeds, &events[..2], meta(), 0.0, &p).is_err());
    }

    #[test]
    fn csv_formats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![PrCurveRow { r: 5.6, intensity: 1.7e14, p_total_norm: 0.3, p_traj: 0.31, p_type1: 0.1, p_type2: 0.2 }];
        let path = dir.path().join("pr_curve.csv");
        write_pr_curve_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("R,intensity,P_total_norm,P_traj,P_type1,P_type2\n"));
        assert_eq!(read_pr_curve_csv(&path).unwrap(), rows);

        let entries = vec![
            SeedMapEntry { x1: 1.0, x2: -2.0, weight: 0.01, label: "type1".into(), eject_time: Some(900.0), cycle: Some(7) },
            SeedMapEntry { x1: -2.0, x2: 1.0, weight: 0.01, label: "none".into(), eject_time: None, cycle: None },
        ];
        let path = dir.path().join("seed_map.csv");
        write_seed_map_csv(&path, &entries).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("X1,X2,weight,label,eject_time,cycle\n"));
        assert_eq!(read_seed_map_csv(&path).unwrap(), entries);
    }

    proptest! {
        #[test]
        fn classification_is_inversion_symmetric(partner in -5.0..5.0f64) {
            let left = classify_partner(Direction::Left, partner);
            let right = classify_partner(Direction::Right, -partner);
            prop_assert_eq!(left, right);
        }

        #[test]
        fn grid_seed_count_shrinks_with_stride(stride in 2usize..6) {
            let f = two_well_field();
            let fine = sample_seeds(&f, SeedScheme::DeterministicGrid { stride: 1, cutoff: 1e-6 }).unwrap();
            let coarse = sample_seeds(&f, SeedScheme::DeterministicGrid { stride, cutoff: 1e-6 }).unwrap();
            prop_assert!(coarse.len() < fine.len());
            prop_assert!((coarse.total_weight() - fine.total_weight()).abs() < 1e-10);
        }
    }
}
