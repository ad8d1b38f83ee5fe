//! End-to-end acceptance checks. Runs as a plain binary (no libtest harness)
//! and prints one PASS/FAIL line per criterion; exits non-zero if any fail.
//!
//! The R sweep is the expensive part (minutes per R). Its output directory is
//! `$BOHMION_ACCEPTANCE_DIR` (default: a directory under the cargo target
//! tmpdir) and is reused when a completed sweep with the same configuration
//! is already there. `$BOHMION_ACCEPTANCE_CONFIG` replaces the sweep
//! configuration (default `configs/sweep.cfg`).

mod common;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bohmion::analytic::{AppendixDemo, PairKind};
use bohmion::bohm::{advance_state, advance_trajectories, BohmianState, FieldFrame, TracerSettings, TrajectoryMode};
use bohmion::config::RunConfig;
use bohmion::ensemble::{sample_seeds, EnsembleResult, EventDetector, IonizationType, SeedScheme, SeedSet};
use bohmion::grid::{Grid2D, WaveField};
use bohmion::io::{read_json, SnapshotRecord};
use bohmion::model::{Hamiltonian, LaserPulse, MolecularModel};
use bohmion::propagator::{current_density_with, relax_eigenstates, EigenSet, Propagator, RelaxOptions};
use bohmion::runner::{ensure_eigenset, point_dir_name, run_appendix, sweep, RunManifest, SweepPoint, MANIFEST_FILE};
use num_complex::Complex64;
use rayon::prelude::*;

type Outcome = Result<String, String>;

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.0} s]"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.0} s]");
            }
        }
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sweep_config() -> RunConfig {
    let path = std::env::var_os("BOHMION_ACCEPTANCE_CONFIG")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sweep.cfg"));
    RunConfig::load(&path).expect("sweep config")
}

fn acceptance_dir() -> PathBuf {
    std::env::var_os("BOHMION_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-sweep"))
}

/// A finished sweep in `dir` made from the same configuration, ignoring where
/// it was written.
fn reusable(dir: &Path, config: &RunConfig) -> bool {
    let Ok(manifest) = read_json::<RunManifest>(&dir.join(MANIFEST_FILE)) else {
        return false;
    };
    let Some(mut stored) = manifest.config else {
        return false;
    };
    stored.output_dir = config.output_dir.clone();
    let points: Vec<SweepPoint> = read_json(&dir.join("sweep.json")).unwrap_or_default();
    manifest.command == "sweep"
        && stored == *config
        && points.len() == config.r_values.len() * config.intensities.len()
        && points.iter().all(|p| p.row.is_some())
}

struct Sweep {
    config: RunConfig,
    dir: PathBuf,
    results: Vec<EnsembleResult>,
}

impl Sweep {
    fn load_or_run() -> Result<Self, String> {
        let config = sweep_config();
        let dir = acceptance_dir();
        if reusable(&dir, &config) {
            println!("reusing sweep in {}", dir.display());
        } else {
            println!("running sweep into {} (minutes per R)", dir.display());
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| e.to_string())?;
            }
            let outcome = sweep(&config, &dir).map_err(|e| e.to_string())?;
            if outcome.failures() > 0 {
                return Err(format!("{} sweep point(s) failed", outcome.failures()));
            }
        }
        let intensity = config.intensities[0];
        let results = config
            .r_values
            .iter()
            .map(|&r| read_json(&dir.join(point_dir_name(r, intensity)).join("ensemble.json")).map_err(|e| e.to_string()))
            .collect::<Result<Vec<EnsembleResult>, _>>()?;
        Ok(Self { config, dir, results })
    }

    fn point_dir(&self, r: f64) -> PathBuf {
        self.dir.join(point_dir_name(r, self.config.intensities[0]))
    }

    fn result(&self, r: f64) -> &EnsembleResult {
        self.results.iter().find(|e| e.metadata.r == r).expect("swept R")
    }

    fn peak(&self) -> &EnsembleResult {
        self.results.iter().max_by(|a, b| a.p_norm_loss.total_cmp(&b.p_norm_loss)).expect("non-empty sweep")
    }

    fn eigenset(&self, r: f64) -> Result<EigenSet, String> {
        let config = self.config.at_point(r, self.config.intensities[0]);
        ensure_eigenset(&config, r, &self.point_dir(r).join("eigen")).map_err(|e| e.to_string())
    }

    fn snapshot_near(&self, r: f64, t: f64) -> Result<SnapshotRecord, String> {
        let index: Vec<SnapshotRecord> = read_json(&self.point_dir(r).join("snapshots/index.json")).map_err(|e| e.to_string())?;
        index
            .into_iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
            .filter(|s| (s.time - t).abs() < self.config.dt)
            .ok_or_else(|| format!("no snapshot at t = {t:.2} for R = {r}"))
    }
}

fn ionization_peak(s: &Sweep) -> Outcome {
    let curve: Vec<String> = s.results.iter().map(|e| format!("{}:{:.4}", e.metadata.r, e.p_norm_loss)).collect();
    let peak = s.peak();
    let (p2, p10) = (s.result(2.0).p_norm_loss, s.result(10.0).p_norm_loss);
    let ok = (4.8..=6.4).contains(&peak.metadata.r) && peak.p_norm_loss > p2 && peak.p_norm_loss > p10;
    verdict(ok, format!("argmax R = {} (P = {:.4}); curve {}", peak.metadata.r, peak.p_norm_loss, curve.join(" ")))
}

fn type_decomposition(s: &Sweep) -> Outcome {
    let e = s.peak();
    let sum = e.p_type1 + e.p_type2;
    let rel = (e.p_trajectory - e.p_norm_loss).abs() / e.p_norm_loss;
    let ok = e.p_type1 > 0.1 * sum && e.p_type2 > 0.1 * sum && rel < 0.15;
    verdict(
        ok,
        format!(
            "R = {}: P_type1 = {:.4}, P_type2 = {:.4}, P_traj = {:.4} vs P_norm = {:.4} ({:.1}% apart)",
            e.metadata.r,
            e.p_type1,
            e.p_type2,
            e.p_trajectory,
            e.p_norm_loss,
            100.0 * rel
        ),
    )
}

fn ratio_trend(s: &Sweep) -> Outcome {
    let ratios: Vec<f64> = [4.4, 5.6, 6.8, 8.0].iter().map(|&r| s.result(r).type_ratio()).collect();
    let ok = ratios.windows(2).all(|w| w[1] >= w[0]);
    verdict(ok, format!("P_type2/P_type1 at R = 4.4, 5.6, 6.8, 8: {ratios:.3?}"))
}

fn projection_amplitudes(s: &Sweep) -> Outcome {
    let t = 6.1 * s.config.period();
    let amplitude = |r: f64, k: usize| -> Result<f64, String> {
        let snap = s.snapshot_near(r, t)?;
        let p = snap.projection.ok_or("snapshot without projection")?;
        p.amplitudes.get(k).copied().ok_or_else(|| format!("no state {k}"))
    };
    let ground10 = amplitude(10.0, 0)?;
    let excited2 = amplitude(2.0, 1)?;
    let ok = (ground10 - 0.99).abs() <= 0.02 && (excited2 - 0.145).abs() <= 0.03;
    verdict(ok, format!("R = 10 |c0| = {ground10:.4}; R = 2 |c1| = {excited2:.4}"))
}

fn desk_propagator(grid: Grid2D, r: f64, pulse: LaserPulse, absorber: bool, config: &RunConfig) -> Propagator {
    let ham = Hamiltonian::new(MolecularModel::with_distance(r).unwrap(), pulse);
    Propagator::new(grid, ham, config.dt, if absorber { config.absorber() } else { None }).unwrap()
}

/// Largest displacement of ground-state tracers over `t_end` of field-free
/// propagation with step `dt`.
fn stationary_drift(s: &Sweep, ground: &WaveField, seeds: &SeedSet, dt: f64, t_end: f64) -> f64 {
    let ham = Hamiltonian::new(MolecularModel::with_distance(5.6).unwrap(), LaserPulse::off(t_end));
    let prop = Propagator::new(*ground.grid(), ham, dt, s.config.absorber()).unwrap();
    let mut states = seeds.states(0.0);
    let settings = TracerSettings::default();
    let mut field = ground.clone();
    let mut before = FieldFrame::new(&field, prop.spectral());
    for k in 1..=(t_end / dt).round() as usize {
        field = prop.step(field).with_time(k as f64 * dt);
        let after = FieldFrame::new(&field, prop.spectral());
        advance_trajectories(&mut states, &before, &after, prop.hamiltonian(), TrajectoryMode::Full, &settings);
        before = after;
    }
    states
        .iter()
        .zip(&seeds.seeds)
        .map(|(st, &(a, b))| (st.x1 - a).abs().max((st.x2 - b).abs()))
        .fold(0.0, f64::max)
}

/// The split-step error leaves the relaxed state slightly non-stationary
/// (drift ~ dt^2, largest in the far tail), so the step is halved here.
fn stationarity(s: &Sweep) -> Outcome {
    let ground = s.eigenset(5.6)?.ground().clone().normalized().with_time(0.0);
    let seeds = sample_seeds(&ground, SeedScheme::default()).map_err(|e| e.to_string())?;
    let t_end = 100.0;
    let dt = 0.5 * s.config.dt;
    let drift = stationary_drift(s, &ground, &seeds, dt, t_end);
    let coarse = stationary_drift(s, &ground, &seeds, s.config.dt, t_end);
    verdict(
        drift < 1e-3,
        format!(
            "{} seeds, max drift {drift:.2e} over t = {t_end} at dt = {dt} ({coarse:.2e} at dt = {})",
            seeds.len(),
            s.config.dt
        ),
    )
}

fn analytic_oracle() -> Outcome {
    let err = common::max_velocity_error(PairKind::Symmetrized, 2.5, 100)
        .max(common::max_velocity_error(PairKind::Product, 1.0, 100));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, summary) = run_appendix(&AppendixDemo::default(), dir.path()).map_err(|e| e.to_string())?;
    let crossing = summary.product_crossing_time.unwrap_or(f64::NAN);
    let ok = err < 1e-4 && (crossing - 3.0).abs() <= 0.05 && summary.symmetrized_min_separation > 0.0;
    verdict(
        ok,
        format!(
            "max |v_grid - v_exact| = {err:.2e}; product crossing t = {crossing:.4}; symmetrized min separation = {:.4}",
            summary.symmetrized_min_separation
        ),
    )
}

fn conservation(s: &Sweep) -> Outcome {
    let r = 5.6;
    let eigen = s.eigenset(r)?;
    let ground = eigen.ground().clone().normalized().with_time(0.0);
    let grid = *ground.grid();
    let dt = s.config.dt;
    let prop = desk_propagator(grid, r, s.config.pulse(s.config.intensities[0]).unwrap(), false, &s.config);

    // a kicked ground state carries a real current through the field
    let kicked = WaveField::from_fn(grid, 0.0, |x1, x2| {
        let (i, j) = (((x1 - grid.x_min()) / grid.spacing()).round() as usize, ((x2 - grid.x_min()) / grid.spacing()).round() as usize);
        ground.value(i, j) * Complex64::from_polar(1.0, 0.3 * (x1 + x2))
    });
    let n0 = kicked.norm_sqr();
    let mut field = kicked;
    let mut history = Vec::new();
    for k in 1..=1000 {
        field = prop.step(field);
        if (499..=501).contains(&k) {
            history.push(field.clone());
        }
    }
    let drift = (field.norm_sqr() - n0).abs();

    let h = grid.spacing();
    let rho = |f: &WaveField| f.density();
    let (r_prev, r_next) = (rho(&history[0]), rho(&history[2]));
    let (j1, j2) = current_density_with(&history[1], prop.spectral());
    let spectral = prop.spectral();
    let real = |v: &[f64]| v.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>();
    let div1 = spectral.derivative(&real(&j1), bohmion::grid::Axis::X1, 1);
    let div2 = spectral.derivative(&real(&j2), bohmion::grid::Axis::X2, 1);
    let residual_sq: f64 = (0..grid.len())
        .map(|i| {
            let r = (r_next[i] - r_prev[i]) / (2.0 * dt) + div1[i].re + div2[i].re;
            r * r
        })
        .sum::<f64>()
        * h
        * h;
    let residual = residual_sq.sqrt();
    let psi_norm = history[1].norm_sqr();

    let frame = FieldFrame::with_second_derivatives(&ground, prop.spectral());
    let model = MolecularModel::with_distance(r).unwrap();
    let e0 = eigen.energies[0];
    let mut identity: f64 = 0.0;
    for i in 0..grid.n() {
        for j in 0..grid.n() {
            let idx = grid.index(i, j);
            if ground.amplitudes()[idx].norm_sqr() > 1e-8 {
                let q = frame.quantum_potential_at_node(idx).ok_or("no curvature")?;
                identity = identity.max((model.softcore_potential(grid.x(i), grid.x(j)) + q - e0).abs());
            }
        }
    }

    let small = Grid2D::new(-12.0, 12.0, 64).unwrap();
    let small_model = MolecularModel::with_distance(2.0).unwrap();
    let dense = common::dense_symmetric_energies(&small, &small_model, 4);
    let relaxed = relax_eigenstates(&small, &small_model, 4, &RelaxOptions::default()).map_err(|e| e.to_string())?;
    let eigen_err = relaxed.energies.iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let ok = drift < 1e-8 && residual < 1e-4 * psi_norm && identity < 5e-3 && eigen_err < 1e-6;
    verdict(
        ok,
        format!(
            "norm drift {drift:.2e}/1000 steps; continuity residual {residual:.2e} (bound {:.2e}); max |U+Q-E0| = {identity:.2e}; dense 64x64 energy error {eigen_err:.2e}",
            1e-4 * psi_norm
        ),
    )
}

struct Branch {
    mode: TrajectoryMode,
    state: BohmianState,
    detector: EventDetector,
    at_switch: Option<BohmianState>,
    crossed: bool,
}

impl Branch {
    fn new(mode: TrajectoryMode, state: BohmianState) -> Self {
        let mut detector = EventDetector::new();
        detector.observe(&state);
        Self { mode, state, detector, at_switch: None, crossed: false }
    }

    fn advance(&mut self, before: &FieldFrame, after: &FieldFrame, hamiltonian: &Hamiltonian, switch: f64) {
        let gap = self.state.x1 - self.state.x2;
        advance_state(&mut self.state, before, after, hamiltonian, self.mode, &TracerSettings::default());
        self.detector.observe(&self.state);
        if self.state.time >= switch - 1e-9 && self.at_switch.is_none() {
            self.at_switch = Some(self.state);
        }
        if self.at_switch.is_some() && self.detector.event().is_none() && gap * (self.state.x1 - self.state.x2) < 0.0 {
            self.crossed = true;
        }
    }
}

/// Histogram of one-electron positions (both coordinates pooled) on 4-node
/// bins with edges at node midpoints, normalised to unit mass.
fn marginal_histogram(grid: &Grid2D, positions: impl Iterator<Item = f64>) -> Vec<f64> {
    let width = 4;
    let bins = grid.n().div_ceil(width);
    let lo = grid.x_min() - 0.5 * grid.spacing();
    let mut hist = vec![0.0; bins];
    for x in positions {
        let b = ((x - lo) / (width as f64 * grid.spacing())).floor();
        if b >= 0.0 && (b as usize) < bins {
            hist[b as usize] += 1.0;
        }
    }
    let total: f64 = hist.iter().sum();
    hist.iter_mut().for_each(|v| *v /= total);
    hist
}

fn density_marginal(field: &WaveField) -> Vec<f64> {
    let grid = field.grid();
    let n = grid.n();
    let rho = field.density();
    let mut hist = vec![0.0; n.div_ceil(4)];
    for i in 0..n {
        for j in 0..n {
            let v = rho[grid.index(i, j)];
            hist[i / 4] += v;
            hist[j / 4] += v;
        }
    }
    let total: f64 = hist.iter().sum();
    hist.iter_mut().for_each(|v| *v /= total);
    hist
}

struct Candidate {
    seed: (f64, f64),
    full: Branch,
    quantum_off: Option<Branch>,
    coulomb_off: Option<Branch>,
}

impl Candidate {
    /// Electron with the smaller |x| when the ablation switches on.
    fn inner(&self) -> Option<u8> {
        self.full.at_switch.map(|s| if s.x1.abs() < s.x2.abs() { 1 } else { 2 })
    }

    /// Electron 2 still within R/2 of its nucleus when the ablation switches on.
    fn bound_at_switch(&self, r: f64) -> bool {
        self.full.at_switch.is_some_and(|s| s.x2.abs() < r)
    }

    fn full_time(&self) -> f64 {
        self.full.detector.event().map_or(f64::INFINITY, |e| e.time)
    }

    fn full_ok(&self) -> bool {
        self.full.detector.event().is_some_and(|e| e.electron == 2 && e.label == IonizationType::Type1)
    }

    fn coulomb_ok(&self) -> bool {
        self.coulomb_off.as_ref().and_then(|b| b.detector.event()).is_some_and(|e| e.electron == 2)
    }

    fn quantum_off_ok(&self) -> bool {
        let inner = self.inner();
        self.quantum_off
            .as_ref()
            .is_some_and(|b| b.crossed && b.detector.event().is_some_and(|e| Some(e.electron) == inner))
    }
}

fn describe(branch: Option<&Branch>) -> String {
    match branch.and_then(|b| b.detector.event()) {
        Some(e) => format!("electron {} at t = {:.1} ({})", e.electron, e.time, e.label.label()),
        None => "no ejection".into(),
    }
}

/// One R = 5.6 run serving the density-transport check (at 2T) and the
/// ablations. A stride-1 seed grid is traced in full mode; at 6.2T every
/// tracer still bound forks into quantum_off and coulomb_off branches (the
/// modes agree before the switch). The verdict is taken on the earliest
/// Type 1 ejection of electron 2 in (6.2T, 7.25T] whose electron 2 is still
/// in its well at the switch; every such candidate is tallied.
fn transport_and_ablations(s: &Sweep, report: &mut Report) {
    let r = 5.6;
    let period = s.config.period();
    let dt = s.config.dt;
    let point = s.config.at_point(r, s.config.intensities[0]);
    let setup = || -> Result<_, String> {
        let ground = s.eigenset(r)?.ground().clone().normalized().with_time(0.0);
        let mc = sample_seeds(&ground, SeedScheme::MonteCarlo { count: 2000, rng_seed: 2024 }).map_err(|e| e.to_string())?;
        let dense = sample_seeds(&ground, SeedScheme::DeterministicGrid { stride: 1, cutoff: 1e-6 }).map_err(|e| e.to_string())?;
        Ok((ground, mc, dense))
    };
    let (ground, mc, dense) = match setup() {
        Ok(v) => v,
        Err(e) => {
            report.check("density transport", || Err(e.clone()));
            report.check("ablations", || Err(e));
            return;
        }
    };
    let grid = *ground.grid();
    let hamiltonian = point.hamiltonian(r, point.intensities[0]).unwrap();
    let full_prop = Propagator::new(grid, hamiltonian, dt, point.absorber()).unwrap();

    let switch_step = (6.2 * period / dt).round() as u64;
    let switch = switch_step as f64 * dt;
    let window_end = 7.25 * period;
    let stop_step = ((window_end + period) / dt).round() as u64;
    let coulomb_prop = Propagator::new(grid, hamiltonian.with_repulsion_off_after(Some(switch)), dt, point.absorber()).unwrap();
    let mut candidates: Vec<Candidate> = dense
        .seeds
        .iter()
        .map(|&(a, b)| Candidate {
            seed: (a, b),
            full: Branch::new(TrajectoryMode::Full, BohmianState::at_rest(a, b, 0.0)),
            quantum_off: None,
            coulomb_off: None,
        })
        .collect();

    let transport_step = (2.0 * period / dt).round() as u64;
    let mut mc_states = mc.states(0.0);
    let settings = TracerSettings::default();
    let mut field = ground;
    let mut before = FieldFrame::new(&field, full_prop.spectral());
    let mut coulomb: Option<(WaveField, FieldFrame)> = None;
    for step in 1..=stop_step {
        field = full_prop.step(field).with_time(step as f64 * dt);
        let after = FieldFrame::new(&field, full_prop.spectral());
        if step <= transport_step {
            advance_trajectories(&mut mc_states, &before, &after, full_prop.hamiltonian(), TrajectoryMode::Full, &settings);
        }
        if step == transport_step {
            let ensemble = marginal_histogram(&grid, mc_states.iter().flat_map(|s| [s.x1, s.x2]));
            let density = density_marginal(&field);
            let tv = 0.5 * ensemble.iter().zip(&density).map(|(a, b)| (a - b).abs()).sum::<f64>();
            report.check("density transport", || {
                verdict(tv < 0.05, format!("{} MC seeds at R = {r}, t = 2T: total variation {tv:.4}", mc.len()))
            });
        }
        let coulomb_frames = coulomb.take().map(|(cfield, cbefore)| {
            let cfield = coulomb_prop.step(cfield).with_time(step as f64 * dt);
            let cafter = FieldFrame::new(&cfield, coulomb_prop.spectral());
            (cfield, cbefore, cafter)
        });
        let (full_ham, coulomb_ham) = (*full_prop.hamiltonian(), *coulomb_prop.hamiltonian());
        candidates.par_iter_mut().for_each(|c| {
            c.full.advance(&before, &after, &full_ham, switch);
            if let Some(b) = c.quantum_off.as_mut() {
                b.advance(&before, &after, &full_ham, switch);
            }
            if let (Some(b), Some((_, cbefore, cafter))) = (c.coulomb_off.as_mut(), coulomb_frames.as_ref()) {
                b.advance(cbefore, cafter, &coulomb_ham, switch);
            }
        });
        coulomb = coulomb_frames.map(|(cfield, _, cafter)| (cfield, cafter));
        if step == switch_step {
            for c in candidates.iter_mut().filter(|c| c.full.detector.event().is_none() && c.full.state.active()) {
                let fork = |mode| {
                    let mut branch = Branch::new(mode, c.full.state);
                    branch.detector = c.full.detector.clone();
                    branch.at_switch = Some(c.full.state);
                    branch
                };
                c.quantum_off = Some(fork(TrajectoryMode::QuantumOffAfter(switch)));
                c.coulomb_off = Some(fork(TrajectoryMode::CoulombOffAfter(switch)));
            }
            coulomb = Some((field.clone(), after.clone()));
        }
        before = after;
    }

    report.check("ablations", || {
        let pool: Vec<&Candidate> = candidates
            .iter()
            .filter(|c| c.quantum_off.is_some() && c.full_ok() && c.full_time() <= window_end && c.bound_at_switch(r))
            .collect();
        let chosen = pool.iter().min_by(|a, b| a.full_time().total_cmp(&b.full_time())).ok_or_else(|| {
            let window = candidates.iter().filter(|c| c.quantum_off.is_some() && c.full_time() <= window_end);
            let type1_e2 = window.clone().filter(|c| c.full_ok()).count();
            format!(
                "no Type 1 electron-2 ejection in (6.2T, 7.25T] with electron 2 in its well at the switch among {} seeds \
                 ({} ejections in the window, {type1_e2} Type 1 by electron 2)",
                candidates.len(),
                window.count()
            )
        })?;
        let count = |f: fn(&Candidate) -> bool| pool.iter().filter(|c| f(c)).count();
        verdict(
            chosen.coulomb_ok() && chosen.quantum_off_ok(),
            format!(
                "seed ({:.2}, {:.2}); full: {}; coulomb_off: {}; quantum_off: {} (crossed {}). \
                 Over all {} such seeds ({} with electron 1 inner): coulomb_off ejects electron 2 in {}, quantum_off inner electron crosses and escapes in {}",
                chosen.seed.0,
                chosen.seed.1,
                describe(Some(&chosen.full)),
                describe(chosen.coulomb_off.as_ref()),
                describe(chosen.quantum_off.as_ref()),
                chosen.quantum_off.as_ref().is_some_and(|b| b.crossed),
                pool.len(),
                pool.iter().filter(|c| c.inner() == Some(1)).count(),
                count(Candidate::coulomb_ok),
                count(Candidate::quantum_off_ok),
            ),
        )
    });
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    bohmion::runner::configure_workers().expect("worker count");
    let mut report = Report { failed: 0 };
    report.check("analytic oracle", analytic_oracle);
    match Sweep::load_or_run() {
        Ok(s) => {
            report.check("ionization peak", || ionization_peak(&s));
            report.check("type decomposition", || type_decomposition(&s));
            report.check("type ratio trend", || ratio_trend(&s));
            report.check("projection amplitudes", || projection_amplitudes(&s));
            report.check("stationarity", || stationarity(&s));
            report.check("conservation", || conservation(&s));
            transport_and_ablations(&s, &mut report);
        }
        Err(e) => {
            for name in [
                "ionization peak",
                "type decomposition",
                "type ratio trend",
                "projection amplitudes",
                "stationarity",
                "conservation",
                "density transport",
                "ablations",
            ] {
                report.check(name, || Err(format!("sweep unavailable: {e}")));
            }
        }
    }
    println!("{} criteria failed", report.failed);
    if report.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
