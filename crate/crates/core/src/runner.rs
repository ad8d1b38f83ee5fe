//! Run orchestration: relax, propagate with synchronous tracers, classify,
//! aggregate, persist.
//!
//! Output layout of one run directory:
//!
//! ```text
//! eigen/            state_<k>.bin, eigenset.json, model.json
//! snapshots/        snap_<step>.{bin,csv,json}
//! checkpoint/       field.bin, state.json (removed once the run completes)
//! propagation.json  final norms
//! ensemble.json     full EnsembleResult
//! pr_curve.csv      one row per (R, intensity)
//! seed_map.csv      per-seed outcome
//! trajectories.csv  or trajectories/seed_<id>.csv
//! manifest.json     written last; its presence marks a completed run
//! failure.json      written instead of the manifest when a stage fails
//! ```

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytic::{crossing_time, AnalyticError, AppendixDemo, PairKind};
use crate::bohm::{advance_state, check_non_crossing, BohmianState, FieldFrame, TracerSettings, Trajectory, TrajectoryMode};
use crate::config::{ConfigError, DerivedBlock, RunConfig, TrajectoryOutput};
use crate::ensemble::{
    aggregate, sample_seeds, seed_map, write_pr_curve_csv, write_seed_map_csv, EnsembleError, EnsembleResult,
    EventDetector, PrCurveRow, RunMetadata, SeedSet, IONIZATION_RADIUS,
};
use crate::grid::WaveField;
use crate::io::{
    ensure_dir, read_eigenset, read_field, read_json, write_eigenset, write_field, write_json, write_snapshot,
    write_trajectories_csv, write_trajectory_csv, IoError, SnapshotRecord,
};
use crate::propagator::{relax_eigenstates, EigenSet, Propagator, PropagatorError, RelaxOptions};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILURE_FILE: &str = "failure.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const WORKERS_ENV: &str = "BOHMION_WORKERS";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("halted after step {0}")]
    Halted(u64),
}

impl RunError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io(_) | RunError::Halted(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "validation",
            RunError::Io(_) => "io",
            RunError::Numerical(_) => "numerical",
            RunError::Halted(_) => "halted",
        }
    }
}

impl From<PropagatorError> for RunError {
    fn from(e: PropagatorError) -> Self {
        RunError::Numerical(e.to_string())
    }
}

impl From<EnsembleError> for RunError {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::Io(io) => RunError::Io(io),
            other => RunError::Numerical(other.to_string()),
        }
    }
}

impl From<AnalyticError> for RunError {
    fn from(e: AnalyticError) -> Self {
        RunError::Numerical(e.to_string())
    }
}

/// Size the global rayon pool from `BOHMION_WORKERS`, if set.
pub fn configure_workers() -> Result<(), RunError> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError::Validation { key: WORKERS_ENV.into(), message: format!("`{value}` is not a positive integer") })?;
    // a pool may already exist (tests); that is not an error
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tracer {
    state: BohmianState,
    detector: EventDetector,
    samples: Vec<BohmianState>,
}

/// Field plus tracers advanced in lock step. The field published at the end
/// of each step and the one before it bracket the tracer update.
pub struct Simulation {
    propagator: Propagator,
    field: WaveField,
    frame: Option<FieldFrame>,
    step: u64,
    tracers: Vec<Tracer>,
    seeds: Vec<(f64, f64)>,
    mode: TrajectoryMode,
    settings: TracerSettings,
    sample_every: Option<u64>,
}

impl Simulation {
    /// `sample_every` is the recording stride in steps; `None` records nothing.
    pub fn new(
        propagator: Propagator,
        initial: WaveField,
        seeds: &[(f64, f64)],
        mode: TrajectoryMode,
        sample_every: Option<u64>,
    ) -> Self {
        let field = initial.with_time(0.0);
        let tracers = seeds
            .iter()
            .map(|&(x1, x2)| {
                let state = BohmianState::at_rest(x1, x2, 0.0);
                let mut detector = EventDetector::new();
                detector.observe(&state);
                let samples = if sample_every.is_some() { vec![state] } else { Vec::new() };
                Tracer { state, detector, samples }
            })
            .collect();
        let mut sim = Self {
            propagator,
            field,
            frame: None,
            step: 0,
            tracers,
            seeds: seeds.to_vec(),
            mode,
            settings: TracerSettings::default(),
            sample_every,
        };
        sim.refresh_frame();
        sim
    }

    fn refresh_frame(&mut self) {
        self.frame = (!self.tracers.is_empty()).then(|| FieldFrame::new(&self.field, self.propagator.spectral()));
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.field.time()
    }

    pub fn field(&self) -> &WaveField {
        &self.field
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn states(&self) -> impl Iterator<Item = &BohmianState> {
        self.tracers.iter().map(|t| &t.state)
    }

    pub fn events(&self) -> Vec<Option<crate::ensemble::IonizationEvent>> {
        self.tracers.iter().map(|t| t.detector.event().copied()).collect()
    }

    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.tracers
            .iter()
            .zip(&self.seeds)
            .map(|(t, &seed)| Trajectory { seed, mode: self.mode, samples: t.samples.clone() })
            .collect()
    }

    /// One propagator step followed by one tracer step.
    pub fn advance(&mut self) {
        let dt = self.propagator.dt();
        let placeholder = WaveField::zeros(*self.field.grid(), 0.0);
        let current = std::mem::replace(&mut self.field, placeholder);
        let next_step = self.step + 1;
        // time from the step counter keeps restarted runs bit-identical
        let next = self.propagator.step(current).with_time(next_step as f64 * dt);
        if let Some(before) = self.frame.take() {
            let after = FieldFrame::new(&next, self.propagator.spectral());
            let force = *self.propagator.hamiltonian();
            let (mode, settings) = (self.mode, self.settings);
            let record = self.sample_every.is_some_and(|k| next_step.is_multiple_of(k));
            self.tracers.par_iter_mut().for_each(|t| {
                advance_state(&mut t.state, &before, &after, &force, mode, &settings);
                t.detector.observe(&t.state);
                if record && t.samples.last().is_none_or(|s| s.active()) {
                    t.samples.push(t.state);
                }
            });
            self.frame = Some(after);
        }
        self.field = next;
        self.step = next_step;
    }

    /// Append the current state to every trajectory still being recorded.
    pub fn record_final(&mut self) {
        if self.sample_every.is_none() {
            return;
        }
        for t in &mut self.tracers {
            let fresh = t.samples.last().is_none_or(|s| s.time < t.state.time);
            if fresh && t.samples.last().is_none_or(|s| s.active()) {
                t.samples.push(t.state);
            }
        }
    }

    fn checkpoint_state(&self, fingerprint: &str, snapshots: &[SnapshotRecord]) -> CheckpointState {
        CheckpointState {
            fingerprint: fingerprint.to_string(),
            step: self.step,
            seeds: self.seeds.clone(),
            tracers: self.tracers.clone(),
            snapshots: snapshots.to_vec(),
        }
    }

    /// Write `field.bin` and `state.json`; the state file is renamed into
    /// place last and names the step the field belongs to.
    pub fn write_checkpoint(&self, dir: &Path, fingerprint: &str, snapshots: &[SnapshotRecord]) -> Result<(), IoError> {
        ensure_dir(dir)?;
        let field_tmp = dir.join("field.bin.tmp");
        let state_tmp = dir.join("state.json.tmp");
        write_field(&field_tmp, &self.field)?;
        write_json(&state_tmp, &self.checkpoint_state(fingerprint, snapshots))?;
        rename(&field_tmp, &dir.join("field.bin"))?;
        rename(&state_tmp, &dir.join("state.json"))
    }

    /// Rebuild from a checkpoint written by [`Simulation::write_checkpoint`].
    /// Returns `None` when no usable checkpoint exists for this fingerprint.
    fn resume(
        dir: &Path,
        fingerprint: &str,
        propagator: Propagator,
        mode: TrajectoryMode,
        sample_every: Option<u64>,
    ) -> Result<Option<(Self, Vec<SnapshotRecord>)>, IoError> {
        let state_path = dir.join("state.json");
        let field_path = dir.join("field.bin");
        if !state_path.exists() || !field_path.exists() {
            return Ok(None);
        }
        let state: CheckpointState = read_json(&state_path)?;
        if state.fingerprint != fingerprint {
            log::warn!("ignoring checkpoint in {} from a different configuration", dir.display());
            return Ok(None);
        }
        let field = read_field(&field_path)?;
        let expected = state.step as f64 * propagator.dt();
        if field.time() != expected || field.grid() != propagator.grid() {
            log::warn!("ignoring inconsistent checkpoint in {}", dir.display());
            return Ok(None);
        }
        let mut sim = Self {
            propagator,
            field,
            frame: None,
            step: state.step,
            tracers: state.tracers,
            seeds: state.seeds,
            mode,
            settings: TracerSettings::default(),
            sample_every,
        };
        sim.refresh_frame();
        Ok(Some((sim, state.snapshots)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointState {
    fingerprint: String,
    step: u64,
    seeds: Vec<(f64, f64)>,
    tracers: Vec<Tracer>,
    snapshots: Vec<SnapshotRecord>,
}

fn rename(from: &Path, to: &Path) -> Result<(), IoError> {
    fs::rename(from, to).map_err(|source| IoError::Io { path: to.to_path_buf(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Relax,
    Propagate,
    Trajectories,
}

impl Stage {
    pub fn label(&self) -> &'static str {
        match self {
            Stage::Relax => "relax",
            Stage::Propagate => "propagate",
            Stage::Trajectories => "trajectories",
        }
    }
}

/// Test hooks that are not part of the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Stop with [`RunError::Halted`] right after the first checkpoint at or
    /// beyond this step, as if the process had been killed.
    pub halt_after_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Option<RunConfig>,
    pub derived: Option<DerivedBlock>,
    pub started_unix: u64,
    pub wall_time_s: f64,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn file(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRecord {
    pub command: String,
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), IoError> {
    let mut file = fs::File::open(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

/// Every regular file under `root` except the manifest and failure records,
/// sorted by relative path.
pub fn inventory(root: &Path) -> Result<Vec<FileEntry>, IoError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), IoError> {
        let entries = fs::read_dir(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
        for entry in entries {
            let path = entry.map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut paths = Vec::new();
    walk(root, &mut paths)?;
    let mut entries = Vec::with_capacity(paths.len());
    for path in paths {
        let rel = path.strip_prefix(root).unwrap_or(&path);
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if rel == MANIFEST_FILE || rel == FAILURE_FILE {
            continue;
        }
        let (sha256, bytes) = sha256_file(&path)?;
        entries.push(FileEntry { path: rel, bytes, sha256 });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(entries)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn remove_if_exists(path: &Path) -> Result<(), IoError> {
    let result = if path.is_dir() { fs::remove_dir_all(path) } else { fs::remove_file(path) };
    match result {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(IoError::Io { path: path.to_path_buf(), source: e }),
        _ => Ok(()),
    }
}

/// Run `body` inside `out`, then write the manifest on success or a failure
/// record on error. Partial outputs are kept either way.
fn finish<F>(command: &str, config: Option<&RunConfig>, out: &Path, body: F) -> Result<RunManifest, RunError>
where
    F: FnOnce() -> Result<(), RunError>,
{
    let started = Instant::now();
    let started_unix = unix_now();
    ensure_dir(out)?;
    remove_if_exists(&out.join(MANIFEST_FILE))?;
    remove_if_exists(&out.join(FAILURE_FILE))?;
    match body() {
        Ok(()) => {
            let manifest = RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: config.cloned(),
                derived: config.map(RunConfig::derived),
                started_unix,
                wall_time_s: started.elapsed().as_secs_f64(),
                files: inventory(out)?,
            };
            write_json(&out.join(MANIFEST_FILE), &manifest)?;
            Ok(manifest)
        }
        Err(e) => {
            let record = FailureRecord {
                command: command.to_string(),
                kind: e.kind().to_string(),
                message: e.to_string(),
                exit_code: e.exit_code(),
            };
            if let Err(io) = write_json(&out.join(FAILURE_FILE), &record) {
                log::error!("could not write failure record: {io}");
            }
            Err(e)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EigenKey {
    #[serde(rename = "R")]
    r: f64,
    alpha: f64,
    p: f64,
    box_half_extent: f64,
    spacing: f64,
    eigen_states: usize,
}

/// Load the eigenset from `dir` when it was computed for the same model and
/// grid, otherwise relax and store it.
pub fn ensure_eigenset(config: &RunConfig, r: f64, dir: &Path) -> Result<EigenSet, RunError> {
    let key = EigenKey {
        r,
        alpha: config.alpha,
        p: config.p,
        box_half_extent: config.box_half_extent,
        spacing: config.spacing,
        eigen_states: config.eigen_states,
    };
    let key_path = dir.join("model.json");
    if key_path.exists() {
        let stored: Result<EigenKey, _> = read_json(&key_path);
        if stored.as_ref().is_ok_and(|k| *k == key) {
            log::info!("reusing eigenstates in {}", dir.display());
            return Ok(read_eigenset(dir)?);
        }
        log::info!("stored eigenstates in {} do not match; relaxing again", dir.display());
    }
    let grid = config.grid()?;
    let model = config.model(r)?;
    log::info!("relaxing {} eigenstates at R = {r} on {}^2 points", config.eigen_states, grid.n());
    let set = relax_eigenstates(&grid, &model, config.eigen_states, &RelaxOptions::default())?;
    log::info!("eigenvalues {:?}", set.energies);
    remove_if_exists(&key_path)?;
    write_eigenset(dir, &set)?;
    write_json(&key_path, &key)?;
    Ok(set)
}

fn config_fingerprint(config: &RunConfig, stage: Stage) -> String {
    let mut c = config.clone();
    c.output_dir = PathBuf::new();
    let json = serde_json::to_vec(&(stage, &c)).unwrap_or_default();
    hex::encode(Sha256::digest(&json))
}

fn steps_for(config: &RunConfig, t: f64) -> u64 {
    (t / config.dt).round().max(0.0) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationSummary {
    pub t_end: f64,
    pub steps: u64,
    pub total_norm: f64,
    pub interior_norm: f64,
    pub p_norm_loss: f64,
}

/// Outcome of one propagate/trajectories run, besides the files it wrote.
#[derive(Debug, Clone)]
pub struct PointRun {
    pub summary: PropagationSummary,
    pub ensemble: Option<EnsembleResult>,
}

fn propagate_point(config: &RunConfig, out: &Path, stage: Stage, options: RunOptions) -> Result<PointRun, RunError> {
    let (r, intensity) = config.single_point()?;
    let mode = config.trajectory_mode()?;
    let eigen = ensure_eigenset(config, r, &out.join("eigen"))?;
    let ground = eigen.ground().clone().normalized().with_time(0.0);
    let grid = config.grid()?;
    let hamiltonian = config.hamiltonian(r, intensity)?;
    let pulse = hamiltonian.pulse;
    let propagator = Propagator::new(grid, hamiltonian, config.dt, config.absorber())?;

    let tracing = stage == Stage::Trajectories;
    let seeds = if tracing { Some(sample_seeds(&ground, config.seed_scheme)?) } else { None };
    let sample_every = (tracing && config.trajectory_output != TrajectoryOutput::None)
        .then(|| steps_for(config, config.time(config.trajectory_sample_every)).max(1));

    let steps = config.steps();
    let snapshot_every = config.snapshot_every.map(|t| steps_for(config, config.time(t)).max(1));
    let mut snapshot_steps: Vec<u64> = config.snapshot_times.iter().map(|&t| steps_for(config, config.time(t))).collect();
    snapshot_steps.sort_unstable();
    let is_snapshot = |step: u64| snapshot_every.is_some_and(|k| step.is_multiple_of(k)) || snapshot_steps.binary_search(&step).is_ok();
    let checkpoint_every = config.checkpoint_every.map(|t| steps_for(config, config.time(t)).max(1));

    let checkpoint_dir = out.join(CHECKPOINT_DIR);
    let snapshot_dir = out.join("snapshots");
    let fingerprint = config_fingerprint(config, stage);
    let seed_points: Vec<(f64, f64)> = seeds.as_ref().map_or_else(Vec::new, |s| s.seeds.clone());

    let resumed = Simulation::resume(&checkpoint_dir, &fingerprint, Propagator::new(grid, hamiltonian, config.dt, config.absorber())?, mode, sample_every)?;
    let (mut sim, mut snapshots) = match resumed {
        Some((sim, snaps)) => {
            log::info!("resuming from step {} (t = {:.2})", sim.step(), sim.time());
            (sim, snaps)
        }
        None => {
            remove_if_exists(&checkpoint_dir)?;
            remove_if_exists(&snapshot_dir)?;
            (Simulation::new(propagator, ground, &seed_points, mode, sample_every), Vec::new())
        }
    };

    let take_snapshot = |sim: &Simulation, snapshots: &mut Vec<SnapshotRecord>| -> Result<(), RunError> {
        let stem = format!("snap_{:07}", sim.step());
        let (record, _) = write_snapshot(&snapshot_dir, &stem, sim.field(), sim.propagator().spectral(), Some(&eigen), config.snapshot_csv_stride)?;
        snapshots.push(record);
        Ok(())
    };
    if sim.step() == 0 && is_snapshot(0) {
        take_snapshot(&sim, &mut snapshots)?;
    }
    let period_steps = steps_for(config, config.period()).max(1);
    while sim.step() < steps {
        sim.advance();
        let step = sim.step();
        if is_snapshot(step) {
            take_snapshot(&sim, &mut snapshots)?;
        }
        if step % period_steps == 0 {
            let norm = sim.field().norm_sqr();
            if !norm.is_finite() || norm > 1.0 + 1e-6 {
                return Err(RunError::Numerical(format!("norm {norm} at t = {:.3}", sim.time())));
            }
            log::info!("t = {:.1} / {:.1}, norm {norm:.6}", sim.time(), config.t_end_au());
        }
        if checkpoint_every.is_some_and(|k| step % k == 0) && step < steps {
            sim.write_checkpoint(&checkpoint_dir, &fingerprint, &snapshots)?;
            if options.halt_after_step.is_some_and(|h| step >= h) {
                return Err(RunError::Halted(step));
            }
        }
    }
    sim.record_final();

    let field = sim.field();
    let interior = field.region_norm(IONIZATION_RADIUS.min(grid.half_extent()));
    let summary = PropagationSummary {
        t_end: sim.time(),
        steps,
        total_norm: field.norm_sqr(),
        interior_norm: interior,
        p_norm_loss: 1.0 - interior,
    };
    write_json(&out.join("propagation.json"), &summary)?;
    if !snapshots.is_empty() {
        write_json(&snapshot_dir.join("index.json"), &snapshots)?;
    }

    let ensemble = match seeds {
        Some(seeds) => Some(write_ensemble_outputs(config, out, &sim, &seeds, &pulse, r, intensity, summary.p_norm_loss)?),
        None => None,
    };
    remove_if_exists(&checkpoint_dir)?;
    Ok(PointRun { summary, ensemble })
}

#[allow(clippy::too_many_arguments)]
fn write_ensemble_outputs(
    config: &RunConfig,
    out: &Path,
    sim: &Simulation,
    seeds: &SeedSet,
    pulse: &crate::model::LaserPulse,
    r: f64,
    intensity: f64,
    p_norm_loss: f64,
) -> Result<EnsembleResult, RunError> {
    let metadata = RunMetadata { r, intensity_w_cm2: intensity, mode: config.trajectory_mode()?.label().to_string() };
    let result = aggregate(seeds, &sim.events(), metadata, p_norm_loss, pulse)?;
    if result.p_ambiguous > 0.0 {
        log::warn!("{:.3e} of the seed weight ionized with the partner inside the dead band", result.p_ambiguous);
    }
    write_json(&out.join("ensemble.json"), &result)?;
    write_pr_curve_csv(&out.join("pr_curve.csv"), &[PrCurveRow::from(&result)])?;
    write_seed_map_csv(&out.join("seed_map.csv"), &seed_map(&result))?;
    let trajectories = sim.trajectories();
    match config.trajectory_output {
        TrajectoryOutput::Concatenated => {
            write_trajectories_csv(&out.join("trajectories.csv"), trajectories.iter().enumerate())?;
        }
        TrajectoryOutput::PerSeed => {
            let dir = out.join("trajectories");
            remove_if_exists(&dir)?;
            ensure_dir(&dir)?;
            for (id, t) in trajectories.iter().enumerate() {
                write_trajectory_csv(&dir.join(format!("seed_{id:05}.csv")), t)?;
            }
        }
        TrajectoryOutput::None => {}
    }
    Ok(result)
}

/// `relax` subcommand: eigenstates only.
pub fn run_relax(config: &RunConfig, out: &Path) -> Result<RunManifest, RunError> {
    finish(Stage::Relax.label(), Some(config), out, || {
        let (r, _) = config.single_point()?;
        ensure_eigenset(config, r, &out.join("eigen")).map(|_| ())
    })
}

/// `propagate` and `trajectories` subcommands for a single (R, intensity).
pub fn run_pipeline(config: &RunConfig, out: &Path, stage: Stage, options: RunOptions) -> Result<(RunManifest, PointRun), RunError> {
    if stage == Stage::Relax {
        let manifest = run_relax(config, out)?;
        let summary = PropagationSummary { t_end: 0.0, steps: 0, total_norm: 1.0, interior_norm: 1.0, p_norm_loss: 0.0 };
        return Ok((manifest, PointRun { summary, ensemble: None }));
    }
    let mut point = None;
    let manifest = finish(stage.label(), Some(config), out, || {
        point = Some(propagate_point(config, out, stage, options)?);
        Ok(())
    })?;
    Ok((manifest, point.expect("set on success")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(rename = "R")]
    pub r: f64,
    pub intensity_w_cm2: f64,
    pub dir: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub row: Option<PrCurveRow>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub manifest: RunManifest,
    pub points: Vec<SweepPoint>,
    pub results: Vec<EnsembleResult>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.error.is_some()).count()
    }
}

pub fn point_dir_name(r: f64, intensity: f64) -> String {
    format!("R{r}_I{intensity:e}")
}

/// Every (R, intensity) pair in its own subdirectory. A failing point is
/// recorded and the sweep moves on.
pub fn sweep(config: &RunConfig, out: &Path) -> Result<SweepOutcome, RunError> {
    let mut points = Vec::new();
    let mut results = Vec::new();
    let manifest = finish("sweep", Some(config), out, || {
        for &intensity in &config.intensities {
            for &r in &config.r_values {
                let name = point_dir_name(r, intensity);
                let point_config = config.at_point(r, intensity);
                log::info!("sweep point R = {r}, I = {intensity:e}");
                let outcome = run_pipeline(&point_config, &out.join(&name), Stage::Trajectories, RunOptions::default());
                let point = match outcome {
                    Ok((_, run)) => {
                        let ensemble = run.ensemble.expect("trajectory stage aggregates");
                        let row = PrCurveRow::from(&ensemble);
                        results.push(ensemble);
                        SweepPoint { r, intensity_w_cm2: intensity, dir: name, status: "ok".into(), error: None, row: Some(row) }
                    }
                    Err(e) => {
                        log::error!("sweep point R = {r}, I = {intensity:e} failed: {e}");
                        SweepPoint { r, intensity_w_cm2: intensity, dir: name, status: e.kind().into(), error: Some(e.to_string()), row: None }
                    }
                };
                points.push(point);
            }
        }
        let rows: Vec<PrCurveRow> = points.iter().filter_map(|p| p.row.clone()).collect();
        write_pr_curve_csv(&out.join("pr_curve.csv"), &rows)?;
        write_json(&out.join("sweep.json"), &points)?;
        Ok(())
    })?;
    Ok(SweepOutcome { manifest, points, results })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixSummary {
    pub demo: AppendixDemo,
    pub product_crossing_time: Option<f64>,
    pub symmetrized_min_separation: f64,
}

/// `appendix-demo` subcommand: analytic two-packet trajectories.
pub fn run_appendix(demo: &AppendixDemo, out: &Path) -> Result<(RunManifest, AppendixSummary), RunError> {
    let mut summary = None;
    let manifest = finish("appendix-demo", None, out, || {
        let run = demo.run()?;
        write_trajectory_csv(&out.join("appendix_symmetrized.csv"), &run.symmetrized)?;
        write_trajectory_csv(&out.join("appendix_product.csv"), &run.product)?;
        let s = AppendixSummary {
            demo: *demo,
            product_crossing_time: crossing_time(&run.product),
            symmetrized_min_separation: check_non_crossing(&run.symmetrized),
        };
        write_json(&out.join("appendix_params.json"), &s)?;
        summary = Some(s);
        Ok(())
    })?;
    Ok((manifest, summary.expect("set on success")))
}

/// Kind-tagged helper for callers that only need one pair.
pub fn appendix_trajectory(demo: &AppendixDemo, kind: PairKind) -> Result<Trajectory, RunError> {
    Ok(demo.trace(kind)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TimeSpec;
    use crate::ensemble::read_pr_curve_csv;
    use crate::io::read_trajectory_csv;

    /// Small, fast configuration: a strong short pulse on a coarse box.
    /// Keys in `extra` replace the defaults.
    fn small_config(extra: &str) -> RunConfig {
        let base = "R = 4\nbox_half_extent = 20\nspacing = 0.4\ndt = 0.05\nintensity_W_cm2 = 5e14\nramp_cycles = 0.25\n\
                    t_end = 40\neigen_states = 2\nseed_stride = 6\nsnapshot_every = none\ncheckpoint_every = 10\n\
                    trajectory_sample_every = 2";
        let overrides = crate::config::parse_pairs(extra).unwrap();
        let mut text: Vec<String> = base
            .lines()
            .filter(|l| !overrides.contains_key(l.split('=').next().unwrap().trim()))
            .map(str::to_string)
            .collect();
        text.extend(overrides.iter().map(|(k, (_, v))| format!("{k} = {v}")));
        RunConfig::parse(&text.join("\n")).unwrap()
    }

    #[test]
    fn pipeline_writes_manifest_listing_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let config = small_config("snapshot_times = 20");
        let (manifest, point) = run_pipeline(&config, &out, Stage::Trajectories, RunOptions::default()).unwrap();
        for name in ["pr_curve.csv", "seed_map.csv", "ensemble.json", "propagation.json", "trajectories.csv", "eigen/eigenset.json", "snapshots/snap_0000400.bin"] {
            assert!(manifest.file(name).is_some(), "{name} missing from manifest");
        }
        assert!(!out.join(CHECKPOINT_DIR).exists());
        let on_disk = inventory(&out).unwrap();
        assert_eq!(on_disk, manifest.files);
        let back: RunManifest = read_json(&out.join(MANIFEST_FILE)).unwrap();
        assert_eq!(back.files, manifest.files);
        let ensemble = point.ensemble.unwrap();
        assert!(ensemble.outcomes.len() > 4);
        assert!((0.0..=1.0).contains(&point.summary.p_norm_loss));
        let rows = read_pr_curve_csv(&out.join("pr_curve.csv")).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].r, 4.0);
    }

    #[test]
    fn identical_runs_are_bit_identical_across_worker_counts() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config("");
        let run = |name: &str, workers: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
            pool.install(|| run_pipeline(&config, &dir.path().join(name), Stage::Trajectories, RunOptions::default()).unwrap().0)
        };
        let a = run("a", 1);
        let b = run("b", 3);
        assert_eq!(a.files, b.files);
        assert_eq!(a.file("pr_curve.csv").unwrap().sha256, b.file("pr_curve.csv").unwrap().sha256);
    }

    #[test]
    fn restart_from_checkpoint_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config("");
        let (_, full) = run_pipeline(&config, &dir.path().join("full"), Stage::Trajectories, RunOptions::default()).unwrap();

        let out = dir.path().join("restarted");
        let halted = run_pipeline(&config, &out, Stage::Trajectories, RunOptions { halt_after_step: Some(300) });
        assert!(matches!(halted, Err(RunError::Halted(400))), "{halted:?}");
        assert!(out.join(FAILURE_FILE).exists());
        assert!(!out.join(MANIFEST_FILE).exists());
        assert!(out.join(CHECKPOINT_DIR).join("state.json").exists());

        let (_, resumed) = run_pipeline(&config, &out, Stage::Trajectories, RunOptions::default()).unwrap();
        let (a, b) = (full.ensemble.unwrap(), resumed.ensemble.unwrap());
        assert!((a.p_norm_loss - b.p_norm_loss).abs() < 1e-10);
        assert!((a.p_trajectory - b.p_trajectory).abs() < 1e-10);
        assert_eq!(a.outcomes, b.outcomes);
        assert!(!out.join(FAILURE_FILE).exists());
        assert_eq!(
            sha256_file(&dir.path().join("full/trajectories.csv")).unwrap(),
            sha256_file(&out.join("trajectories.csv")).unwrap()
        );
    }

    #[test]
    fn ablation_mode_is_carried_into_trajectory_files() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config("mode = quantum_off_after\nt_switch = 0.1T\ntrajectory_output = per_seed\nt_end = 20");
        assert_eq!(config.t_switch, Some(TimeSpec::Periods { periods: 0.1 }));
        let out = dir.path().join("q");
        run_pipeline(&config, &out, Stage::Trajectories, RunOptions::default()).unwrap();
        let switch = config.trajectory_mode().unwrap().switch_time();
        let t = read_trajectory_csv(&out.join("trajectories/seed_00000.csv"), switch).unwrap();
        assert_eq!(t.mode, TrajectoryMode::QuantumOffAfter(0.1 * config.period()));
        let text = fs::read_to_string(out.join("trajectories/seed_00000.csv")).unwrap();
        assert!(text.lines().skip(1).all(|l| l.ends_with(",quantum_off_after")));
    }

    #[test]
    fn eigenset_is_reused_only_for_matching_models() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config("");
        let eigen = dir.path().join("eigen");
        let first = ensure_eigenset(&config, 4.0, &eigen).unwrap();
        let stamp = fs::metadata(eigen.join("state_0.bin")).unwrap().modified().unwrap();
        let again = ensure_eigenset(&config, 4.0, &eigen).unwrap();
        assert_eq!(first.energies, again.energies);
        assert_eq!(fs::metadata(eigen.join("state_0.bin")).unwrap().modified().unwrap(), stamp);
        let other = ensure_eigenset(&config, 3.0, &eigen).unwrap();
        assert!(other.energies[0] != first.energies[0]);
    }

    #[test]
    fn failures_leave_a_record_and_no_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("bad");
        // a directory squatting on an output name makes the final write fail
        fs::create_dir_all(out.join("pr_curve.csv")).unwrap();
        let err = run_pipeline(&small_config("t_end = 5"), &out, Stage::Trajectories, RunOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("pr_curve.csv"), "{err}");
        let record: FailureRecord = read_json(&out.join(FAILURE_FILE)).unwrap();
        assert_eq!(record.kind, "io");
        assert!(!out.join(MANIFEST_FILE).exists());
        assert!(out.join("eigen/eigenset.json").exists());
        assert!(out.join("propagation.json").exists());
    }

    #[test]
    fn numerical_failures_map_to_exit_code_three() {
        let err = RunError::from(EnsembleError::NoSeeds { cutoff: 0.5 });
        assert_eq!((err.exit_code(), err.kind()), (3, "numerical"));
        let err = RunError::from(PropagatorError::NoConvergence { steps: 10, delta: 1.0 });
        assert_eq!(err.exit_code(), 3);
        assert_eq!(RunError::from(RunConfig::parse("").unwrap_err()).exit_code(), 2);
    }

    #[test]
    fn unwritable_output_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let out = blocker.join("run");
        let err = run_relax(&small_config(""), &out).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains(&*blocker.to_string_lossy()), "{err}");
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config("R = 2, 4\nintensity_W_cm2 = 0, 5e14\nt_end = 10\ntrajectory_output = none");
        let outcome = sweep(&config, dir.path()).unwrap();
        assert_eq!(outcome.points.len(), 4);
        assert_eq!(outcome.failures(), 0);
        let rows = read_pr_curve_csv(&dir.path().join("pr_curve.csv")).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(outcome.manifest.file(&format!("{}/pr_curve.csv", point_dir_name(4.0, 5e14))).is_some());

        let mut broken = config.clone();
        broken.r_values = vec![-1.0, 2.0];
        broken.intensities = vec![5e14];
        let outcome = sweep(&broken, &dir.path().join("broken")).unwrap();
        assert_eq!(outcome.failures(), 1);
        assert_eq!(outcome.points[0].status, "validation");
        assert_eq!(outcome.points[1].status, "ok");
    }

    #[test]
    fn appendix_demo_writes_both_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, summary) = run_appendix(&AppendixDemo::default(), dir.path()).unwrap();
        for name in ["appendix_symmetrized.csv", "appendix_product.csv", "appendix_params.json"] {
            assert!(manifest.file(name).is_some());
        }
        assert!((summary.product_crossing_time.unwrap() - 3.0).abs() < 0.05);
        assert!(summary.symmetrized_min_separation > 0.0);
    }
}
