//! On-disk formats: binary field snapshots, CSV downsamples, eigenset
//! directories and trajectory tables.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bohm::{BohmianState, Dynamics, Trajectory, TrajectoryMode};
use crate::grid::{Grid2D, Spectral, WaveField};
use crate::propagator::{current_density_with, project, EigenSet};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"BOHM";
pub const SNAPSHOT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8 + 8;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

impl IoError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
        move |source| IoError::Io { path: path.to_path_buf(), source }
    }

    fn csv(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
        move |source| IoError::Csv { path: path.to_path_buf(), source }
    }

    fn json(path: &Path) -> impl FnOnce(serde_json::Error) -> IoError + '_ {
        move |source| IoError::Json { path: path.to_path_buf(), source }
    }

    fn format(path: &Path, message: impl Into<String>) -> IoError {
        IoError::Format { path: path.to_path_buf(), message: message.into() }
    }
}

pub fn ensure_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(IoError::io(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    File::create(path).map(BufWriter::new).map_err(IoError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(IoError::json(path))?;
    out.write_all(b"\n").map_err(IoError::io(path))?;
    out.flush().map_err(IoError::io(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let file = File::open(path).map_err(IoError::io(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(IoError::json(path))
}

/// Write a field in the binary snapshot format: `BOHM`, version (u32),
/// points per axis (u64), x_min, x_max, time (f64), then row-major
/// interleaved (re, im) pairs. Little-endian throughout.
pub fn write_field(path: &Path, field: &WaveField) -> Result<(), IoError> {
    let grid = field.grid();
    let mut buf = Vec::with_capacity(HEADER_LEN + 16 * grid.len());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(grid.n() as u64).to_le_bytes());
    buf.extend_from_slice(&grid.x_min().to_le_bytes());
    buf.extend_from_slice(&grid.x_max().to_le_bytes());
    buf.extend_from_slice(&field.time().to_le_bytes());
    for z in field.amplitudes() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    let mut out = create(path)?;
    out.write_all(&buf).map_err(IoError::io(path))?;
    out.flush().map_err(IoError::io(path))
}

pub fn read_field(path: &Path) -> Result<WaveField, IoError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(IoError::io(path))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(IoError::format(path, "not a field snapshot"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != SNAPSHOT_VERSION {
        return Err(IoError::format(path, format!("unsupported snapshot version {version}")));
    }
    let n = usize::try_from(u64_at(8)).map_err(|_| IoError::format(path, "grid size overflows"))?;
    let (x_min, x_max, time) = (f64_at(16), f64_at(24), f64_at(32));
    let grid = Grid2D::new(x_min, x_max, n).map_err(|e| IoError::format(path, e.to_string()))?;
    let expected = HEADER_LEN + 16 * grid.len();
    if bytes.len() != expected {
        return Err(IoError::format(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let amplitudes = bytes[HEADER_LEN..]
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    WaveField::new(grid, amplitudes, time).map_err(|e| IoError::format(path, e.to_string()))
}

/// Density and current on every `stride`-th node of each axis, columns
/// `x1, x2, density, j1, j2`.
pub fn write_field_csv(path: &Path, field: &WaveField, spectral: &Spectral, stride: usize) -> Result<(), IoError> {
    let grid = field.grid();
    let stride = stride.max(1);
    let (j1, j2) = current_density_with(field, spectral);
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["x1", "x2", "density", "j1", "j2"]).map_err(IoError::csv(path))?;
    for i in (0..grid.n()).step_by(stride) {
        for j in (0..grid.n()).step_by(stride) {
            let idx = grid.index(i, j);
            let rho = field.amplitudes()[idx].norm_sqr();
            w.serialize((grid.x(i), grid.x(j), rho, j1[idx], j2[idx])).map_err(IoError::csv(path))?;
        }
    }
    w.flush().map_err(IoError::io(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRecord {
    pub energies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

/// Sidecar describing one persisted snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub time: f64,
    pub total_norm: f64,
    pub interior_norm: f64,
    pub field_file: String,
    pub csv_file: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub projection: Option<ProjectionRecord>,
}

/// Persist `field` as `<stem>.bin`, `<stem>.csv` and `<stem>.json` inside
/// `dir`. The projection block is filled iff an eigenset is given.
pub fn write_snapshot(
    dir: &Path,
    stem: &str,
    field: &WaveField,
    spectral: &Spectral,
    eigenset: Option<&EigenSet>,
    csv_stride: usize,
) -> Result<(SnapshotRecord, Vec<PathBuf>), IoError> {
    ensure_dir(dir)?;
    let bin = dir.join(format!("{stem}.bin"));
    let csv_path = dir.join(format!("{stem}.csv"));
    let meta = dir.join(format!("{stem}.json"));
    write_field(&bin, field)?;
    write_field_csv(&csv_path, field, spectral, csv_stride)?;
    let projection = match eigenset {
        Some(set) => {
            let p = project(field, set).map_err(|e| IoError::format(&meta, e.to_string()))?;
            Some(ProjectionRecord { energies: set.energies.clone(), amplitudes: p.amplitudes, phases: p.phases })
        }
        None => None,
    };
    let record = SnapshotRecord {
        time: field.time(),
        total_norm: field.norm_sqr(),
        interior_norm: field.region_norm(15.0_f64.min(field.grid().half_extent())),
        field_file: file_name(&bin),
        csv_file: file_name(&csv_path),
        projection,
    };
    write_json(&meta, &record)?;
    Ok((record, vec![bin, csv_path, meta]))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EigenIndex {
    energies: Vec<f64>,
    files: Vec<String>,
}

/// Write an eigenset as `state_<k>.bin` files plus an `eigenset.json` index.
pub fn write_eigenset(dir: &Path, set: &EigenSet) -> Result<Vec<PathBuf>, IoError> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let mut files = Vec::new();
    for (k, state) in set.states.iter().enumerate() {
        let path = dir.join(format!("state_{k}.bin"));
        write_field(&path, state)?;
        files.push(file_name(&path));
        written.push(path);
    }
    let index = dir.join("eigenset.json");
    write_json(&index, &EigenIndex { energies: set.energies.clone(), files })?;
    written.push(index);
    Ok(written)
}

pub fn read_eigenset(dir: &Path) -> Result<EigenSet, IoError> {
    let index_path = dir.join("eigenset.json");
    let index: EigenIndex = read_json(&index_path)?;
    if index.files.len() != index.energies.len() || index.files.is_empty() {
        return Err(IoError::format(&index_path, "state and energy counts differ"));
    }
    let states = index
        .files
        .iter()
        .map(|f| read_field(&dir.join(f)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EigenSet { states, energies: index.energies })
}

const TRAJECTORY_HEADER: [&str; 8] = ["t", "x1", "v1", "x2", "v2", "alive1", "alive2", "mode"];

fn trajectory_row(s: &BohmianState, mode: &TrajectoryMode) -> [String; 8] {
    [
        s.time.to_string(),
        s.x1.to_string(),
        s.v1.to_string(),
        s.x2.to_string(),
        s.v2.to_string(),
        u8::from(s.alive1).to_string(),
        u8::from(s.alive2).to_string(),
        mode.label().to_string(),
    ]
}

/// One trajectory per file, columns `t, x1, v1, x2, v2, alive1, alive2, mode`.
pub fn write_trajectory_csv(path: &Path, trajectory: &Trajectory) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(TRAJECTORY_HEADER).map_err(IoError::csv(path))?;
    for s in &trajectory.samples {
        w.write_record(trajectory_row(s, &trajectory.mode)).map_err(IoError::csv(path))?;
    }
    w.flush().map_err(IoError::io(path))
}

/// Several trajectories in one file with a trailing `seed_id` column.
pub fn write_trajectories_csv<'a, I>(path: &Path, trajectories: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = (usize, &'a Trajectory)>,
{
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = TRAJECTORY_HEADER.to_vec();
    header.push("seed_id");
    w.write_record(&header).map_err(IoError::csv(path))?;
    for (id, trajectory) in trajectories {
        for s in &trajectory.samples {
            let row = trajectory_row(s, &trajectory.mode);
            w.write_record(row.iter().map(String::as_str).chain([id.to_string().as_str()]))
                .map_err(IoError::csv(path))?;
        }
    }
    w.flush().map_err(IoError::io(path))
}

/// Read a single-trajectory CSV. The switch time is not stored in the file,
/// so it is supplied by the caller for ablation modes.
pub fn read_trajectory_csv(path: &Path, switch_time: Option<f64>) -> Result<Trajectory, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(IoError::csv(path))?;
    let mut samples = Vec::new();
    let mut mode = None;
    for record in r.records() {
        let record = record.map_err(IoError::csv(path))?;
        let num = |k: usize| -> Result<f64, IoError> {
            record
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| IoError::format(path, format!("bad value in column {}", TRAJECTORY_HEADER[k])))
        };
        let label = record.get(7).unwrap_or("");
        if mode.is_none() {
            mode = Some(TrajectoryMode::parse(label, switch_time).map_err(|e| IoError::format(path, e.to_string()))?);
        }
        samples.push(BohmianState {
            time: num(0)?,
            x1: num(1)?,
            v1: num(2)?,
            x2: num(3)?,
            v2: num(4)?,
            alive1: num(5)? != 0.0,
            alive2: num(6)? != 0.0,
            dynamics: Dynamics::Guided,
            regularized: 0,
        });
    }
    let first = samples.first().ok_or_else(|| IoError::format(path, "empty trajectory"))?;
    Ok(Trajectory {
        seed: (first.x1, first.x2),
        mode: mode.unwrap_or(TrajectoryMode::Full),
        samples,
    })
}
