//! Split-step Fourier propagation in real and imaginary time, field-free
//! eigenstates, eigenstate projections and the probability current.

use std::cell::Cell;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

use crate::grid::{inner_product, transpose_in_place, Axis, Grid2D, GridError, Spectral, WaveField, EDGE_AMPLITUDE_THRESHOLD};
use crate::model::{Hamiltonian, MolecularModel};

pub const DEFAULT_DT: f64 = 0.02;
pub const DEFAULT_IMAGINARY_DT: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PropagatorError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("imaginary-time relaxation did not converge after {steps} steps (last energy change {delta:.3e} per step)")]
    NoConvergence { steps: usize, delta: f64 },
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
    #[error("at least one eigenstate must be requested")]
    NoStates,
}

/// Multiplicative edge absorber: `cos^exponent` over the outer `fraction` of
/// each half-axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorber {
    pub fraction: f64,
    pub exponent: f64,
}

impl Default for Absorber {
    fn default() -> Self {
        Self {
            fraction: 0.2,
            exponent: 0.125,
        }
    }
}

impl Absorber {
    /// Mask value at each node of one axis.
    pub fn profile(&self, grid: &Grid2D) -> Vec<f64> {
        let half = grid.half_extent();
        let onset = (1.0 - self.fraction) * half;
        let width = half - onset;
        grid.coordinates()
            .into_iter()
            .map(|x| {
                let d = x.abs() - onset;
                if d <= 0.0 {
                    1.0
                } else if d >= width {
                    0.0
                } else {
                    (0.5 * PI * d / width).cos().powf(self.exponent)
                }
            })
            .collect()
    }

    pub fn onset(&self, grid: &Grid2D) -> f64 {
        (1.0 - self.fraction) * grid.half_extent()
    }
}

/// Node table of the field-free potential.
pub fn potential_table(grid: &Grid2D, model: &MolecularModel) -> Vec<f64> {
    let xs = grid.coordinates();
    let nuclear: Vec<f64> = xs.iter().map(|&x| model.nuclear_potential(x)).collect();
    let mut v = Vec::with_capacity(grid.len());
    for (i, &x1) in xs.iter().enumerate() {
        for (j, &x2) in xs.iter().enumerate() {
            v.push(nuclear[i] + nuclear[j] + model.repulsion(x1, x2));
        }
    }
    v
}

/// Kinetic energy `(k1² + k2²)/2` per spectral node. Symmetric in the two
/// wavenumbers, so the transposed spectral layout needs no special care.
fn kinetic_table(spectral: &Spectral) -> Vec<f64> {
    let k = spectral.wavenumbers();
    let mut t = Vec::with_capacity(k.len() * k.len());
    for &ka in k {
        for &kb in k {
            t.push(0.5 * (ka * ka + kb * kb));
        }
    }
    t
}

/// Strang split-step propagator for the length-gauge TDSE.
pub struct Propagator {
    grid: Grid2D,
    spectral: Spectral,
    hamiltonian: Hamiltonian,
    dt: f64,
    xs: Vec<f64>,
    kinetic_phase: Vec<Complex64>,
    /// exp(-i V0 dt/2) with and without the electron-electron term.
    half_potential: Vec<Complex64>,
    half_potential_free: Option<Vec<Complex64>>,
    mask: Option<Vec<f64>>,
    edge_warned: Cell<bool>,
}

impl Propagator {
    pub fn new(grid: Grid2D, hamiltonian: Hamiltonian, dt: f64, absorber: Option<Absorber>) -> Result<Self, PropagatorError> {
        if !(dt > 0.0) {
            return Err(PropagatorError::BadStep(dt));
        }
        let spectral = Spectral::new(&grid);
        let kinetic_phase = kinetic_table(&spectral)
            .into_iter()
            .map(|t| Complex64::from_polar(1.0, -t * dt))
            .collect();
        let phase = |v: f64| Complex64::from_polar(1.0, -0.5 * v * dt);
        let half_potential = potential_table(&grid, &hamiltonian.model)
            .into_iter()
            .map(phase)
            .collect();
        let half_potential_free = hamiltonian.repulsion_off_after.map(|_| {
            potential_table(&grid, &hamiltonian.model.without_repulsion())
                .into_iter()
                .map(phase)
                .collect()
        });
        Ok(Self {
            xs: grid.coordinates(),
            mask: absorber.map(|a| a.profile(&grid)),
            grid,
            spectral,
            hamiltonian,
            dt,
            kinetic_phase,
            half_potential,
            half_potential_free,
            edge_warned: Cell::new(false),
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        &self.hamiltonian
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn apply_half_potential(&self, psi: &mut [Complex64], t_mid: f64) {
        let n = self.grid.n();
        let e = self.hamiltonian.pulse.field(t_mid);
        let static_half = match (&self.half_potential_free, self.hamiltonian.repulsion_off_after) {
            (Some(free), Some(ts)) if t_mid >= ts => free,
            _ => &self.half_potential,
        };
        let laser: Vec<Complex64> = self
            .xs
            .iter()
            .map(|&x| Complex64::from_polar(1.0, -0.5 * e * x * self.dt))
            .collect();
        for (i, row) in psi.chunks_exact_mut(n).enumerate() {
            let base = &static_half[i * n..(i + 1) * n];
            let li = laser[i];
            for ((c, v), lj) in row.iter_mut().zip(base).zip(&laser) {
                *c *= v * (li * lj);
            }
        }
    }

    fn apply_mask(&self, psi: &mut [Complex64]) {
        if let Some(mask) = &self.mask {
            let n = self.grid.n();
            for (i, row) in psi.chunks_exact_mut(n).enumerate() {
                let mi = mask[i];
                for (c, mj) in row.iter_mut().zip(mask) {
                    *c *= mi * mj;
                }
            }
        }
    }

    /// One Strang step `e^{-iV dt/2} e^{-iT dt} e^{-iV dt/2}`, potential at the
    /// mid-step time, absorber applied afterwards.
    pub fn step(&self, field: WaveField) -> WaveField {
        let t = field.time();
        let grid = *field.grid();
        let mut psi = field.into_amplitudes();
        let t_mid = t + 0.5 * self.dt;
        self.apply_half_potential(&mut psi, t_mid);
        self.spectral.forward_2d(&mut psi);
        psi.iter_mut()
            .zip(&self.kinetic_phase)
            .for_each(|(c, k)| *c *= k);
        self.spectral.inverse_2d(&mut psi);
        self.apply_half_potential(&mut psi, t_mid);
        self.apply_mask(&mut psi);
        let out = WaveField::new(grid, psi, t + self.dt).expect("grid unchanged");
        if self.mask.is_none() && !self.edge_warned.get() {
            let edge = out.edge_amplitude();
            if edge > EDGE_AMPLITUDE_THRESHOLD {
                log::warn!("edge amplitude {edge:.3e} at t = {:.2}; box may be too small", out.time());
                self.edge_warned.set(true);
            }
        }
        out
    }

    /// Advance `steps` steps.
    pub fn run(&self, mut field: WaveField, steps: usize) -> WaveField {
        for _ in 0..steps {
            field = self.step(field);
        }
        field
    }
}

/// Field-free Hamiltonian applied to a node table: spectral kinetic energy
/// plus the soft-core potential.
pub struct FieldFreeOperator {
    spectral: Spectral,
    kinetic: Vec<f64>,
    potential: Vec<f64>,
    n: usize,
}

impl FieldFreeOperator {
    pub fn new(grid: &Grid2D, model: &MolecularModel) -> Self {
        let spectral = Spectral::new(grid);
        Self {
            kinetic: kinetic_table(&spectral),
            potential: potential_table(grid, model),
            spectral,
            n: grid.n(),
        }
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn apply(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let mut out = psi.to_vec();
        self.spectral.forward_2d(&mut out);
        out.iter_mut().zip(&self.kinetic).for_each(|(c, t)| *c *= t);
        self.spectral.inverse_2d(&mut out);
        out.iter_mut()
            .zip(psi.iter().zip(&self.potential))
            .for_each(|(o, (p, v))| *o += p * v);
        let _ = self.n;
        out
    }
}

/// Orthonormal field-free eigenstates in the exchange-symmetric sector.
#[derive(Debug, Clone)]
pub struct EigenSet {
    pub states: Vec<WaveField>,
    pub energies: Vec<f64>,
}

impl EigenSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn ground(&self) -> &WaveField {
        &self.states[0]
    }

    pub fn grid(&self) -> &Grid2D {
        self.states[0].grid()
    }
}

#[derive(Debug, Clone)]
pub struct RelaxOptions {
    /// Imaginary time steps, used one after another; each stage runs to
    /// convergence. Later, smaller steps remove the splitting bias of the
    /// earlier ones.
    pub dtau_schedule: Vec<f64>,
    /// Convergence threshold on the largest Ritz-energy change per step.
    pub tolerance: f64,
    pub max_steps: usize,
    pub check_every: usize,
    /// Extra vectors carried along to speed up convergence of the highest
    /// requested state.
    pub guard_states: usize,
    /// Subspace-correction sweeps after the imaginary-time stages stop once
    /// every requested state has `‖Hφ - Eφ‖` below this.
    pub residual_tolerance: f64,
    pub max_polish_sweeps: usize,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self {
            dtau_schedule: vec![DEFAULT_IMAGINARY_DT, 0.01],
            tolerance: 1e-10,
            max_steps: 40_000,
            check_every: 10,
            guard_states: 1,
            residual_tolerance: 1e-9,
            max_polish_sweeps: 300,
        }
    }
}

/// Exchange-symmetric seed functions: Gaussian pairs at the two wells times
/// low-order symmetric polynomials in `x1 + x2` and `x1 - x2`.
fn seed_states(grid: &Grid2D, model: &MolecularModel, count: usize) -> Vec<Vec<Complex64>> {
    let half = 0.5 * model.distance();
    let g = |x: f64| (-0.5 * (x - half).powi(2)).exp() + (-0.5 * (x + half).powi(2)).exp();
    let mut exponents = Vec::new();
    'outer: for total in 0.. {
        for b in 0..=total / 2 {
            let a = total - 2 * b;
            exponents.push((a, 2 * b));
            if exponents.len() == count {
                break 'outer;
            }
        }
    }
    exponents
        .into_iter()
        .map(|(a, b)| {
            grid.sample(|x1, x2| {
                let s = x1 + x2;
                let d = x1 - x2;
                Complex64::new(g(x1) * g(x2) * s.powi(a) * d.powi(b), 0.0)
            })
        })
        .collect()
}

fn symmetrize(psi: &mut [Complex64], n: usize, scratch: &mut Vec<Complex64>) {
    scratch.clear();
    scratch.extend_from_slice(psi);
    transpose_in_place(scratch, n);
    psi.iter_mut()
        .zip(scratch.iter())
        .for_each(|(a, b)| *a = 0.5 * (*a + b));
}

fn gram_schmidt(states: &mut [Vec<Complex64>], grid: &Grid2D) {
    for a in 0..states.len() {
        let (done, rest) = states.split_at_mut(a);
        let current = &mut rest[0];
        for prev in done.iter() {
            let overlap = inner_product(prev, current, grid);
            current
                .iter_mut()
                .zip(prev)
                .for_each(|(c, p)| *c -= overlap * p);
        }
        let norm = inner_product(current, current, grid).re.sqrt();
        current.iter_mut().for_each(|c| *c /= norm);
    }
}

/// Rotate the block onto Ritz vectors of `op` and return the sorted Ritz
/// values.
fn rayleigh_ritz(states: &mut Vec<Vec<Complex64>>, op: &FieldFreeOperator, grid: &Grid2D) -> Vec<f64> {
    let m = states.len();
    let applied: Vec<Vec<Complex64>> = states.iter().map(|s| op.apply(s)).collect();
    let mut h = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            h[(a, b)] = inner_product(&states[a], &applied[b], grid).re;
        }
    }
    let h = 0.5 * (&h + h.transpose());
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let len = grid.len();
    let rotated: Vec<Vec<Complex64>> = order
        .iter()
        .map(|&col| {
            let mut v = vec![Complex64::new(0.0, 0.0); len];
            for a in 0..m {
                let w = eig.eigenvectors[(a, col)];
                v.iter_mut().zip(&states[a]).for_each(|(o, s)| *o += s * w);
            }
            v
        })
        .collect();
    *states = rotated;
    order.iter().map(|&c| eig.eigenvalues[c]).collect()
}

/// Append `candidate` to an orthonormal `basis` unless it is (numerically)
/// already in its span.
fn extend_orthonormal(basis: &mut Vec<Vec<Complex64>>, mut candidate: Vec<Complex64>, grid: &Grid2D) {
    let start = inner_product(&candidate, &candidate, grid).re.sqrt();
    for _ in 0..2 {
        for b in basis.iter() {
            let overlap = inner_product(b, &candidate, grid);
            candidate.iter_mut().zip(b).for_each(|(c, p)| *c -= overlap * p);
        }
    }
    let norm = inner_product(&candidate, &candidate, grid).re.sqrt();
    if norm > 1e-8 * start && norm > 0.0 {
        candidate.iter_mut().for_each(|c| *c /= norm);
        basis.push(candidate);
    }
}

/// Davidson-style refinement: residuals preconditioned by `(T + 1)⁻¹` are
/// added to the block and the enlarged subspace is Ritz-rotated. Removes the
/// splitting bias left by the imaginary-time stages. Returns the largest
/// residual norm among the first `k` states.
fn polish(
    states: &mut Vec<Vec<Complex64>>,
    energies: &mut Vec<f64>,
    k: usize,
    op: &FieldFreeOperator,
    grid: &Grid2D,
    options: &RelaxOptions,
) -> f64 {
    let n = grid.n();
    let block = states.len();
    let inverse: Vec<f64> = op.kinetic.iter().map(|t| 1.0 / (t + 1.0)).collect();
    let mut scratch = Vec::with_capacity(grid.len());
    let mut worst = f64::INFINITY;
    for sweep in 0..=options.max_polish_sweeps {
        let residuals: Vec<Vec<Complex64>> = states
            .iter()
            .zip(energies.iter())
            .map(|(s, &e)| op.apply(s).iter().zip(s).map(|(h, v)| h - v * e).collect())
            .collect();
        worst = residuals[..k]
            .iter()
            .map(|r| inner_product(r, r, grid).re.sqrt())
            .fold(0.0, f64::max);
        log::debug!("polish sweep {sweep}: residual {worst:.3e}");
        if worst < options.residual_tolerance || sweep == options.max_polish_sweeps {
            break;
        }
        let mut basis = std::mem::take(states);
        for mut r in residuals {
            op.spectral.forward_2d(&mut r);
            r.iter_mut().zip(&inverse).for_each(|(c, w)| *c *= w);
            op.spectral.inverse_2d(&mut r);
            symmetrize(&mut r, n, &mut scratch);
            extend_orthonormal(&mut basis, r, grid);
        }
        *energies = rayleigh_ritz(&mut basis, op, grid);
        basis.truncate(block);
        energies.truncate(block);
        *states = basis;
    }
    worst
}

/// Imaginary-time relaxation of the `k` lowest exchange-symmetric
/// field-free eigenstates.
pub fn relax_eigenstates(
    grid: &Grid2D,
    model: &MolecularModel,
    k: usize,
    options: &RelaxOptions,
) -> Result<EigenSet, PropagatorError> {
    if k == 0 {
        return Err(PropagatorError::NoStates);
    }
    let n = grid.n();
    let block = k + options.guard_states;
    let op = FieldFreeOperator::new(grid, model);
    let spectral = Spectral::new(grid);
    let mut states = seed_states(grid, model, block);
    let mut scratch = Vec::with_capacity(grid.len());
    for s in states.iter_mut() {
        symmetrize(s, n, &mut scratch);
    }
    gram_schmidt(&mut states, grid);

    let mut energies = rayleigh_ritz(&mut states, &op, grid);
    let mut steps = 0usize;
    for &dtau in &options.dtau_schedule {
        if !(dtau > 0.0) {
            return Err(PropagatorError::BadStep(dtau));
        }
        let half_v: Vec<f64> = op.potential().iter().map(|v| (-0.5 * v * dtau).exp()).collect();
        let kin: Vec<f64> = kinetic_table(&spectral).into_iter().map(|t| (-t * dtau).exp()).collect();
        let mut last_delta = f64::INFINITY;
        loop {
            for _ in 0..options.check_every {
                for s in states.iter_mut() {
                    s.iter_mut().zip(&half_v).for_each(|(c, v)| *c *= v);
                    spectral.forward_2d(s);
                    s.iter_mut().zip(&kin).for_each(|(c, f)| *c *= f);
                    spectral.inverse_2d(s);
                    s.iter_mut().zip(&half_v).for_each(|(c, v)| *c *= v);
                    symmetrize(s, n, &mut scratch);
                }
                gram_schmidt(&mut states, grid);
            }
            steps += options.check_every;
            let fresh = rayleigh_ritz(&mut states, &op, grid);
            let delta = fresh[..k]
                .iter()
                .zip(&energies[..k])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / options.check_every as f64;
            energies = fresh;
            log::debug!("relax dtau={dtau} step={steps} E0={:.12} delta={delta:.3e}", energies[0]);
            if delta < options.tolerance {
                break;
            }
            last_delta = delta;
            if steps >= options.max_steps {
                return Err(PropagatorError::NoConvergence {
                    steps,
                    delta: last_delta,
                });
            }
        }
        let _ = last_delta;
    }

    let residual = polish(&mut states, &mut energies, k, &op, grid, options);
    if residual > options.residual_tolerance {
        log::warn!("eigenstate residual {residual:.2e} above {:.0e}", options.residual_tolerance);
    }

    states.truncate(k);
    energies.truncate(k);
    let fields = states
        .into_iter()
        .map(|mut s| {
            // deterministic sign: largest node positive
            let pivot = s
                .iter()
                .copied()
                .max_by(|a, b| a.norm().total_cmp(&b.norm()))
                .unwrap_or(Complex64::new(1.0, 0.0));
            let phase = pivot.conj() / pivot.norm();
            s.iter_mut().for_each(|c| *c *= phase);
            WaveField::new(*grid, s, 0.0).expect("grid-sized")
        })
        .collect();
    Ok(EigenSet {
        states: fields,
        energies,
    })
}

/// Amplitudes and phases of a field's components along an eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub amplitudes: Vec<f64>,
    /// Radians in (-π, π], relative to the ground-state component.
    pub phases: Vec<f64>,
}

pub fn project(field: &WaveField, eigenset: &EigenSet) -> Result<Projection, PropagatorError> {
    let coefficients = eigenset
        .states
        .iter()
        .map(|s| s.inner(field))
        .collect::<Result<Vec<_>, _>>()?;
    let reference = coefficients.first().map(|c| c.arg()).unwrap_or(0.0);
    let wrap = |x: f64| {
        let y = (x + PI).rem_euclid(2.0 * PI) - PI;
        if y <= -PI {
            y + 2.0 * PI
        } else {
            y
        }
    };
    Ok(Projection {
        amplitudes: coefficients.iter().map(|c| c.norm()).collect(),
        phases: coefficients.iter().map(|c| wrap(c.arg() - reference)).collect(),
    })
}

/// Probability current `j_i = Im(ψ* ∂ψ/∂x_i)` at every node.
pub fn current_density(field: &WaveField) -> (Vec<f64>, Vec<f64>) {
    let spectral = Spectral::new(field.grid());
    current_density_with(field, &spectral)
}

pub fn current_density_with(field: &WaveField, spectral: &Spectral) -> (Vec<f64>, Vec<f64>) {
    let psi = field.amplitudes();
    let flux = |axis| -> Vec<f64> {
        spectral
            .derivative(psi, axis, 1)
            .iter()
            .zip(psi)
            .map(|(d, p)| (p.conj() * d).im)
            .collect()
    };
    (flux(Axis::X1), flux(Axis::X2))
}
