#![allow(dead_code)]

use bohmion::analytic::{analytic_velocity, pair_value, AppendixDemo, PairKind};
use bohmion::bohm::FieldFrame;
use bohmion::grid::{Grid2D, Spectral, WaveField};
use bohmion::model::{Hamiltonian, LaserPulse, MolecularModel, RampShape};
use bohmion::propagator::{relax_eigenstates, EigenSet, Propagator, RelaxOptions};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Coarse box used by the fast dynamics tests.
pub fn small_grid() -> Grid2D {
    Grid2D::centered(20.0, 0.4).unwrap()
}

pub fn eigenset(grid: &Grid2D, r: f64, k: usize) -> EigenSet {
    relax_eigenstates(grid, &MolecularModel::with_distance(r).unwrap(), k, &RelaxOptions::default()).unwrap()
}

pub fn ground(grid: &Grid2D, r: f64) -> WaveField {
    eigenset(grid, r, 1).ground().clone().normalized().with_time(0.0)
}

pub fn pulse(intensity: f64, t_end: f64) -> LaserPulse {
    LaserPulse::from_lab_units(1064.0, intensity, 5.0, RampShape::Linear, t_end).unwrap()
}

pub fn hamiltonian(r: f64, intensity: f64, t_end: f64) -> Hamiltonian {
    Hamiltonian::new(MolecularModel::with_distance(r).unwrap(), pulse(intensity, t_end))
}

pub fn propagator(grid: Grid2D, ham: Hamiltonian, dt: f64, absorber: bool) -> Propagator {
    Propagator::new(grid, ham, dt, absorber.then(Default::default)).unwrap()
}

/// 1D Fourier-collocation kinetic matrix `-½ d²/dx²`.
fn kinetic_matrix(grid: &Grid2D) -> DMatrix<f64> {
    let n = grid.n();
    let k = grid.wavenumbers();
    let h = grid.spacing();
    DMatrix::from_fn(n, n, |a, b| {
        let dx = (a as f64 - b as f64) * h;
        k.iter().map(|km| 0.5 * km * km * (km * dx).cos()).sum::<f64>() / n as f64
    })
}

pub fn dense_symmetric_energies(grid: &Grid2D, model: &MolecularModel, count: usize) -> Vec<f64> {
    let n = grid.n();
    let xs = grid.coordinates();
    let t = kinetic_matrix(grid);
    let v = |a: usize, b: usize| model.softcore_potential(xs[a], xs[b]);
    let h_full = |a: usize, b: usize, c: usize, d: usize| -> f64 {
        let mut s = 0.0;
        if b == d {
            s += t[(a, c)];
        }
        if a == c {
            s += t[(b, d)];
        }
        if a == c && b == d {
            s += v(a, b);
        }
        s
    };
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let coef = |i: usize, j: usize| if i == j { 0.5 } else { std::f64::consts::FRAC_1_SQRT_2 };
    let m = pairs.len();
    let mut h = DMatrix::<f64>::zeros(m, m);
    for (p, &(i, j)) in pairs.iter().enumerate() {
        for (q, &(k, l)) in pairs.iter().enumerate().skip(p) {
            let value = coef(i, j)
                * coef(k, l)
                * (h_full(i, j, k, l) + h_full(i, j, l, k) + h_full(j, i, k, l) + h_full(j, i, l, k));
            h[(p, q)] = value;
            h[(q, p)] = value;
        }
    }
    let mut e: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e.truncate(count);
    e
}

/// Largest grid-vs-closed-form velocity difference over `points` random
/// points where the pair density exceeds 1e-4 of its peak.
pub fn max_velocity_error(kind: PairKind, t: f64, points: usize) -> f64 {
    let demo = AppendixDemo::default();
    let (a, b) = (demo.packet1, demo.packet2);
    let grid = Grid2D::new(-16.0, 16.0, 640).unwrap();
    let field = WaveField::from_fn(grid, t, |x1, x2| pair_value(&a, &b, kind, x1, x2, t));
    let frame = FieldFrame::new(&field, &Spectral::new(&grid));
    let peak = field.peak_density();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut taken = 0;
    while taken < points {
        let x1 = rng.random_range(-8.0..8.0);
        let x2 = rng.random_range(-8.0..8.0);
        if pair_value(&a, &b, kind, x1, x2, t).norm_sqr() < 1e-4 * peak {
            continue;
        }
        let exact = analytic_velocity(&a, &b, kind, x1, x2, t).unwrap();
        let grid_v = frame.velocity(x1, x2).unwrap();
        worst = worst.max((exact.0 - grid_v.0).abs()).max((exact.1 - grid_v.1).abs());
        taken += 1;
    }
    worst
}
