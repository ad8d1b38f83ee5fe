//! Uniform square grid over the (x1, x2) plane, wave-field storage, spectral
//! derivatives, local cubic interpolation and region integrals.
//!
//! Storage is row-major with the x1 index as the row: `amplitudes[i * n + j]`
//! holds ψ(x1_i, x2_j). Exchanging the electrons is a matrix transpose.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Amplitude magnitude at the box edge above which spectral derivatives are
/// flagged as suspect (periodic images start to talk to each other).
pub const EDGE_AMPLITUDE_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid extent: x_min ({x_min}) must be below x_max ({x_max})")]
    InvalidExtent { x_min: f64, x_max: f64 },
    #[error("invalid point count {n}: must be even and at least 8")]
    InvalidCount { n: usize },
    #[error("point ({x1}, {x2}) lies outside the grid")]
    OutOfBounds { x1: f64, x2: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("amplitude buffer has {got} values, grid needs {expected}")]
    BadLength { expected: usize, got: usize },
}

/// Coordinate axis of the two-electron configuration space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X1,
    X2,
}

/// Uniform periodic grid, identical along both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    x_min: f64,
    x_max: f64,
    n: usize,
    spacing: f64,
}

impl Grid2D {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self, GridError> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(GridError::InvalidExtent { x_min, x_max });
        }
        if n < 8 || !n.is_multiple_of(2) {
            return Err(GridError::InvalidCount { n });
        }
        Ok(Self {
            x_min,
            x_max,
            n,
            spacing: (x_max - x_min) / n as f64,
        })
    }

    /// Symmetric box `[-half_extent, half_extent)` with the requested spacing,
    /// rounded to the nearest even point count.
    pub fn centered(half_extent: f64, spacing: f64) -> Result<Self, GridError> {
        let raw = (2.0 * half_extent / spacing).round() as usize;
        let n = raw + raw % 2;
        Self::new(-half_extent, half_extent, n)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of nodes in the whole plane.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn extent(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Largest half-width of an origin-centred square that fits in the box.
    pub fn half_extent(&self) -> f64 {
        self.x_max.min(-self.x_min)
    }

    /// Coordinate of node `i`.
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.spacing
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    pub fn contains(&self, x1: f64, x2: f64) -> bool {
        let inside = |x: f64| x >= self.x_min && x < self.x_max;
        inside(x1) && inside(x2)
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n as i64;
        let dk = 2.0 * PI / self.extent();
        (0..n)
            .map(|m| {
                let m = if m < n / 2 { m } else { m - n };
                m as f64 * dk
            })
            .collect()
    }

    /// Node value table of `f(x1, x2)`.
    pub fn sample<F>(&self, f: F) -> Vec<Complex64>
    where
        F: Fn(f64, f64) -> Complex64,
    {
        let xs = self.coordinates();
        let mut out = Vec::with_capacity(self.len());
        for &x1 in &xs {
            for &x2 in &xs {
                out.push(f(x1, x2));
            }
        }
        out
    }
}

impl fmt::Display for Grid2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}) x {} (dx = {})",
            self.x_min, self.x_max, self.n, self.spacing
        )
    }
}

/// Two-electron amplitude sampled on a [`Grid2D`] at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    grid: Grid2D,
    amplitudes: Vec<Complex64>,
    time: f64,
}

impl WaveField {
    pub fn new(grid: Grid2D, amplitudes: Vec<Complex64>, time: f64) -> Result<Self, GridError> {
        if amplitudes.len() != grid.len() {
            return Err(GridError::BadLength {
                expected: grid.len(),
                got: amplitudes.len(),
            });
        }
        Ok(Self {
            grid,
            amplitudes,
            time,
        })
    }

    pub fn from_fn<F>(grid: Grid2D, time: f64, f: F) -> Self
    where
        F: Fn(f64, f64) -> Complex64,
    {
        Self {
            amplitudes: grid.sample(f),
            grid,
            time,
        }
    }

    pub fn zeros(grid: Grid2D, time: f64) -> Self {
        Self {
            amplitudes: vec![Complex64::new(0.0, 0.0); grid.len()],
            grid,
            time,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn value(&self, i: usize, j: usize) -> Complex64 {
        self.amplitudes[self.grid.index(i, j)]
    }

    /// ∬|ψ|² over the whole periodic box.
    pub fn norm_sqr(&self) -> f64 {
        let h2 = self.grid.spacing * self.grid.spacing;
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum::<f64>() * h2
    }

    /// ⟨self|other⟩ on the grid.
    pub fn inner(&self, other: &WaveField) -> Result<Complex64, GridError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch);
        }
        Ok(inner_product(&self.amplitudes, &other.amplitudes, &self.grid))
    }

    pub fn normalized(mut self) -> Self {
        let norm = self.norm_sqr().sqrt();
        if norm > 0.0 {
            let inv = 1.0 / norm;
            self.amplitudes.iter_mut().for_each(|c| *c *= inv);
        }
        self
    }

    /// ψ(x2, x1).
    pub fn exchanged(&self) -> Self {
        let mut amplitudes = self.amplitudes.clone();
        transpose_in_place(&mut amplitudes, self.grid.n);
        Self {
            grid: self.grid,
            amplitudes,
            time: self.time,
        }
    }

    pub fn density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn peak_density(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|c| c.norm_sqr())
            .fold(0.0, f64::max)
    }

    /// Largest amplitude magnitude on the outermost rows and columns.
    pub fn edge_amplitude(&self) -> f64 {
        edge_amplitude(&self.amplitudes, self.grid.n)
    }

    /// Spectral derivative of the field along `axis`. See [`Spectral::derivative`].
    pub fn partial_derivative(&self, axis: Axis, order: u32) -> Vec<Complex64> {
        let edge = self.edge_amplitude();
        if edge > EDGE_AMPLITUDE_THRESHOLD {
            log::warn!(
                "edge amplitude {edge:.3e} exceeds {EDGE_AMPLITUDE_THRESHOLD:.0e}; box may be too small"
            );
        }
        Spectral::new(&self.grid).derivative(&self.amplitudes, axis, order)
    }

    /// Trapezoidal ∬|ψ|² over the square |x1|, |x2| < half_width.
    pub fn region_norm(&self, half_width: f64) -> f64 {
        region_integral(&self.density(), &self.grid, half_width)
    }
}

pub fn inner_product(a: &[Complex64], b: &[Complex64], grid: &Grid2D) -> Complex64 {
    let h2 = grid.spacing * grid.spacing;
    a.iter()
        .zip(b)
        .map(|(x, y)| x.conj() * y)
        .sum::<Complex64>()
        * h2
}

fn edge_amplitude(values: &[Complex64], n: usize) -> f64 {
    let mut edge = 0.0f64;
    for k in 0..n {
        for idx in [k, (n - 1) * n + k, k * n, k * n + n - 1] {
            edge = edge.max(values[idx].norm());
        }
    }
    edge
}

/// Per-node weights of the trapezoidal rule over `[-half_width, half_width]`
/// on one periodic axis: each weight is the integral of the node's hat
/// function (and its periodic image) over the window.
pub fn trapezoid_weights(grid: &Grid2D, half_width: f64) -> Vec<f64> {
    let h = grid.spacing;
    let lo = (-half_width).max(grid.x_min);
    let hi = half_width.min(grid.x_max);
    let hat_overlap = |center: f64| -> f64 {
        // ∫ max(0, 1 - |x - center|/h) dx over [lo, hi]
        let a = lo.max(center - h);
        let b = hi.min(center + h);
        if b <= a {
            return 0.0;
        }
        let antiderivative = |x: f64| {
            let u = (x - center) / h;
            if u < 0.0 {
                h * (u + 0.5 * u * u)
            } else {
                h * (u - 0.5 * u * u)
            }
        };
        antiderivative(b) - antiderivative(a)
    };
    (0..grid.n)
        .map(|i| {
            let x = grid.x(i);
            let mut w = hat_overlap(x);
            if i == 0 {
                w += hat_overlap(x + grid.extent());
            }
            w
        })
        .collect()
}

/// Trapezoidal integral of a real node table over the origin-centred square.
pub fn region_integral(values: &[f64], grid: &Grid2D, half_width: f64) -> f64 {
    let w = trapezoid_weights(grid, half_width);
    let n = grid.n;
    let mut total = 0.0;
    for (i, wi) in w.iter().enumerate() {
        if *wi == 0.0 {
            continue;
        }
        let row = &values[i * n..(i + 1) * n];
        let s: f64 = row.iter().zip(&w).map(|(v, wj)| v * wj).sum();
        total += wi * s;
    }
    total
}

/// Square in-place transpose of an `n × n` row-major table.
pub fn transpose_in_place<T: Copy>(data: &mut [T], n: usize) {
    const BLOCK: usize = 32;
    for ib in (0..n).step_by(BLOCK) {
        for jb in (ib..n).step_by(BLOCK) {
            for i in ib..(ib + BLOCK).min(n) {
                let j0 = if ib == jb { i + 1 } else { jb };
                for j in j0..(jb + BLOCK).min(n) {
                    data.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

/// FFT plans and wavenumbers for one grid.
///
/// The 2D transforms leave the spectrum in transposed layout: after
/// [`Spectral::forward_2d`] the value for wavenumbers (k1_a, k2_b) sits at
/// `b * n + a`. [`Spectral::inverse_2d`] expects that layout and restores the
/// ordinary `(x1, x2)` ordering.
#[derive(Clone)]
pub struct Spectral {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
    scratch_len: usize,
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral").field("n", &self.n).finish()
    }
}

impl Spectral {
    pub fn new(grid: &Grid2D) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.n);
        let inverse = planner.plan_fft_inverse(grid.n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            n: grid.n,
            forward,
            inverse,
            k: grid.wavenumbers(),
            scratch_len,
        }
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    fn scratch(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.scratch_len]
    }

    /// Unnormalised forward FFT of every contiguous row.
    fn rows_forward(&self, data: &mut [Complex64], scratch: &mut [Complex64]) {
        self.forward.process_with_scratch(data, scratch);
    }

    /// Normalised inverse FFT of every contiguous row.
    fn rows_inverse(&self, data: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inverse.process_with_scratch(data, scratch);
        let inv = 1.0 / self.n as f64;
        data.iter_mut().for_each(|c| *c *= inv);
    }

    /// Forward 2D FFT; output in transposed layout.
    pub fn forward_2d(&self, data: &mut [Complex64]) {
        let mut scratch = self.scratch();
        self.rows_forward(data, &mut scratch);
        transpose_in_place(data, self.n);
        self.rows_forward(data, &mut scratch);
    }

    /// Inverse 2D FFT from transposed layout, normalised.
    pub fn inverse_2d(&self, data: &mut [Complex64]) {
        let mut scratch = self.scratch();
        self.rows_inverse(data, &mut scratch);
        transpose_in_place(data, self.n);
        self.rows_inverse(data, &mut scratch);
    }

    /// Spectral derivative `∂^order/∂x_axis^order`.
    ///
    /// For odd orders the Nyquist mode is zeroed, which keeps the derivative of
    /// a real field real.
    pub fn derivative(&self, values: &[Complex64], axis: Axis, order: u32) -> Vec<Complex64> {
        let n = self.n;
        let mut data = values.to_vec();
        let mut scratch = self.scratch();
        if axis == Axis::X1 {
            transpose_in_place(&mut data, n);
        }
        self.rows_forward(&mut data, &mut scratch);
        let factors: Vec<Complex64> = self
            .k
            .iter()
            .enumerate()
            .map(|(m, &k)| {
                if order % 2 == 1 && m == n / 2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, k).powu(order)
                }
            })
            .collect();
        for row in data.chunks_exact_mut(n) {
            row.iter_mut().zip(&factors).for_each(|(c, f)| *c *= f);
        }
        self.rows_inverse(&mut data, &mut scratch);
        if axis == Axis::X1 {
            transpose_in_place(&mut data, n);
        }
        data
    }
}

/// Trigonometric interpolant of a node field: the band-limited function and
/// its mixed derivatives at arbitrary points, at O(n²) cost per point. The
/// Nyquist modes are dropped.
#[derive(Debug, Clone)]
pub struct BandLimited {
    grid: Grid2D,
    /// `f(x) = Σ c[k1 * n + k2] e^{i k·(x - x_min)}`.
    coeffs: Vec<Complex64>,
    k: Vec<f64>,
}

impl BandLimited {
    pub fn new(values: &[Complex64], grid: &Grid2D, spectral: &Spectral) -> Self {
        let n = grid.n;
        let mut coeffs = values.to_vec();
        spectral.forward_2d(&mut coeffs);
        transpose_in_place(&mut coeffs, n);
        let scale = 1.0 / (n * n) as f64;
        for (idx, c) in coeffs.iter_mut().enumerate() {
            if idx / n == n / 2 || idx % n == n / 2 {
                *c = Complex64::new(0.0, 0.0);
            } else {
                *c *= scale;
            }
        }
        Self { grid: *grid, coeffs, k: spectral.wavenumbers().to_vec() }
    }

    /// `∂^a/∂x1^a ∂^b/∂x2^b f` at a point for every `(a, b)` in `orders`.
    pub fn derivatives<const M: usize>(&self, x1: f64, x2: f64, orders: [(u32, u32); M]) -> [Complex64; M] {
        let n = self.grid.n;
        let phases = |x: f64| -> Vec<Complex64> {
            self.k.iter().map(|&k| Complex64::from_polar(1.0, k * (x - self.grid.x_min))).collect()
        };
        let (e1, e2) = (phases(x1), phases(x2));
        let top = orders.iter().map(|o| o.1).max().unwrap_or(0) as usize;
        let ik: Vec<Complex64> = self.k.iter().map(|&k| Complex64::new(0.0, k)).collect();
        // inner[b * n + k1] = Σ_k2 c (i k2)^b e^{i k2 x2}
        let mut inner = vec![Complex64::new(0.0, 0.0); (top + 1) * n];
        for (k1, row) in self.coeffs.chunks_exact(n).enumerate() {
            for ((c, e), f) in row.iter().zip(&e2).zip(&ik) {
                let mut term = c * e;
                for b in 0..=top {
                    inner[b * n + k1] += term;
                    term *= f;
                }
            }
        }
        orders.map(|(a, b)| {
            let row = &inner[b as usize * n..(b as usize + 1) * n];
            row.iter().zip(&e1).zip(&ik).map(|((s, e), f)| f.powu(a) * e * s).sum()
        })
    }

    pub fn value(&self, x1: f64, x2: f64) -> Complex64 {
        self.derivatives(x1, x2, [(0, 0)])[0]
    }
}

/// Four-point Lagrange weights for fractional offset `t ∈ [0, 1)` on nodes
/// at relative positions -1, 0, 1, 2.
#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    let tm1 = t - 1.0;
    let tm2 = t - 2.0;
    let tp1 = t + 1.0;
    [
        -t * tm1 * tm2 / 6.0,
        tp1 * tm1 * tm2 / 2.0,
        -tp1 * t * tm2 / 2.0,
        tp1 * t * tm1 / 6.0,
    ]
}

/// d/dt of [`cubic_weights`].
#[inline]
fn cubic_weight_slopes(t: f64) -> [f64; 4] {
    [
        -(3.0 * t * t - 6.0 * t + 2.0) / 6.0,
        (3.0 * t * t - 4.0 * t - 1.0) / 2.0,
        -(3.0 * t * t - 2.0 * t - 2.0) / 2.0,
        (3.0 * t * t - 1.0) / 6.0,
    ]
}

/// Precomputed 4×4 tensor-product cubic stencil for one query point. Reusing
/// it across several node tables avoids recomputing indices and weights.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    rows: [usize; 4],
    cols: [usize; 4],
    w1: [f64; 4],
    w2: [f64; 4],
    dw1: [f64; 4],
    dw2: [f64; 4],
    n: usize,
}

impl Stencil {
    pub fn new(grid: &Grid2D, x1: f64, x2: f64) -> Result<Self, GridError> {
        if !grid.contains(x1, x2) {
            return Err(GridError::OutOfBounds { x1, x2 });
        }
        let n = grid.n;
        let h = grid.spacing;
        let locate = |x: f64| -> ([usize; 4], [f64; 4], [f64; 4]) {
            let s = (x - grid.x_min) / h;
            let i0 = (s.floor() as usize).min(n - 1);
            let t = s - i0 as f64;
            let idx = [
                (i0 + n - 1) % n,
                i0,
                (i0 + 1) % n,
                (i0 + 2) % n,
            ];
            let slopes = cubic_weight_slopes(t).map(|d| d / h);
            (idx, cubic_weights(t), slopes)
        };
        let (rows, w1, dw1) = locate(x1);
        let (cols, w2, dw2) = locate(x2);
        Ok(Self {
            rows,
            cols,
            w1,
            w2,
            dw1,
            dw2,
            n,
        })
    }

    #[inline]
    fn combine<T>(&self, values: &[T], w1: &[f64; 4], w2: &[f64; 4]) -> T
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
    {
        let mut acc = T::default();
        for a in 0..4 {
            let base = self.rows[a] * self.n;
            let mut row = T::default();
            for b in 0..4 {
                row = row + values[base + self.cols[b]] * w2[b];
            }
            acc = acc + row * w1[a];
        }
        acc
    }

    #[inline]
    pub fn eval<T>(&self, values: &[T]) -> T
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
    {
        self.combine(values, &self.w1, &self.w2)
    }

    /// Gradient of the interpolant, (∂/∂x1, ∂/∂x2).
    #[inline]
    pub fn gradient<T>(&self, values: &[T]) -> (T, T)
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
    {
        (
            self.combine(values, &self.dw1, &self.w2),
            self.combine(values, &self.w1, &self.dw2),
        )
    }

    fn combine_packed(&self, values: &[f64; 16], w1: &[f64; 4], w2: &[f64; 4]) -> f64 {
        let mut acc = 0.0;
        for a in 0..4 {
            let row: f64 = (0..4).map(|b| values[4 * a + b] * w2[b]).sum();
            acc += row * w1[a];
        }
        acc
    }

    /// Interpolate from the 16 stencil node values, packed in the order of
    /// [`Stencil::nodes`].
    pub fn eval_packed(&self, values: &[f64; 16]) -> f64 {
        self.combine_packed(values, &self.w1, &self.w2)
    }

    pub fn gradient_packed(&self, values: &[f64; 16]) -> (f64, f64) {
        (
            self.combine_packed(values, &self.dw1, &self.w2),
            self.combine_packed(values, &self.w1, &self.dw2),
        )
    }

    /// Flat indices of the 16 stencil nodes, row by row.
    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows
            .iter()
            .flat_map(move |r| self.cols.iter().map(move |c| r * self.n + c))
    }
}

/// Bicubic (tensor-product cubic Lagrange) interpolation of node values at an
/// off-grid point. Real and imaginary parts are interpolated independently.
pub fn interpolate(values: &[Complex64], grid: &Grid2D, x1: f64, x2: f64) -> Result<Complex64, GridError> {
    Ok(Stencil::new(grid, x1, x2)?.eval(values))
}
