//! Periodic spectral grids.
//!
//! A [`PeriodicGrid`] is the torus `[0, Λ)^d` sampled at `x_j = j h`,
//! `h = Λ / M`. Fourier coefficients are normalised as
//!
//! ```text
//! c_k = Λ^{-d} Σ_j f(x_j) e^{-iλ_k·x_j} h^d,     λ_k = 2πk / Λ
//! ```
//!
//! so that `‖f‖_s² = Λ^d Σ_k (1+|λ_k|²)^s |c_k|²` and `s = 0` is the lattice
//! `L²` norm. Coefficients are stored in FFT order (`k = j` for `j < M/2`,
//! `k = j - M` otherwise), row-major in 2-D.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Something that can be sampled on a lattice and convolved with a field.
pub trait Kernel: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Mass outside the ball of the given radius.
    fn mass_outside(&self, radius: f64) -> f64;
    /// Radius outside which the kernel is negligible.
    fn support_radius(&self) -> f64;
}

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn plans(m: usize) -> Plans {
    static CACHE: OnceLock<Mutex<HashMap<usize, Plans>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(m)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(m), planner.plan_fft_inverse(m))
        })
        .clone()
}

/// Wrap a coordinate into `[0, period)`.
#[inline]
pub fn wrap(x: f64, period: f64) -> f64 {
    let y = x.rem_euclid(period);
    if y >= period {
        0.0
    } else {
        y
    }
}

/// Minimum-image displacement in `[-period/2, period/2]`.
#[inline]
pub fn min_image(dx: f64, period: f64) -> f64 {
    dx - period * (dx / period).round()
}

#[derive(Clone)]
pub struct PeriodicGrid {
    dim: usize,
    m: usize,
    period: f64,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("dim", &self.dim)
            .field("m", &self.m)
            .field("period", &self.period)
            .finish()
    }
}

impl PartialEq for PeriodicGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.m == other.m && self.period == other.period
    }
}

impl PeriodicGrid {
    pub fn new(dim: usize, m: usize, period: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::invalid("domain.dim", "must be 1 or 2"));
        }
        if m < 4 || !m.is_power_of_two() {
            return Err(Error::invalid(
                "domain.grid_points",
                "must be a power of two >= 4",
            ));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::invalid("domain.period", "must be positive"));
        }
        let (fft, ifft) = plans(m);
        Ok(Self {
            dim,
            m,
            period,
            fft,
            ifft,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per dimension.
    pub fn points(&self) -> usize {
        self.m
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.m as f64
    }

    /// Total number of lattice nodes.
    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.period.powi(self.dim as i32)
    }

    /// Integer wavenumber for FFT slot `j`.
    #[inline]
    pub fn mode(&self, j: usize) -> i64 {
        if j < self.m / 2 {
            j as i64
        } else {
            j as i64 - self.m as i64
        }
    }

    /// FFT slot for integer wavenumber `k` (`|k| <= M/2`; `+M/2` maps onto
    /// the Nyquist slot).
    #[inline]
    pub fn slot(&self, k: i64) -> usize {
        k.rem_euclid(self.m as i64) as usize
    }

    #[inline]
    pub fn frequency(&self, k: i64) -> f64 {
        std::f64::consts::TAU * k as f64 / self.period
    }

    /// `|λ|²` for flat coefficient index `idx`.
    pub fn lambda2(&self, idx: usize) -> f64 {
        let (a, b) = self.split(idx);
        let mut l2 = self.frequency(self.mode(a)).powi(2);
        if self.dim == 2 {
            l2 += self.frequency(self.mode(b)).powi(2);
        }
        l2
    }

    /// `(i0, i1)` lattice indices for a flat index (`i1 = 0` in 1-D).
    #[inline]
    pub fn split(&self, idx: usize) -> (usize, usize) {
        if self.dim == 1 {
            (idx, 0)
        } else {
            (idx / self.m, idx % self.m)
        }
    }

    #[inline]
    pub fn flat(&self, i0: usize, i1: usize) -> usize {
        if self.dim == 1 {
            i0
        } else {
            i0 * self.m + i1
        }
    }

    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let (a, b) = self.split(idx);
        let h = self.spacing();
        [a as f64 * h, if self.dim == 2 { b as f64 * h } else { 0.0 }]
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.ifft } else { &self.fft };
        let m = self.m;
        if self.dim == 1 {
            plan.process(data);
            return;
        }
        // rows are contiguous
        for row in data.chunks_exact_mut(m) {
            plan.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); m];
        for c in 0..m {
            for r in 0..m {
                column[r] = data[r * m + c];
            }
            plan.process(&mut column);
            for r in 0..m {
                data[r * m + c] = column[r];
            }
        }
    }

    /// Normalised coefficients `c_k` of lattice samples.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.len());
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        let norm = 1.0 / self.len() as f64;
        for c in &mut data {
            *c *= norm;
        }
        data
    }

    /// Lattice samples (real part) of a coefficient array.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.len());
        let mut data = coeffs.to_vec();
        self.transform(&mut data, true);
        data.into_iter().map(|c| c.re).collect()
    }

    /// Smallest power-of-two grid on the same torus with spacing at most `h`.
    pub fn refined_to(&self, h: f64) -> Result<PeriodicGrid> {
        let mut m = self.m.max(4);
        while self.period / m as f64 > h {
            m *= 2;
        }
        PeriodicGrid::new(self.dim, m, self.period)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: PeriodicGrid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: &PeriodicGrid) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: &PeriodicGrid, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let d = grid.dim();
        let values = (0..grid.len()).map(|i| f(&grid.coords(i)[..d])).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_values(grid: &PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Format(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Lattice quadrature `h^d Σ f`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> GridField {
        debug_assert_eq!(self.grid, other.grid);
        GridField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub grid: PeriodicGrid,
    pub coeffs: Vec<Complex64>,
}

pub fn to_spectral(field: &GridField) -> SpectralField {
    SpectralField {
        grid: field.grid.clone(),
        coeffs: field.grid.forward(&field.values),
    }
}

pub fn to_physical(spec: &SpectralField) -> GridField {
    GridField {
        grid: spec.grid.clone(),
        values: spec.grid.inverse(&spec.coeffs),
    }
}

impl SpectralField {
    /// Coefficient of integer mode `(k0, k1)` under the symmetric convention:
    /// the Nyquist slot is split evenly between `±M/2`, and anything beyond
    /// `M/2` is zero.
    pub fn coefficient(&self, k: [i64; 2]) -> Complex64 {
        let g = &self.grid;
        let half = (g.points() / 2) as i64;
        let mut weight = 1.0;
        for &kq in &k[..g.dim()] {
            if kq.abs() > half {
                return Complex64::new(0.0, 0.0);
            }
            if kq.abs() == half {
                weight *= 0.5;
            }
        }
        let idx = g.flat(g.slot(k[0]), if g.dim() == 2 { g.slot(k[1]) } else { 0 });
        self.coeffs[idx] * weight
    }

    /// Multiply by `iλ_q`, zeroing the Nyquist slot along `axis`.
    pub fn derivative(&self, axis: usize) -> SpectralField {
        let g = &self.grid;
        let nyq = g.points() / 2;
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(idx, &c)| {
                let (a, b) = g.split(idx);
                let j = if axis == 0 { a } else { b };
                if j == nyq {
                    Complex64::new(0.0, 0.0)
                } else {
                    c * Complex64::new(0.0, g.frequency(g.mode(j)))
                }
            })
            .collect();
        SpectralField {
            grid: g.clone(),
            coeffs,
        }
    }

    /// Trigonometric interpolant evaluated off-lattice.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let m = g.points();
        let half = (m / 2) as i64;
        let base = |xq: f64| {
            let theta = std::f64::consts::TAU * xq / g.period();
            Complex64::new(theta.cos(), theta.sin())
        };
        // e^{iθk} for k = -M/2..=M/2 via repeated multiplication from k = 0
        let powers = |xq: f64| -> Vec<Complex64> {
            let w = base(xq);
            let winv = w.conj();
            let mut out = vec![Complex64::new(0.0, 0.0); m + 1];
            out[half as usize] = Complex64::new(1.0, 0.0);
            for k in 1..=half as usize {
                out[half as usize + k] = out[half as usize + k - 1] * w;
                out[half as usize - k] = out[half as usize - k + 1] * winv;
            }
            out
        };
        let p0 = powers(x[0]);
        let mut sum = Complex64::new(0.0, 0.0);
        if g.dim() == 1 {
            for k in -half..=half {
                sum += self.coefficient([k, 0]) * p0[(k + half) as usize];
            }
        } else {
            let p1 = powers(x[1]);
            for k0 in -half..=half {
                let mut inner = Complex64::new(0.0, 0.0);
                for k1 in -half..=half {
                    inner += self.coefficient([k0, k1]) * p1[(k1 + half) as usize];
                }
                sum += inner * p0[(k0 + half) as usize];
            }
        }
        sum.re
    }
}

pub fn spectral_derivative(field: &GridField, axis: usize) -> GridField {
    to_physical(&to_spectral(field).derivative(axis))
}

/// Lattice samples of a kernel at minimum-image displacements from the origin.
pub fn sample_kernel(grid: &PeriodicGrid, kernel: &dyn Kernel) -> GridField {
    let p = grid.period();
    GridField::from_fn(grid, |x| {
        let mut y = [0.0; 2];
        for q in 0..grid.dim() {
            y[q] = min_image(x[q], p);
        }
        kernel.value(&y[..grid.dim()])
    })
}

/// Kernel mass outside the inscribed ball of the box.
pub fn aliasing_mass(grid: &PeriodicGrid, kernel: &dyn Kernel) -> f64 {
    kernel.mass_outside(0.5 * grid.period())
}

pub const ALIASING_WARN_MASS: f64 = 1e-6;

/// Circular convolution `f ∗ k` via spectral multiplication.
pub fn convolve(field: &GridField, kernel: &dyn Kernel) -> GridField {
    let outside = aliasing_mass(&field.grid, kernel);
    if outside > ALIASING_WARN_MASS {
        log::warn!("kernel aliasing: mass {outside:.3e} lies outside the periodic box");
    }
    convolve_samples(field, &sample_kernel(&field.grid, kernel))
}

/// Circular convolution with pre-sampled kernel values (centred at node 0).
pub fn convolve_samples(field: &GridField, kernel: &GridField) -> GridField {
    let g = &field.grid;
    let a = g.forward(&field.values);
    let b = g.forward(&kernel.values);
    let scale = g.volume();
    let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y * scale).collect();
    GridField {
        grid: g.clone(),
        values: g.inverse(&prod),
    }
}

/// `‖f‖_s = (Λ^d Σ_k (1+|λ_k|²)^s |c_k|²)^{1/2}`.
pub fn sobolev_norm(field: &GridField, s: f64) -> f64 {
    let g = &field.grid;
    let c = g.forward(&field.values);
    let sum: f64 = c
        .iter()
        .enumerate()
        .map(|(idx, ck)| (1.0 + g.lambda2(idx)).powf(s) * ck.norm_sqr())
        .sum();
    (g.volume() * sum).sqrt()
}

/// Sobolev index for measure distances, `‖·‖_{-α}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NegativeIndex {
    alpha: f64,
}

impl NegativeIndex {
    /// Enforces `α > d/2 + 1`, which puts Dirac masses in `H^{-α}` with the
    /// margin the convergence estimates need.
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        let min = dim as f64 / 2.0 + 1.0;
        if !(alpha > min) {
            return Err(Error::AlphaTooSmall { alpha, min });
        }
        Ok(Self { alpha })
    }

    /// Only requires the frequency sum to converge (`α > d/2`); for
    /// diagnostics below the measure threshold.
    pub fn summable(alpha: f64, dim: usize) -> Result<Self> {
        let min = dim as f64 / 2.0;
        if !(alpha > min) {
            return Err(Error::AlphaTooSmall { alpha, min });
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepositScheme {
    Nearest,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Weights {
    /// `1/N` per point; total mass is exactly one.
    Uniform,
    PerPoint(Vec<f64>),
}

/// `Σ_j w_j δ_{X_j}` on the torus.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    pub dim: usize,
    /// Flat `N × d`.
    pub points: Vec<f64>,
    pub weights: Weights,
}

impl EmpiricalMeasure {
    pub fn uniform(points: Vec<f64>, dim: usize) -> Self {
        Self {
            dim,
            points,
            weights: Weights::Uniform,
        }
    }

    pub fn weighted(points: Vec<f64>, dim: usize, weights: Vec<f64>) -> Self {
        assert_eq!(points.len(), weights.len() * dim);
        Self {
            dim,
            points,
            weights: Weights::PerPoint(weights),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        match &self.weights {
            Weights::Uniform => 1.0 / self.len() as f64,
            Weights::PerPoint(w) => w[j],
        }
    }

    pub fn total_weight(&self) -> f64 {
        match &self.weights {
            Weights::Uniform => 1.0,
            Weights::PerPoint(w) => w.iter().sum(),
        }
    }

    pub fn total_variation(&self) -> f64 {
        match &self.weights {
            Weights::Uniform => 1.0,
            Weights::PerPoint(w) => w.iter().map(|v| v.abs()).sum(),
        }
    }

    /// `ĉ_k = Λ^{-d} Σ_j w_j e^{-iλ_k·X_j}` for `|k|_∞ <= K`, indexed
    /// `(k0+K)` in 1-D and `(k0+K)(2K+1) + (k1+K)` in 2-D.
    pub fn characteristic(&self, period: f64, cutoff: usize) -> Vec<Complex64> {
        let d = self.dim;
        let width = 2 * cutoff + 1;
        let len = width.pow(d as u32);
        let k = cutoff as i64;
        let phases = |x: f64| -> Vec<Complex64> {
            let theta = -std::f64::consts::TAU * x / period;
            let w = Complex64::new(theta.cos(), theta.sin());
            let mut out = vec![Complex64::new(1.0, 0.0); width];
            for i in 1..=cutoff {
                out[cutoff + i] = out[cutoff + i - 1] * w;
                out[cutoff - i] = out[cutoff - i + 1] * w.conj();
            }
            out
        };
        let mut acc = vec![Complex64::new(0.0, 0.0); len];
        for j in 0..self.len() {
            let x = &self.points[j * d..(j + 1) * d];
            let w = match &self.weights {
                Weights::Uniform => 1.0,
                Weights::PerPoint(w) => w[j],
            };
            let p0 = phases(x[0]);
            if d == 1 {
                for (a, p) in acc.iter_mut().zip(&p0) {
                    *a += p * w;
                }
            } else {
                let p1 = phases(x[1]);
                for i0 in 0..width {
                    let base = p0[i0] * w;
                    for i1 in 0..width {
                        acc[i0 * width + i1] += base * p1[i1];
                    }
                }
            }
        }
        let norm = match &self.weights {
            Weights::Uniform => 1.0 / self.len() as f64,
            Weights::PerPoint(_) => 1.0,
        } / period.powi(d as i32);
        let _ = k;
        acc.into_iter().map(|c| c * norm).collect()
    }
}

/// `Σ_{|k|_∞ > K} (1+|λ_k|²)^{-α}` over the integer lattice.
pub fn lattice_tail_sum(dim: usize, cutoff: usize, period: f64, alpha: f64) -> f64 {
    let c = std::f64::consts::TAU / period;
    let weight = |k2: f64| (1.0 + c * c * k2).powf(-alpha);
    let far = (64 * (cutoff + 1)).max(4096);
    if dim == 1 {
        let mut s = 0.0;
        for k in (cutoff + 1)..=far {
            s += weight((k * k) as f64);
        }
        // ∫_{far}^∞ (ck)^{-2α} dk
        let tail = (c * far as f64).powf(-2.0 * alpha) * far as f64 / (2.0 * alpha - 1.0);
        2.0 * (s + tail)
    } else {
        // square shells |k|_∞ = n, each with 8n points
        let far = far.min(16 * (cutoff + 1));
        let mut s = 0.0;
        for n in (cutoff + 1)..=far {
            let n = n as i64;
            for t in -n..n {
                // four sides of the shell, corners counted once
                for &(a, b) in &[(n, t), (-n, -t), (t, -n), (-t, n)] {
                    s += weight((a * a + b * b) as f64);
                }
            }
        }
        // radial integral bound beyond the last shell
        let r = far as f64;
        let tail = std::f64::consts::TAU * c.powf(-2.0 * alpha) * r.powf(2.0 - 2.0 * alpha)
            / (2.0 * alpha - 2.0);
        s + tail
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NegSobolevValue {
    /// Truncated `‖μ - f‖_{-α}`.
    pub distance: f64,
    /// Upper bound on the squared contribution of the dropped frequencies.
    pub tail_bound: f64,
}

/// `‖μ - f‖_{-α}` with the frequency sum truncated to `|k|_∞ <= K`. A
/// missing field is the zero field.
pub fn neg_sobolev_distance(
    measure: &EmpiricalMeasure,
    field: Option<&GridField>,
    period: f64,
    index: NegativeIndex,
    cutoff: usize,
) -> Result<NegSobolevValue> {
    let d = measure.dim;
    let spectral = match field {
        Some(f) => {
            if f.grid.dim() != d || f.grid.period() != period {
                return Err(Error::invalid("field", "grid does not match the measure"));
            }
            if cutoff > f.grid.points() / 2 {
                return Err(Error::invalid("study.freq_cutoff", "must not exceed M/2"));
            }
            Some(to_spectral(f))
        }
        None => None,
    };
    let chars = measure.characteristic(period, cutoff);
    let width = 2 * cutoff + 1;
    let kc = cutoff as i64;
    let c = std::f64::consts::TAU / period;
    let mut sum = 0.0;
    for (idx, ch) in chars.iter().enumerate() {
        let (k0, k1) = if d == 1 {
            (idx as i64 - kc, 0)
        } else {
            ((idx / width) as i64 - kc, (idx % width) as i64 - kc)
        };
        let fk = spectral
            .as_ref()
            .map(|s| s.coefficient([k0, k1]))
            .unwrap_or_default();
        let l2 = c * c * (k0 * k0 + k1 * k1) as f64;
        sum += (1.0 + l2).powf(-index.alpha()) * (ch - fk).norm_sqr();
    }
    let vol = period.powi(d as i32);
    let field_mass = field
        .map(|f| f.values.iter().map(|v| v.abs()).sum::<f64>() * f.grid.cell_volume())
        .unwrap_or(0.0);
    let bound = (measure.total_variation() + field_mass) / vol;
    let tail_bound = vol * bound * bound * lattice_tail_sum(d, cutoff, period, index.alpha());
    Ok(NegSobolevValue {
        distance: (vol * sum).sqrt(),
        tail_bound,
    })
}

/// Sum of squared component distances `Σ_q ‖μ_q - f_q‖²_{-α}`.
pub fn neg_sobolev_distance_sq_vector(
    measures: &[EmpiricalMeasure],
    fields: &[GridField],
    period: f64,
    index: NegativeIndex,
    cutoff: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (m, f) in measures.iter().zip(fields) {
        total += neg_sobolev_distance(m, Some(f), period, index, cutoff)?
            .distance
            .powi(2);
    }
    Ok(total)
}

/// Lattice index and fractional offset of a coordinate.
#[inline]
fn cell(x: f64, h: f64, m: usize) -> (usize, f64) {
    let t = x / h;
    let i = t.floor();
    let frac = t - i;
    ((i as i64).rem_euclid(m as i64) as usize, frac)
}

/// Grid density of a measure: each node carries `w / h^d` so that the lattice
/// integral equals the total weight.
pub fn deposit(
    measure: &EmpiricalMeasure,
    grid: &PeriodicGrid,
    scheme: DepositScheme,
) -> GridField {
    let d = grid.dim();
    assert_eq!(d, measure.dim);
    let m = grid.points();
    let h = grid.spacing();
    let inv_vol = 1.0 / grid.cell_volume();
    let mut values = vec![0.0; grid.len()];
    for j in 0..measure.len() {
        let x = &measure.points[j * d..(j + 1) * d];
        let w = measure.weight(j) * inv_vol;
        match scheme {
            DepositScheme::Nearest => {
                let i0 = ((x[0] / h).round() as i64).rem_euclid(m as i64) as usize;
                let i1 = if d == 2 {
                    ((x[1] / h).round() as i64).rem_euclid(m as i64) as usize
                } else {
                    0
                };
                values[grid.flat(i0, i1)] += w;
            }
            DepositScheme::Linear => {
                let (i0, f0) = cell(x[0], h, m);
                let j0 = (i0 + 1) % m;
                if d == 1 {
                    values[i0] += w * (1.0 - f0);
                    values[j0] += w * f0;
                } else {
                    let (i1, f1) = cell(x[1], h, m);
                    let j1 = (i1 + 1) % m;
                    values[grid.flat(i0, i1)] += w * (1.0 - f0) * (1.0 - f1);
                    values[grid.flat(j0, i1)] += w * f0 * (1.0 - f1);
                    values[grid.flat(i0, j1)] += w * (1.0 - f0) * f1;
                    values[grid.flat(j0, j1)] += w * f0 * f1;
                }
            }
        }
    }
    GridField {
        grid: grid.clone(),
        values,
    }
}

/// Interpolate a field at one off-lattice point with the deposit stencil
/// (the adjoint of [`deposit`]).
#[inline]
pub fn interpolate(field: &GridField, x: &[f64], scheme: DepositScheme) -> f64 {
    let g = &field.grid;
    let m = g.points();
    let h = g.spacing();
    let v = &field.values;
    match scheme {
        DepositScheme::Nearest => {
            let i0 = ((x[0] / h).round() as i64).rem_euclid(m as i64) as usize;
            let i1 = if g.dim() == 2 {
                ((x[1] / h).round() as i64).rem_euclid(m as i64) as usize
            } else {
                0
            };
            v[g.flat(i0, i1)]
        }
        DepositScheme::Linear => {
            let (i0, f0) = cell(x[0], h, m);
            let j0 = (i0 + 1) % m;
            if g.dim() == 1 {
                v[i0] * (1.0 - f0) + v[j0] * f0
            } else {
                let (i1, f1) = cell(x[1], h, m);
                let j1 = (i1 + 1) % m;
                v[g.flat(i0, i1)] * (1.0 - f0) * (1.0 - f1)
                    + v[g.flat(j0, i1)] * f0 * (1.0 - f1)
                    + v[g.flat(i0, j1)] * (1.0 - f0) * f1
                    + v[g.flat(j0, j1)] * f0 * f1
            }
        }
    }
}

/// `Σ_j w_j k(x - X_j)` at every lattice node by direct summation over the
/// nodes inside the kernel support (periodic images included).
pub fn direct_kernel_sum(
    measure: &EmpiricalMeasure,
    grid: &PeriodicGrid,
    kernel: &dyn Kernel,
) -> GridField {
    let d = grid.dim();
    let m = grid.points() as i64;
    let h = grid.spacing();
    let reach = (kernel.support_radius() / h).ceil() as i64;
    let mut values = vec![0.0; grid.len()];
    let mut y = [0.0; 2];
    for j in 0..measure.len() {
        let x = &measure.points[j * d..(j + 1) * d];
        let w = measure.weight(j);
        let c0 = (x[0] / h).round() as i64;
        if d == 1 {
            for i in (c0 - reach)..=(c0 + reach) {
                y[0] = i as f64 * h - x[0];
                values[i.rem_euclid(m) as usize] += w * kernel.value(&y[..1]);
            }
        } else {
            let c1 = (x[1] / h).round() as i64;
            for i in (c0 - reach)..=(c0 + reach) {
                y[0] = i as f64 * h - x[0];
                let row = i.rem_euclid(m) as usize * m as usize;
                for l in (c1 - reach)..=(c1 + reach) {
                    y[1] = l as f64 * h - x[1];
                    values[row + l.rem_euclid(m) as usize] += w * kernel.value(&y[..2]);
                }
            }
        }
    }
    GridField {
        grid: grid.clone(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{PI, TAU};

    fn g1(m: usize, period: f64) -> PeriodicGrid {
        PeriodicGrid::new(1, m, period).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(PeriodicGrid::new(1, 100, 1.0).is_err());
        assert!(PeriodicGrid::new(3, 64, 1.0).is_err());
        assert!(PeriodicGrid::new(1, 64, -1.0).is_err());
    }

    #[test]
    fn constant_and_sine_coefficients() {
        let g = g1(64, 3.0);
        let c = to_spectral(&GridField::constant(&g, 1.0));
        assert_relative_eq!(c.coeffs[0].re, 1.0, epsilon = 1e-15);
        assert!(c.coeffs[1..].iter().all(|z| z.norm() < 1e-15));

        let s = to_spectral(&GridField::from_fn(&g, |x| (TAU * x[0] / 3.0).sin()));
        assert!((s.coeffs[1] - Complex64::new(0.0, -0.5)).norm() < 1e-14);
        assert!((s.coeffs[63] - Complex64::new(0.0, 0.5)).norm() < 1e-14);
        let rest: f64 = s
            .coeffs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 1 && *i != 63)
            .map(|(_, z)| z.norm())
            .sum();
        assert!(rest < 1e-13);
    }

    #[test]
    fn derivatives_of_sine() {
        let p = 5.0;
        let g = g1(128, p);
        let w = TAU / p;
        let f = GridField::from_fn(&g, |x| (w * x[0]).sin());
        let df = spectral_derivative(&f, 0);
        let d2f = spectral_derivative(&df, 0);
        for i in 0..g.len() {
            let x = g.coords(i)[0];
            assert!((df.values[i] - w * (w * x).cos()).abs() < 1e-10);
            assert!((d2f.values[i] + w * w * (w * x).sin()).abs() < 1e-9);
        }
        let c = spectral_derivative(&GridField::constant(&g, 3.0), 0);
        assert!(c.max_abs() < 1e-14);
    }

    #[test]
    fn sobolev_norm_of_sine() {
        let g = g1(64, TAU);
        let f = GridField::from_fn(&g, |x| x[0].sin());
        assert_relative_eq!(sobolev_norm(&f, 0.0), PI.sqrt(), max_relative = 1e-13);
        assert_relative_eq!(
            sobolev_norm(&f, 1.0),
            PI.sqrt() * 2f64.sqrt(),
            max_relative = 1e-13
        );
        assert_eq!(sobolev_norm(&GridField::zeros(&g), 2.0), 0.0);
    }

    #[test]
    fn two_dimensional_transform_round_trip() {
        let g = PeriodicGrid::new(2, 16, 2.0).unwrap();
        let f = GridField::from_fn(&g, |x| (PI * x[0]).sin() * (2.0 * PI * x[1]).cos() + 0.3);
        let back = to_physical(&to_spectral(&f));
        for (a, b) in f.values.iter().zip(&back.values) {
            assert!((a - b).abs() < 1e-13);
        }
        let dy = spectral_derivative(&f, 1);
        for i in 0..g.len() {
            let x = g.coords(i);
            let exact = -(PI * x[0]).sin() * 2.0 * PI * (2.0 * PI * x[1]).sin();
            assert!((dy.values[i] - exact).abs() < 1e-11);
        }
        let expected = (g.volume() * (0.09 + 4.0 * 0.0625)).sqrt();
        assert_relative_eq!(sobolev_norm(&f, 0.0), expected, max_relative = 1e-12);
    }

    #[test]
    fn spectral_interpolation_is_exact_for_band_limited() {
        let g = g1(32, TAU);
        let f = GridField::from_fn(&g, |x| 0.3 + (2.0 * x[0]).sin() - 0.2 * (5.0 * x[0]).cos());
        let s = to_spectral(&f);
        for x in [0.0f64, 0.123, 2.5, 6.1] {
            let exact = 0.3 + (2.0 * x).sin() - 0.2 * (5.0 * x).cos();
            assert!((s.evaluate(&[x]) - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn deposit_conserves_mass() {
        let g = g1(32, 2.0);
        let h = g.spacing();
        let single = EmpiricalMeasure::uniform(vec![0.5 * h + 4.0 * h], 1);
        let near = deposit(&single, &g, DepositScheme::Nearest);
        assert_eq!(near.values.iter().filter(|v| **v != 0.0).count(), 1);
        assert_relative_eq!(near.max_abs(), 1.0 / h, max_relative = 1e-15);

        let pts: Vec<f64> = (0..57)
            .map(|i| (i as f64 * 0.731).rem_euclid(2.0))
            .collect();
        let mu = EmpiricalMeasure::uniform(pts, 1);
        for scheme in [DepositScheme::Nearest, DepositScheme::Linear] {
            assert!((deposit(&mu, &g, scheme).integral() - 1.0).abs() < 1e-12);
        }
        let on_node = EmpiricalMeasure::uniform(vec![7.0 * h], 1);
        assert_eq!(
            deposit(&on_node, &g, DepositScheme::Linear).values,
            deposit(&on_node, &g, DepositScheme::Nearest).values
        );
    }

    #[test]
    fn deposit_2d_conserves_mass() {
        let g = PeriodicGrid::new(2, 16, 1.0).unwrap();
        let pts: Vec<f64> = (0..40)
            .map(|i| (i as f64 * 0.377).rem_euclid(1.0))
            .collect();
        let mu = EmpiricalMeasure::weighted(pts, 2, (0..20).map(|i| 0.1 * i as f64).collect());
        let total = mu.total_weight();
        assert!((deposit(&mu, &g, DepositScheme::Linear).integral() - total).abs() < 1e-12);
    }

    #[test]
    fn dirac_distance_matches_direct_sum() {
        let mu = EmpiricalMeasure::uniform(vec![0.0], 1);
        let idx = NegativeIndex::summable(1.0, 1).unwrap();
        let k = 40;
        let value = neg_sobolev_distance(&mu, None, TAU, idx, k).unwrap();
        let direct: f64 = (-(k as i64)..=k as i64)
            .map(|k| 1.0 / (1.0 + (k * k) as f64))
            .sum::<f64>()
            / TAU;
        assert_relative_eq!(value.distance.powi(2), direct, max_relative = 1e-12);
        assert!(NegativeIndex::new(1.0, 1).is_err());
        assert!(NegativeIndex::new(1.5, 1).is_err());
        assert!(NegativeIndex::new(1.6, 1).is_ok());
    }

    #[test]
    fn truncation_respects_tail_bound() {
        let pts: Vec<f64> = (0..50).map(|i| (i as f64 * 0.61).rem_euclid(TAU)).collect();
        let mu = EmpiricalMeasure::uniform(pts, 1);
        let g = g1(128, TAU);
        let rho = GridField::constant(&g, 1.0 / TAU);
        let idx = NegativeIndex::new(2.0, 1).unwrap();
        let a = neg_sobolev_distance(&mu, Some(&rho), TAU, idx, 16).unwrap();
        let b = neg_sobolev_distance(&mu, Some(&rho), TAU, idx, 32).unwrap();
        let diff = b.distance.powi(2) - a.distance.powi(2);
        assert!(
            diff >= 0.0 && diff <= a.tail_bound,
            "{diff} vs {}",
            a.tail_bound
        );
    }

    #[test]
    fn tail_sum_matches_brute_force() {
        let direct: f64 = (11..200_000i64)
            .map(|k| 2.0 * (1.0 + (k * k) as f64).powf(-2.0))
            .sum();
        assert_relative_eq!(
            lattice_tail_sum(1, 10, TAU, 2.0),
            direct,
            max_relative = 1e-6
        );
        let mut direct2 = 0.0;
        for a in -400i64..=400 {
            for b in -400i64..=400 {
                if a.abs().max(b.abs()) > 5 {
                    direct2 += (1.0 + (a * a + b * b) as f64).powf(-2.5);
                }
            }
        }
        assert_relative_eq!(
            lattice_tail_sum(2, 5, TAU, 2.5),
            direct2,
            max_relative = 1e-3
        );
    }

    #[test]
    fn convolution_matches_direct_quadrature() {
        struct Gauss(f64);
        impl Kernel for Gauss {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, x: &[f64]) -> f64 {
                (-(x[0] * x[0]) / (2.0 * self.0 * self.0)).exp() / (TAU.sqrt() * self.0)
            }
            fn mass_outside(&self, r: f64) -> f64 {
                libm::erfc(r / (self.0 * 2f64.sqrt()))
            }
            fn support_radius(&self) -> f64 {
                8.1 * self.0
            }
        }
        let g = g1(128, TAU);
        let k = Gauss(0.3);
        let f = GridField::from_fn(&g, |x| {
            (x[0]).cos() + 0.5 * (3.0 * x[0]).sin() + (x[0] - 2.0).powi(2).min(1.0)
        });
        let fast = convolve(&f, &k);
        let h = g.spacing();
        for i in 0..g.len() {
            let mut s = 0.0;
            for j in 0..g.len() {
                s += f.values[j] * k.value(&[min_image((i as f64 - j as f64) * h, TAU)]) * h;
            }
            assert!((fast.values[i] - s).abs() < 1e-6);
        }
        let c = convolve(&GridField::constant(&g, 2.0), &k);
        assert!(c.values.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn round_trip_and_parseval(values in proptest::collection::vec(-10.0f64..10.0, 64)) {
            let g = g1(64, 1.7);
            let f = GridField::from_values(&g, values).unwrap();
            let back = to_physical(&to_spectral(&f));
            let scale = f.max_abs().max(1.0);
            for (a, b) in f.values.iter().zip(&back.values) {
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
            let lattice = f.l2_norm();
            prop_assert!((sobolev_norm(&f, 0.0) - lattice).abs() <= 1e-10 * lattice.max(1.0));
        }

        #[test]
        fn distance_monotone_in_alpha(pts in proptest::collection::vec(0.0f64..TAU, 1..40), a in 1.6f64..3.0, da in 0.0f64..2.0) {
            let mu = EmpiricalMeasure::uniform(pts, 1);
            let g = g1(64, TAU);
            let rho = GridField::from_fn(&g, |x| (1.0 + 0.3 * x[0].sin()) / TAU);
            let lo = neg_sobolev_distance(&mu, Some(&rho), TAU, NegativeIndex::new(a, 1).unwrap(), 32).unwrap();
            let hi = neg_sobolev_distance(&mu, Some(&rho), TAU, NegativeIndex::new(a + da, 1).unwrap(), 32).unwrap();
            prop_assert!(hi.distance <= lo.distance * (1.0 + 1e-12));
        }

        #[test]
        fn distance_is_translation_invariant(pts in proptest::collection::vec(0.0f64..TAU, 1..20), shift in 0usize..64) {
            let g = g1(64, TAU);
            let h = g.spacing();
            let rho = GridField::from_fn(&g, |x| (1.0 + 0.3 * (2.0 * x[0]).cos()) / TAU);
            let mut shifted_rho = rho.clone();
            for i in 0..64 {
                shifted_rho.values[(i + shift) % 64] = rho.values[i];
            }
            let moved: Vec<f64> = pts.iter().map(|x| wrap(x + shift as f64 * h, TAU)).collect();
            let idx = NegativeIndex::new(2.0, 1).unwrap();
            let a = neg_sobolev_distance(&EmpiricalMeasure::uniform(pts, 1), Some(&rho), TAU, idx, 32).unwrap();
            let b = neg_sobolev_distance(&EmpiricalMeasure::uniform(moved, 1), Some(&shifted_rho), TAU, idx, 32).unwrap();
            prop_assert!((a.distance - b.distance).abs() <= 1e-12);
        }
    }
}
