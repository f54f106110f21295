//! The `N`-particle system in first-order form
//!
//! ```text
//! dX = V dt
//! dV = -∇(S^N ∗ φ_N)(X) dt + σ(X) V ∘ dB
//! ```
//!
//! with a single Brownian path shared by every particle. The noise is
//! diagonal: component `q` of every velocity is driven by `σ_q(X) V_q ∘ dB^q`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    deposit, interpolate, min_image, wrap, DepositScheme, EmpiricalMeasure, GridField, PeriodicGrid,
};
use crate::mollifier::{ScaledKernel, MAX_DIM};
use crate::parallel;
use crate::profiles::{ScalarProfile, SigmaField, VectorProfile};
use crate::rng::CounterRng;

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState {
    pub dim: usize,
    pub period: f64,
    /// Flat `N × d`, wrapped into `[0, Λ)`.
    pub positions: Vec<f64>,
    /// Flat `N × d`.
    pub velocities: Vec<f64>,
    pub time: f64,
    pub steps: u64,
}

impl ParticleState {
    pub fn new(dim: usize, period: f64, positions: Vec<f64>, velocities: Vec<f64>) -> Self {
        assert_eq!(positions.len(), velocities.len());
        assert_eq!(positions.len() % dim, 0);
        let positions = positions.into_iter().map(|x| wrap(x, period)).collect();
        Self {
            dim,
            period,
            positions,
            velocities,
            time: 0.0,
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, k: usize) -> &[f64] {
        &self.positions[k * self.dim..(k + 1) * self.dim]
    }

    pub fn velocity(&self, k: usize) -> &[f64] {
        &self.velocities[k * self.dim..(k + 1) * self.dim]
    }

    /// `S^N = (1/N) Σ δ_{X_k}`.
    pub fn empirical(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.positions.clone(), self.dim)
    }

    /// Component `q` of `V^N = (1/N) Σ V_k δ_{X_k}`.
    pub fn velocity_measure(&self, q: usize) -> EmpiricalMeasure {
        let n = self.len() as f64;
        let w = (0..self.len())
            .map(|k| self.velocities[k * self.dim + q] / n)
            .collect();
        EmpiricalMeasure::weighted(self.positions.clone(), self.dim, w)
    }

    pub fn is_finite(&self) -> bool {
        self.positions
            .iter()
            .chain(&self.velocities)
            .all(|v| v.is_finite())
    }
}

/// Brownian increments on a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub dim: usize,
    pub dt: f64,
    pub seed: u64,
    pub sample: u64,
    /// Flat `steps × d`.
    pub increments: Vec<f64>,
}

impl NoisePath {
    /// Increment `q` of step `n` is `√dt · Z(seed, sample, n, q)`.
    pub fn generate(rng: &CounterRng, sample: u64, steps: usize, dim: usize, dt: f64) -> Self {
        let sq = dt.sqrt();
        let mut increments = Vec::with_capacity(steps * dim);
        for n in 0..steps {
            for q in 0..dim {
                increments.push(sq * rng.normal(sample, n as u64, q as u64));
            }
        }
        Self {
            dim,
            dt,
            seed: rng.master_seed(),
            sample,
            increments,
        }
    }

    pub fn zero(steps: usize, dim: usize, dt: f64) -> Self {
        Self {
            dim,
            dt,
            seed: 0,
            sample: 0,
            increments: vec![0.0; steps * dim],
        }
    }

    pub fn steps(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.dim..(step + 1) * self.dim]
    }

    /// `B` at the end of `steps` increments.
    pub fn value_after(&self, steps: usize) -> [f64; MAX_DIM] {
        let mut b = [0.0; MAX_DIM];
        for n in 0..steps {
            for (q, v) in self.increment(n).iter().enumerate() {
                b[q] += v;
            }
        }
        b
    }

    /// The same path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> NoisePath {
        assert!(factor >= 1 && self.steps().is_multiple_of(factor));
        let steps = self.steps() / factor;
        let mut increments = vec![0.0; steps * self.dim];
        for n in 0..self.steps() {
            for q in 0..self.dim {
                increments[(n / factor) * self.dim + q] += self.increments[n * self.dim + q];
            }
        }
        NoisePath {
            dim: self.dim,
            dt: self.dt * factor as f64,
            seed: self.seed,
            sample: self.sample,
            increments,
        }
    }

    /// Little-endian bytes of the increments.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.increments
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshSettings {
    /// Points per dimension; `None` picks the smallest power of two that
    /// satisfies the resolution requirement.
    pub points: Option<usize>,
    pub scheme: DepositScheme,
    /// Divide by the squared assignment-window transform.
    pub compensate: bool,
    /// Required lattice nodes per kernel standard deviation.
    pub nodes_per_width: f64,
}

impl Default for MeshSettings {
    fn default() -> Self {
        Self {
            points: None,
            scheme: DepositScheme::Linear,
            compensate: true,
            nodes_per_width: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ForceMethod {
    /// O(N²) pair sum with minimum-image displacements.
    Direct,
    /// Deposit, spectral convolution with `∇φ_N`, interpolation.
    ParticleMesh(MeshSettings),
}

/// `F_k = -(1/N) Σ_l ∇φ_N(X_k - X_l)`, self term included (`∇φ_N(0) = 0`).
pub fn force_direct(state: &ParticleState, kernel: &ScaledKernel) -> Vec<f64> {
    let d = state.dim;
    let n = state.len();
    let period = state.period;
    let cutoff = kernel.support_radius();
    let inv_n = 1.0 / n as f64;
    let mut forces = vec![0.0; n * d];
    parallel::for_each_chunk_mut(&mut forces, d, |k, out| {
        let xk = state.position(k);
        let mut acc = [0.0; MAX_DIM];
        let mut dx = [0.0; MAX_DIM];
        'pairs: for l in 0..n {
            let xl = &state.positions[l * d..(l + 1) * d];
            for q in 0..d {
                dx[q] = min_image(xk[q] - xl[q], period);
                if dx[q].abs() > cutoff {
                    continue 'pairs;
                }
            }
            let g = kernel.grad_phi_n(&dx[..d]);
            for q in 0..d {
                acc[q] += g[q];
            }
        }
        for q in 0..d {
            out[q] = -acc[q] * inv_n;
        }
    });
    forces
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Precomputed transforms for the particle-mesh force on one grid.
#[derive(Clone, Debug)]
pub struct MeshForce {
    pub grid: PeriodicGrid,
    pub settings: MeshSettings,
    /// `Λ^d ĝ_q / W²` per axis, FFT order.
    multipliers: Vec<Vec<Complex64>>,
}

impl MeshForce {
    pub fn new(kernel: &ScaledKernel, period: f64, settings: MeshSettings) -> Result<Self> {
        let d = kernel.dim();
        let width = kernel.effective_width();
        let max_h = width / settings.nodes_per_width;
        let grid = match settings.points {
            Some(m) => PeriodicGrid::new(d, m, period)?,
            None => PeriodicGrid::new(d, 16, period)?.refined_to(max_h)?,
        };
        if grid.spacing() > max_h {
            return Err(Error::GridTooCoarse {
                spacing: grid.spacing(),
                width,
                ratio: settings.nodes_per_width,
            });
        }
        let m = grid.points();
        let window = |j: usize| -> f64 {
            let x = std::f64::consts::PI * grid.mode(j) as f64 / m as f64;
            match settings.scheme {
                DepositScheme::Nearest => sinc(x),
                DepositScheme::Linear => sinc(x).powi(2),
            }
        };
        let vol = grid.volume();
        let mut multipliers = Vec::with_capacity(d);
        for q in 0..d {
            let samples = GridField::from_fn(&grid, |x| {
                let mut y = [0.0; MAX_DIM];
                for p in 0..d {
                    y[p] = min_image(x[p], period);
                }
                kernel.grad_phi_n(&y[..d])[q]
            });
            let mut hat = grid.forward(&samples.values);
            for (idx, c) in hat.iter_mut().enumerate() {
                let mut factor = vol;
                if settings.compensate {
                    let (a, b) = grid.split(idx);
                    let mut w = window(a);
                    if d == 2 {
                        w *= window(b);
                    }
                    factor /= w * w;
                }
                *c *= factor;
            }
            multipliers.push(hat);
        }
        Ok(Self {
            grid,
            settings,
            multipliers,
        })
    }

    pub fn forces(&self, state: &ParticleState) -> Vec<f64> {
        let d = state.dim;
        let n = state.len();
        let density = deposit(&state.empirical(), &self.grid, self.settings.scheme);
        let rho_hat = self.grid.forward(&density.values);
        let fields: Vec<GridField> = self
            .multipliers
            .iter()
            .map(|mult| {
                let prod: Vec<Complex64> = rho_hat.iter().zip(mult).map(|(a, b)| a * b).collect();
                GridField {
                    grid: self.grid.clone(),
                    values: self.grid.inverse(&prod),
                }
            })
            .collect();
        let mut forces = vec![0.0; n * d];
        parallel::for_each_chunk_mut(&mut forces, d, |k, out| {
            let x = state.position(k);
            for q in 0..d {
                out[q] = -interpolate(&fields[q], x, self.settings.scheme);
            }
        });
        forces
    }
}

pub fn force_particle_mesh(
    state: &ParticleState,
    kernel: &ScaledKernel,
    settings: MeshSettings,
) -> Result<Vec<f64>> {
    Ok(MeshForce::new(kernel, state.period, settings)?.forces(state))
}

#[derive(Clone, Debug)]
enum ForceEval {
    Direct,
    Mesh(MeshForce),
}

/// Drift-then-exact-noise splitting for one step of size `dt`:
///
/// 1. `V ← V + F(X) dt`, `X ← X + V dt` (symplectic Euler), wrap `X`;
/// 2. `V_q ← V_q exp(σ_q(X) ΔB^q)` with the end-of-step positions.
///
/// The second substep is the pathwise solution of `dV_q = σ_q V_q ∘ dB^q`
/// at frozen `X`.
#[derive(Clone, Debug)]
pub struct ParticleIntegrator {
    pub kernel: ScaledKernel,
    pub sigma: SigmaField,
    pub dt: f64,
    pub seed: u64,
    /// Skip the interaction entirely (`φ ≡ 0`).
    pub free: bool,
    force: ForceEval,
}

impl ParticleIntegrator {
    pub fn new(
        kernel: ScaledKernel,
        sigma: SigmaField,
        dt: f64,
        method: ForceMethod,
        period: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("integrator.dt", "must be positive"));
        }
        kernel.check_fits_box(period)?;
        let force = match method {
            ForceMethod::Direct => ForceEval::Direct,
            ForceMethod::ParticleMesh(s) => ForceEval::Mesh(MeshForce::new(&kernel, period, s)?),
        };
        Ok(Self {
            kernel,
            sigma,
            dt,
            seed,
            free: false,
            force,
        })
    }

    /// No interaction: `φ ≡ 0`.
    pub fn without_interaction(mut self) -> Self {
        self.free = true;
        self
    }

    pub fn forces(&self, state: &ParticleState) -> Vec<f64> {
        if self.free {
            return vec![0.0; state.positions.len()];
        }
        match &self.force {
            ForceEval::Direct => force_direct(state, &self.kernel),
            ForceEval::Mesh(mesh) => mesh.forces(state),
        }
    }

    pub fn step(&self, state: &mut ParticleState, increment: &[f64]) -> Result<()> {
        let d = state.dim;
        let dt = self.dt;
        let forces = self.forces(state);
        for (v, f) in state.velocities.iter_mut().zip(&forces) {
            *v += f * dt;
        }
        let period = state.period;
        for (x, v) in state.positions.iter_mut().zip(&state.velocities) {
            *x = wrap(*x + v * dt, period);
        }
        if !self.sigma.is_zero() {
            for k in 0..state.len() {
                for q in 0..d {
                    let s = self.sigma.value(&state.positions[k * d..(k + 1) * d], q);
                    state.velocities[k * d + q] *= (s * increment[q]).exp();
                }
            }
        }
        state.steps += 1;
        state.time = state.steps as f64 * dt;
        if !state.is_finite() {
            return Err(Error::NonFiniteState {
                seed: self.seed,
                step: state.steps,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    Stratified,
    Iid,
}

/// Stream component reserved for initial-position draws.
const INIT_COMPONENT: u64 = 1 << 32;

const CDF_CELLS: usize = 1 << 14;
const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

fn gauss_legendre(a: f64, b: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GAUSS5
        .iter()
        .map(|(t, w)| w * f(mid + half * t))
        .sum::<f64>()
        * half
}

/// Gauss–Legendre with bisection until the two halves agree with the whole;
/// resolves jumps in piecewise-smooth densities.
fn adaptive_gl(a: f64, b: f64, f: &dyn Fn(f64) -> f64, whole: f64, depth: u32) -> f64 {
    let mid = 0.5 * (a + b);
    let left = gauss_legendre(a, mid, f);
    let right = gauss_legendre(mid, b, f);
    let refined = left + right;
    if depth == 0 || (refined - whole).abs() <= 1e-15 * (1.0 + refined.abs()) {
        return refined;
    }
    adaptive_gl(a, mid, f, left, depth - 1) + adaptive_gl(mid, b, f, right, depth - 1)
}

fn integrate(a: f64, b: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    adaptive_gl(a, b, f, gauss_legendre(a, b, f), 40)
}

/// Tabulated CDF of a 1-D density on `[0, Λ)` with exact in-cell refinement.
struct InverseCdf<'a> {
    density: &'a dyn ScalarProfile,
    period: f64,
    nodes: Vec<f64>,
}

impl<'a> InverseCdf<'a> {
    fn new(density: &'a dyn ScalarProfile, period: f64) -> Self {
        let h = period / CDF_CELLS as f64;
        let f = |x: f64| density.value(&[x]);
        let mut nodes = Vec::with_capacity(CDF_CELLS + 1);
        nodes.push(0.0);
        let mut acc = 0.0;
        for i in 0..CDF_CELLS {
            acc += integrate(i as f64 * h, (i + 1) as f64 * h, &f);
            nodes.push(acc);
        }
        Self {
            density,
            period,
            nodes,
        }
    }

    fn mass(&self) -> f64 {
        self.nodes[CDF_CELLS]
    }

    /// `F⁻¹(u)`: bracket on the table, then safeguarded Newton inside the cell.
    fn invert(&self, u: f64) -> f64 {
        let target = u * self.mass();
        let i = match self
            .nodes
            .binary_search_by(|v| v.partial_cmp(&target).unwrap())
        {
            Ok(i) => return (i as f64 * self.period / CDF_CELLS as f64).min(self.period),
            Err(i) => i.clamp(1, CDF_CELLS) - 1,
        };
        let h = self.period / CDF_CELLS as f64;
        let (mut lo, mut hi) = (i as f64 * h, (i + 1) as f64 * h);
        let base = self.nodes[i];
        let cell_mass = self.nodes[i + 1] - base;
        let f = |x: f64| self.density.value(&[x]);
        let mut x = if cell_mass > 0.0 {
            lo + (target - base) / cell_mass * h
        } else {
            0.5 * (lo + hi)
        };
        let left = i as f64 * h;
        for _ in 0..60 {
            let g = base + integrate(left, x, &f) - target;
            if g.abs() <= 1e-15 * self.mass() {
                break;
            }
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let rho = f(x);
            let newton = if rho > 0.0 { x - g / rho } else { f64::NAN };
            x = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-15 * self.period {
                break;
            }
        }
        x
    }
}

/// Particles sampled from `ρ₀` with `V_k = υ₀(X_k)`.
///
/// `Stratified` (1-D only) places `X_k = F⁻¹((k - ½)/N)`; `Iid` samples
/// `ρ₀` with counter-based uniforms (inverse CDF in 1-D, rejection in 2-D).
pub fn init_well_prepared(
    density: &dyn ScalarProfile,
    velocity: &dyn VectorProfile,
    dim: usize,
    period: f64,
    n: usize,
    scheme: InitScheme,
    rng: &CounterRng,
    sample: u64,
) -> Result<ParticleState> {
    if n == 0 {
        return Err(Error::invalid("particles.n", "must be at least 1"));
    }
    let positions = if dim == 1 {
        let cdf = InverseCdf::new(density, period);
        let mass = cdf.mass();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::DensityNotNormalizable { mass });
        }
        match scheme {
            InitScheme::Stratified => (0..n)
                .map(|k| cdf.invert((k as f64 + 0.5) / n as f64))
                .collect(),
            InitScheme::Iid => (0..n)
                .map(|k| cdf.invert(rng.uniform(sample, k as u64, INIT_COMPONENT)))
                .collect(),
        }
    } else {
        let grid = PeriodicGrid::new(dim, 256, period)?;
        let samples = GridField::from_fn(&grid, |x| density.value(x));
        let mass = samples.integral();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::DensityNotNormalizable { mass });
        }
        if scheme == InitScheme::Stratified {
            return Err(Error::invalid(
                "particles.init_scheme",
                "stratified placement needs d = 1",
            ));
        }
        let ceiling = 1.05 * samples.values.iter().copied().fold(0.0, f64::max);
        let mut out = Vec::with_capacity(n * dim);
        let mut draw = 0u64;
        while out.len() < n * dim {
            let (a, b) = rng.uniform_pair(sample, draw, INIT_COMPONENT);
            let c = rng.uniform(sample, draw, INIT_COMPONENT + 1);
            draw += 1;
            let x = [a * period, b * period];
            if c * ceiling < density.value(&x) {
                out.extend_from_slice(&x);
            }
        }
        out
    };
    let mut velocities = Vec::with_capacity(n * dim);
    for k in 0..n {
        let x = &positions[k * dim..(k + 1) * dim];
        for q in 0..dim {
            velocities.push(velocity.component(x, q));
        }
    }
    Ok(ParticleState::new(dim, period, positions, velocities))
}
