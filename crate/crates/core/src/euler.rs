//! Pseudo-spectral solver for the stochastic compressible Euler system
//!
//! ```text
//! dρ   = -div(ρυ) dt
//! dυ_q = -(∇_q ρ + υ·∇υ_q) dt + σ_q(x) υ_q ∘ dB^q
//! ```
//!
//! on the periodic box, with pressure `p = ρ²/2` so that `ρ⁻¹∇p = ∇ρ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    interpolate, sobolev_norm, to_spectral, DepositScheme, GridField, PeriodicGrid,
};
use crate::parallel;
use crate::profiles::{ScalarProfile, SigmaField, VectorProfile};

/// Which lower bound the guard index `s` must respect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuardRule {
    /// `s >= d/2 + 3`
    Strict,
    /// `s > d/2 + 2`
    Relaxed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Linear,
    Spectral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EulerConfig {
    pub dt: f64,
    pub dealias_fraction: f64,
    /// Damping rate at the Nyquist frequency in units of `λ_max²`.
    pub hyperviscosity: f64,
    pub hyperviscosity_order: u32,
    pub guard_s: f64,
    pub guard_m: f64,
    pub guard_rule: GuardRule,
    pub interpolation: Interpolation,
}

impl Default for EulerConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            dealias_fraction: 2.0 / 3.0,
            hyperviscosity: 1e-3,
            hyperviscosity_order: 4,
            guard_s: 3.5,
            guard_m: 50.0,
            guard_rule: GuardRule::Strict,
            interpolation: Interpolation::Linear,
        }
    }
}

impl EulerConfig {
    pub fn min_guard_s(rule: GuardRule, dim: usize) -> f64 {
        match rule {
            GuardRule::Strict => dim as f64 / 2.0 + 3.0,
            GuardRule::Relaxed => dim as f64 / 2.0 + 2.0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("integrator.dt", "must be positive"));
        }
        if !(self.dealias_fraction > 0.0 && self.dealias_fraction <= 1.0) {
            return Err(Error::invalid(
                "euler.dealias_fraction",
                "must lie in (0, 1]",
            ));
        }
        if !(self.hyperviscosity >= 0.0 && self.hyperviscosity.is_finite()) {
            return Err(Error::invalid(
                "euler.hyperviscosity",
                "must be nonnegative",
            ));
        }
        if self.hyperviscosity_order == 0 {
            return Err(Error::invalid(
                "euler.hyperviscosity_order",
                "must be at least 1",
            ));
        }
        let min = Self::min_guard_s(self.guard_rule, dim);
        let ok = match self.guard_rule {
            GuardRule::Strict => self.guard_s >= min,
            GuardRule::Relaxed => self.guard_s > min,
        };
        if !ok || !self.guard_s.is_finite() {
            let op = if self.guard_rule == GuardRule::Strict {
                ">="
            } else {
                ">"
            };
            return Err(Error::invalid(
                "euler.guard_s",
                format!("must be {op} {min} for d = {dim}"),
            ));
        }
        if !(self.guard_m > 0.0) {
            return Err(Error::invalid("euler.guard_m", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    pub step: u64,
    pub time: f64,
    /// `‖(ρ, υ)‖_{H^s}` when the guard fired.
    pub norm: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FluidState {
    pub rho: GridField,
    pub vel: Vec<GridField>,
    pub time: f64,
    pub steps: u64,
    pub stop: Option<StopRecord>,
}

impl FluidState {
    pub fn new(rho: GridField, vel: Vec<GridField>) -> Result<Self> {
        if vel.len() != rho.grid.dim() || vel.iter().any(|v| v.grid != rho.grid) {
            return Err(Error::invalid(
                "euler",
                "velocity components must live on the density grid",
            ));
        }
        let min = rho.min();
        if !(min > 0.0) {
            return Err(Error::NonPositiveDensity { min });
        }
        Ok(Self {
            rho,
            vel,
            time: 0.0,
            steps: 0,
            stop: None,
        })
    }

    pub fn from_profiles(
        grid: &PeriodicGrid,
        rho: &dyn ScalarProfile,
        vel: &dyn VectorProfile,
    ) -> Result<Self> {
        let r = GridField::from_fn(grid, |x| rho.value(x));
        let v = (0..grid.dim())
            .map(|q| GridField::from_fn(grid, |x| vel.component(x, q)))
            .collect();
        Self::new(r, v)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.rho.grid
    }

    pub fn stopped(&self) -> bool {
        self.stop.is_some()
    }

    pub fn mass(&self) -> f64 {
        self.rho.integral()
    }

    pub fn min_density(&self) -> f64 {
        self.rho.min()
    }

    /// `(‖ρ‖_s² + Σ_q ‖υ_q‖_s²)^{1/2}`.
    pub fn hs_norm(&self, s: f64) -> f64 {
        let mut sum = sobolev_norm(&self.rho, s).powi(2);
        for v in &self.vel {
            sum += sobolev_norm(v, s).powi(2);
        }
        sum.sqrt()
    }

    /// Momentum density component `ρυ_q`.
    pub fn momentum(&self, q: usize) -> GridField {
        self.rho.zip_with(&self.vel[q], |r, v| r * v)
    }

    pub fn is_finite(&self) -> bool {
        self.rho.is_finite() && self.vel.iter().all(GridField::is_finite)
    }
}

/// `p = ρ²/2`.
pub fn pressure(rho: &GridField) -> GridField {
    rho.map(|r| 0.5 * r * r)
}

#[derive(Clone, Debug)]
pub struct EulerSolver {
    pub grid: PeriodicGrid,
    pub config: EulerConfig,
    pub sigma: SigmaField,
    /// Reported in non-finite-state errors.
    pub seed: u64,
    sigma_grid: Vec<GridField>,
    /// 1 inside the dealiasing box, 0 outside.
    mask: Vec<f64>,
    /// Hyperviscous damping rate per mode.
    damping: Vec<f64>,
    /// `iλ_q` per mode with the Nyquist slot zeroed.
    ik: Vec<Vec<Complex64>>,
}

impl EulerSolver {
    pub fn new(grid: PeriodicGrid, config: EulerConfig, sigma: SigmaField) -> Result<Self> {
        let d = grid.dim();
        config.validate(d)?;
        let m = grid.points();
        let nyq = m / 2;
        let cut = config.dealias_fraction * nyq as f64;
        let lambda_max = grid.frequency(nyq as i64);
        let mut mask = vec![0.0; grid.len()];
        let mut damping = vec![0.0; grid.len()];
        let mut ik = vec![vec![Complex64::new(0.0, 0.0); grid.len()]; d];
        for idx in 0..grid.len() {
            let (a, b) = grid.split(idx);
            let modes = [grid.mode(a), if d == 2 { grid.mode(b) } else { 0 }];
            let slots = [a, b];
            let inside = modes[..d].iter().all(|k| (k.abs() as f64) <= cut + 1e-12);
            mask[idx] = if inside { 1.0 } else { 0.0 };
            let ratio2 = grid.lambda2(idx) / (lambda_max * lambda_max);
            damping[idx] = config.hyperviscosity
                * lambda_max
                * lambda_max
                * ratio2.powi(config.hyperviscosity_order as i32);
            for q in 0..d {
                if slots[q] != nyq {
                    ik[q][idx] = Complex64::new(0.0, grid.frequency(modes[q]));
                }
            }
        }
        let sigma_grid = (0..d).map(|q| sigma.on_grid(&grid, q)).collect();
        Ok(Self {
            grid,
            config,
            sigma,
            seed: 0,
            sigma_grid,
            mask,
            damping,
            ik,
        })
    }

    fn masked(&self, values: &[f64]) -> Vec<Complex64> {
        let mut c = self.grid.forward(values);
        for (ck, w) in c.iter_mut().zip(&self.mask) {
            *ck *= w;
        }
        c
    }

    fn derivative(&self, coeffs: &[Complex64], axis: usize) -> Vec<f64> {
        let prod: Vec<Complex64> = coeffs
            .iter()
            .zip(&self.ik[axis])
            .map(|(c, k)| c * k)
            .collect();
        self.grid.inverse(&prod)
    }

    /// Deterministic tendencies `(dρ, dυ)`, dealiased, with hyperviscous
    /// damping `-ν(λ) û` added.
    pub fn drift_rhs(
        &self,
        rho: &GridField,
        vel: &[GridField],
    ) -> Result<(GridField, Vec<GridField>)> {
        let min = rho.min();
        if !(min > 0.0) {
            return Err(Error::NonPositiveDensity { min });
        }
        let g = &self.grid;
        let d = g.dim();
        let rho_hat = self.masked(&rho.values);
        let rho_s = g.inverse(&rho_hat);
        let vel_hat: Vec<Vec<Complex64>> = vel.iter().map(|v| self.masked(&v.values)).collect();
        let vel_s: Vec<Vec<f64>> = vel_hat.iter().map(|c| g.inverse(c)).collect();

        let mut flux_div = vec![Complex64::new(0.0, 0.0); g.len()];
        for q in 0..d {
            let flux: Vec<f64> = rho_s.iter().zip(&vel_s[q]).map(|(r, v)| r * v).collect();
            let fh = self.masked(&flux);
            for ((acc, f), k) in flux_div.iter_mut().zip(&fh).zip(&self.ik[q]) {
                *acc += f * k;
            }
        }
        let full_rho = g.forward(&rho.values);
        let drho: Vec<Complex64> = flux_div
            .iter()
            .zip(&full_rho)
            .zip(&self.damping)
            .map(|((f, r), nu)| -f - r * nu)
            .collect();

        let grads: Vec<Vec<Vec<f64>>> = (0..d)
            .map(|q| (0..d).map(|j| self.derivative(&vel_hat[q], j)).collect())
            .collect();
        let mut dvel = Vec::with_capacity(d);
        for q in 0..d {
            let mut adv = vec![0.0; g.len()];
            for j in 0..d {
                for ((a, v), dv) in adv.iter_mut().zip(&vel_s[j]).zip(&grads[q][j]) {
                    *a += v * dv;
                }
            }
            let adv_hat = self.masked(&adv);
            let full_v = g.forward(&vel[q].values);
            let tend: Vec<Complex64> = (0..g.len())
                .map(|i| -(rho_hat[i] * self.ik[q][i]) - adv_hat[i] - full_v[i] * self.damping[i])
                .collect();
            dvel.push(GridField {
                grid: g.clone(),
                values: g.inverse(&tend),
            });
        }
        Ok((
            GridField {
                grid: g.clone(),
                values: g.inverse(&drho),
            },
            dvel,
        ))
    }

    /// `υ_q ← υ_q exp(σ_q ΔB^q)` on the lattice; `ρ` untouched.
    pub fn noise_step(&self, state: &mut FluidState, increment: &[f64]) {
        if self.sigma.is_zero() {
            return;
        }
        for (q, v) in state.vel.iter_mut().enumerate() {
            let db = increment[q];
            if db == 0.0 {
                continue;
            }
            for (u, s) in v.values.iter_mut().zip(&self.sigma_grid[q].values) {
                *u *= (s * db).exp();
            }
        }
    }

    /// One classical four-stage step of the drift alone.
    pub fn step_deterministic(&self, state: &mut FluidState) -> Result<()> {
        let dt = self.config.dt;
        let d = self.grid.dim();
        let axpy = |base: &GridField, k: &GridField, a: f64| base.zip_with(k, |x, y| x + a * y);
        let (r1, v1) = self.drift_rhs(&state.rho, &state.vel)?;
        let rho2 = axpy(&state.rho, &r1, 0.5 * dt);
        let vel2: Vec<GridField> = (0..d)
            .map(|q| axpy(&state.vel[q], &v1[q], 0.5 * dt))
            .collect();
        let (r2, v2) = self.drift_rhs(&rho2, &vel2)?;
        let rho3 = axpy(&state.rho, &r2, 0.5 * dt);
        let vel3: Vec<GridField> = (0..d)
            .map(|q| axpy(&state.vel[q], &v2[q], 0.5 * dt))
            .collect();
        let (r3, v3) = self.drift_rhs(&rho3, &vel3)?;
        let rho4 = axpy(&state.rho, &r3, dt);
        let vel4: Vec<GridField> = (0..d).map(|q| axpy(&state.vel[q], &v3[q], dt)).collect();
        let (r4, v4) = self.drift_rhs(&rho4, &vel4)?;
        let combine =
            |x: &mut GridField, k1: &GridField, k2: &GridField, k3: &GridField, k4: &GridField| {
                for i in 0..x.values.len() {
                    x.values[i] += dt / 6.0
                        * (k1.values[i] + 2.0 * k2.values[i] + 2.0 * k3.values[i] + k4.values[i]);
                }
            };
        combine(&mut state.rho, &r1, &r2, &r3, &r4);
        for q in 0..d {
            combine(&mut state.vel[q], &v1[q], &v2[q], &v3[q], &v4[q]);
        }
        Ok(())
    }

    /// Half noise, full drift, half noise, then the guard. A stopped state is
    /// left untouched.
    pub fn step(&self, state: &mut FluidState, increment: &[f64]) -> Result<()> {
        if state.stopped() {
            return Ok(());
        }
        let half: Vec<f64> = increment.iter().map(|b| 0.5 * b).collect();
        self.noise_step(state, &half);
        self.step_deterministic(state)?;
        self.noise_step(state, &half);
        state.steps += 1;
        state.time = state.steps as f64 * self.config.dt;
        if !state.is_finite() {
            return Err(Error::NonFiniteState {
                seed: self.seed,
                step: state.steps,
            });
        }
        self.stopping_guard(state);
        Ok(())
    }

    /// Marks the state stopped when `‖(ρ, υ)‖_{H^s} >= m`; returns whether it
    /// is stopped afterwards.
    pub fn stopping_guard(&self, state: &mut FluidState) -> bool {
        if state.stopped() {
            return true;
        }
        let m = self.config.guard_m;
        if m.is_infinite() {
            return false;
        }
        let norm = state.hs_norm(self.config.guard_s);
        if norm >= m {
            state.stop = Some(StopRecord {
                step: state.steps,
                time: state.time,
                norm,
                threshold: m,
            });
            return true;
        }
        false
    }

    /// `υ` at off-lattice points (flat `N × d`).
    pub fn sample_velocity(&self, state: &FluidState, points: &[f64]) -> Vec<f64> {
        sample_fields(&state.vel, points, self.config.interpolation)
    }
}

/// Interpolate each component field at flat `N × d` points.
pub fn sample_fields(fields: &[GridField], points: &[f64], scheme: Interpolation) -> Vec<f64> {
    let d = fields.len();
    let n = points.len() / d;
    let mut out = vec![0.0; n * d];
    match scheme {
        Interpolation::Linear => parallel::for_each_chunk_mut(&mut out, d, |k, o| {
            let x = &points[k * d..(k + 1) * d];
            for q in 0..d {
                o[q] = interpolate(&fields[q], x, DepositScheme::Linear);
            }
        }),
        Interpolation::Spectral => {
            let spectra: Vec<_> = fields.iter().map(to_spectral).collect();
            parallel::for_each_chunk_mut(&mut out, d, |k, o| {
                let x = &points[k * d..(k + 1) * d];
                for q in 0..d {
                    o[q] = spectra[q].evaluate(x);
                }
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::spectral_derivative;
    use crate::particle::NoisePath;
    use crate::profiles::SineVelocity;
    use crate::rng::CounterRng;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn grid(m: usize) -> PeriodicGrid {
        PeriodicGrid::new(1, m, TAU).unwrap()
    }

    fn inviscid() -> EulerConfig {
        EulerConfig {
            hyperviscosity: 0.0,
            guard_m: f64::INFINITY,
            ..EulerConfig::default()
        }
    }

    fn state(g: &PeriodicGrid, rho: impl Fn(f64) -> f64, vel: impl Fn(f64) -> f64) -> FluidState {
        FluidState::new(
            GridField::from_fn(g, |x| rho(x[0])),
            vec![GridField::from_fn(g, |x| vel(x[0]))],
        )
        .unwrap()
    }

    #[test]
    fn pressure_examples() {
        let g = grid(16);
        assert!(pressure(&GridField::constant(&g, 2.0))
            .values
            .iter()
            .all(|&p| p == 2.0));
        assert!(pressure(&GridField::constant(&g, 0.0))
            .values
            .iter()
            .all(|&p| p == 0.0));
    }

    #[test]
    fn pressure_gradient_over_density_is_density_gradient() {
        let g = PeriodicGrid::new(1, 256, TAU).unwrap();
        let rng = CounterRng::new(11);
        let coeffs: Vec<f64> = (0..8).map(|k| 0.05 * rng.normal(0, k, 0)).collect();
        let rho = GridField::from_fn(&g, |x| {
            1.0 + coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * ((k + 1) as f64 * x[0]).sin())
                .sum::<f64>()
        });
        let lhs = spectral_derivative(&pressure(&rho), 0).zip_with(&rho, |a, r| a / r);
        let rhs = spectral_derivative(&rho, 0);
        for (a, b) in lhs.values.iter().zip(&rhs.values) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn constants_are_steady() {
        let g = grid(32);
        let solver = EulerSolver::new(g.clone(), EulerConfig::default(), SigmaField::Zero).unwrap();
        let s = state(&g, |_| 1.5, |_| -0.3);
        let (dr, dv) = solver.drift_rhs(&s.rho, &s.vel).unwrap();
        assert!(dr.max_abs() < 1e-14 && dv[0].max_abs() < 1e-14);
    }

    #[test]
    fn drift_of_resting_sine_density() {
        let g = grid(64);
        let solver = EulerSolver::new(g.clone(), inviscid(), SigmaField::Zero).unwrap();
        let s = state(&g, |x| 1.0 + 0.1 * x.sin(), |_| 0.0);
        let (dr, dv) = solver.drift_rhs(&s.rho, &s.vel).unwrap();
        assert!(dr.max_abs() < 1e-14);
        for (i, v) in dv[0].values.iter().enumerate() {
            let x = g.coords(i)[0];
            assert!((v + 0.1 * x.cos()).abs() < 1e-13);
        }
    }

    #[test]
    fn drift_rejects_nonpositive_density() {
        let g = grid(16);
        let solver = EulerSolver::new(g.clone(), inviscid(), SigmaField::Zero).unwrap();
        let rho = GridField::from_fn(&g, |x| x[0].sin());
        let v = vec![GridField::zeros(&g)];
        assert!(matches!(
            solver.drift_rhs(&rho, &v),
            Err(Error::NonPositiveDensity { .. })
        ));
    }

    #[test]
    fn linear_sound_wave() {
        let g = grid(64);
        let eps = 1e-4;
        let k = 3.0;
        let cfg = EulerConfig {
            dt: 1e-3,
            ..inviscid()
        };
        let solver = EulerSolver::new(g.clone(), cfg, SigmaField::Zero).unwrap();
        let mut s = state(&g, |x| 1.0 + eps * (k * x).cos(), |_| 0.0);
        for _ in 0..10 {
            solver.step(&mut s, &[0.0]).unwrap();
        }
        let t = s.time;
        for i in 0..g.len() {
            let x = g.coords(i)[0];
            let rho = 1.0 + eps * (k * x).cos() * (k * t).cos();
            let vel = eps * (k * x).sin() * (k * t).sin();
            // nonlinear corrections are O(ε²)
            assert!((s.rho.values[i] - rho).abs() < 10.0 * eps * eps);
            assert!((s.vel[0].values[i] - vel).abs() < 10.0 * eps * eps);
        }
    }

    #[test]
    fn noise_alone_is_exact() {
        let g = grid(64);
        let sigma = SigmaField::Cosine {
            base: [0.3, 0.0],
            amplitude: [0.1, 0.0],
            wavenumber: 1,
            period: TAU,
        };
        let solver = EulerSolver::new(g.clone(), inviscid(), sigma.clone()).unwrap();
        let path = NoisePath::generate(&CounterRng::new(2), 0, 500, 1, 1e-3);
        let mut s = state(&g, |x| 1.0 + 0.1 * x.cos(), |x| 0.2 + x.sin());
        let init = s.clone();
        for n in 0..path.steps() {
            solver.noise_step(&mut s, path.increment(n));
        }
        let b = path.value_after(500)[0];
        assert_eq!(s.rho, init.rho);
        for i in 0..g.len() {
            let x = g.coords(i);
            let exact = init.vel[0].values[i] * (sigma.value(&x[..1], 0) * b).exp();
            assert!((s.vel[0].values[i] - exact).abs() <= 1e-12 * exact.abs().max(1e-300));
        }
        let before = s.clone();
        solver.noise_step(&mut s, &[0.0]);
        assert_eq!(s, before);
    }

    #[test]
    fn zero_sigma_matches_deterministic_bitwise() {
        let g = grid(64);
        let cfg = EulerConfig::default();
        let a = EulerSolver::new(g.clone(), cfg, SigmaField::Zero).unwrap();
        let b = EulerSolver::new(g.clone(), cfg, SigmaField::Zero).unwrap();
        let mut s1 = state(&g, |x| 1.0 + 0.2 * x.sin(), |x| 0.1 * x.cos());
        let mut s2 = s1.clone();
        for n in 0..50 {
            a.step(&mut s1, &[0.01 * n as f64]).unwrap();
            b.step_deterministic(&mut s2).unwrap();
        }
        assert_eq!(s1.rho, s2.rho);
        assert_eq!(s1.vel, s2.vel);
    }

    #[test]
    fn mass_is_conserved() {
        let g = grid(128);
        let sigma = SigmaField::Constant([0.3, 0.0]);
        let cfg = EulerConfig {
            dt: 2e-3,
            ..EulerConfig::default()
        };
        let solver = EulerSolver::new(g.clone(), cfg, sigma).unwrap();
        let path = NoisePath::generate(&CounterRng::new(5), 0, 1000, 1, cfg.dt);
        let mut s = state(&g, |x| (1.0 + 0.2 * x.sin()) / TAU, |x| 0.1 * x.cos());
        let m0 = s.mass();
        for n in 0..1000 {
            solver.step(&mut s, path.increment(n)).unwrap();
            if n == 0 {
                assert!(((s.mass() - m0) / m0).abs() < 1e-10);
            }
        }
        assert!(((s.mass() - m0) / m0).abs() < 1e-8);
    }

    #[test]
    fn fourth_order_self_convergence() {
        let g = grid(64);
        let run = |dt: f64| {
            let cfg = EulerConfig { dt, ..inviscid() };
            let solver = EulerSolver::new(g.clone(), cfg, SigmaField::Zero).unwrap();
            let mut s = state(&g, |x| 1.0 + 0.1 * x.sin(), |x| 0.1 * x.cos());
            let steps = (0.4 / dt).round() as usize;
            for _ in 0..steps {
                solver.step_deterministic(&mut s).unwrap();
            }
            s
        };
        let reference = run(0.4 / 1280.0);
        let errs: Vec<f64> = [20.0, 40.0, 80.0]
            .iter()
            .map(|&n| {
                let s = run(0.4 / n);
                s.rho.zip_with(&reference.rho, |a, b| a - b).max_abs()
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 4.0).abs() < 0.5, "{errs:?}");
        }
    }

    #[test]
    fn guard_thresholds() {
        let g = grid(32);
        let s = state(&g, |x| 1.0 + 0.1 * x.sin(), |_| 0.0);
        let never = EulerSolver::new(g.clone(), inviscid(), SigmaField::Zero).unwrap();
        let mut a = s.clone();
        assert!(!never.stopping_guard(&mut a));
        // ‖1 + 0.1 sin‖_s² = 2π + π·0.01·2^s
        let norm = s.hs_norm(3.5);
        let expected = (TAU + std::f64::consts::PI * 0.01 * 2f64.powf(3.5)).sqrt();
        assert!((norm - expected).abs() < 1e-12);
        let cfg = EulerConfig {
            guard_m: 0.5 * norm,
            ..EulerConfig::default()
        };
        let low = EulerSolver::new(g.clone(), cfg, SigmaField::Zero).unwrap();
        let mut b = s.clone();
        assert!(low.stopping_guard(&mut b));
        let rec = b.stop.unwrap();
        assert_eq!(rec.step, 0);
        let frozen = b.clone();
        low.step(&mut b, &[1.0]).unwrap();
        assert_eq!(b, frozen);
    }

    #[test]
    fn guard_fires_before_spectral_blowup() {
        let g = grid(256);
        let cfg = EulerConfig {
            dt: 1e-3,
            guard_m: 5.0,
            ..EulerConfig::default()
        };
        let solver = EulerSolver::new(g.clone(), cfg, SigmaField::Zero).unwrap();
        let mut s = state(&g, |_| 1.0, |x| 0.6 * x.sin());
        assert!(s.hs_norm(3.5) < 5.0);
        let mut steps = 0;
        while !s.stopped() && steps < 20_000 {
            solver.step(&mut s, &[0.0]).unwrap();
            steps += 1;
        }
        assert!(s.stopped());
        let c = to_spectral(&s.vel[0]);
        let amp: Vec<f64> = (0..=64).map(|k| c.coefficient([k, 0]).norm()).collect();
        let peak = amp.iter().cloned().fold(0.0, f64::max);
        let tail = amp[48..].iter().cloned().fold(0.0, f64::max);
        assert!(tail < 1e-3 * peak, "tail {tail} peak {peak}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = EulerConfig::default();
        assert!(cfg.validate(1).is_ok());
        assert!(cfg.validate(2).is_err());
        cfg.guard_rule = GuardRule::Relaxed;
        cfg.guard_s = 2.5;
        assert!(cfg.validate(1).is_err());
        cfg.guard_s = 2.6;
        assert!(cfg.validate(1).is_ok());
        cfg.dealias_fraction = 0.0;
        match cfg.validate(1) {
            Err(Error::InvalidConfig { key, .. }) => assert_eq!(key, "euler.dealias_fraction"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sample_velocity_examples() {
        let g = grid(64);
        let h = g.spacing();
        let solver = EulerSolver::new(g.clone(), inviscid(), SigmaField::Zero).unwrap();
        let s = state(&g, |_| 1.0, |x| x.sin());
        let lattice: Vec<f64> = (0..64).map(|i| i as f64 * h).collect();
        for (a, b) in solver
            .sample_velocity(&s, &lattice)
            .iter()
            .zip(&s.vel[0].values)
        {
            assert!((a - b).abs() < 1e-15);
        }
        let mids: Vec<f64> = lattice.iter().map(|x| x + 0.5 * h).collect();
        let lin = solver.sample_velocity(&s, &mids);
        for (x, v) in mids.iter().zip(&lin) {
            assert!((v - x.sin()).abs() <= h * h / 8.0 * (1.0 + 1e-9));
        }
        let spec = sample_fields(&s.vel, &mids, Interpolation::Spectral);
        for (x, v) in mids.iter().zip(&spec) {
            assert!((v - x.sin()).abs() < 1e-12);
        }
        let c = state(&g, |_| 1.0, |_| 0.7);
        assert!(sample_fields(&c.vel, &mids, Interpolation::Spectral)
            .iter()
            .all(|v| (v - 0.7).abs() < 1e-14));
        assert!(solver
            .sample_velocity(&c, &mids)
            .iter()
            .all(|v| (v - 0.7).abs() < 1e-14));
    }

    #[test]
    fn two_dimensional_step_conserves_mass() {
        let g = PeriodicGrid::new(2, 32, TAU).unwrap();
        let v = SineVelocity {
            period: TAU,
            offset: [0.0; 2],
            amplitude: [0.1, 0.05],
            wavenumber: 1,
        };
        let rho = |x: &[f64]| 1.0 + 0.1 * (x[0] + x[1]).cos();
        let mut s = FluidState::from_profiles(&g, &rho, &v).unwrap();
        let solver = EulerSolver::new(
            g.clone(),
            EulerConfig {
                guard_s: 4.0,
                ..EulerConfig::default()
            },
            SigmaField::Constant([0.2, 0.1]),
        )
        .unwrap();
        let m0 = s.mass();
        for _ in 0..20 {
            solver.step(&mut s, &[0.01, -0.02]).unwrap();
        }
        assert!(((s.mass() - m0) / m0).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn stepping_a_stopped_state_is_idempotent(db in -1.0f64..1.0) {
            let g = grid(32);
            let cfg = EulerConfig { guard_m: 1.0, ..EulerConfig::default() };
            let solver = EulerSolver::new(g.clone(), cfg, SigmaField::Constant([0.3, 0.0])).unwrap();
            let mut s = state(&g, |x| 1.0 + 0.1 * x.sin(), |x| x.cos());
            solver.stopping_guard(&mut s);
            let frozen = s.clone();
            solver.step(&mut s, &[db]).unwrap();
            prop_assert_eq!(s, frozen);
        }

        #[test]
        fn mass_conserved_for_random_smooth_data(a in -0.3f64..0.3, b in -0.3f64..0.3, db in -0.2f64..0.2) {
            let g = grid(64);
            let solver = EulerSolver::new(g.clone(), EulerConfig::default(), SigmaField::Constant([0.3, 0.0])).unwrap();
            let mut s = state(&g, |x| 1.0 + a * x.sin() + 0.1 * (2.0 * x).cos(), |x| b * x.cos());
            let m0 = s.mass();
            for _ in 0..5 {
                solver.step(&mut s, &[db]).unwrap();
            }
            prop_assert!(((s.mass() - m0) / m0).abs() < 1e-10);
        }
    }
}
