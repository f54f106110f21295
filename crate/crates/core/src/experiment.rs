//! Coupled particle/fluid runs on one noise path, the `Q` functional, the
//! negative-Sobolev distances and the Monte Carlo rate study over `N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::{EulerConfig, EulerSolver, FluidState, StopRecord};
use crate::field::{
    convolve, deposit, direct_kernel_sum, neg_sobolev_distance, DepositScheme, EmpiricalMeasure,
    GridField, NegativeIndex, PeriodicGrid,
};
use crate::mollifier::{MollifierSpec, ScaledKernel};
use crate::parallel;
use crate::particle::{
    init_well_prepared, ForceMethod, InitScheme, NoisePath, ParticleIntegrator, ParticleState,
};
use crate::profiles::{BumpDensity, SigmaField, SineVelocity};
use crate::rng::CounterRng;

/// How `S^N ∗ φ_Nʳ` is put on the lattice for the density term of `Q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMethod {
    /// Direct lattice sum over the truncated kernel support.
    Direct,
    /// Linear deposit followed by spectral convolution.
    Mesh,
}

/// Everything a coupled run needs except `N` and the sample index.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub dim: usize,
    pub period: f64,
    pub grid_points: usize,
    pub kernel: MollifierSpec,
    pub beta: f64,
    pub init: InitScheme,
    pub density: BumpDensity,
    pub velocity: SineVelocity,
    pub sigma: SigmaField,
    pub dt: f64,
    pub t_final: f64,
    pub force: ForceMethod,
    pub euler: EulerConfig,
    pub density_method: DensityMethod,
    pub alpha: f64,
    pub freq_cutoff: usize,
}

impl Scenario {
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn grid(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.dim, self.grid_points, self.period)
    }

    fn euler_config(&self) -> EulerConfig {
        EulerConfig {
            dt: self.dt,
            ..self.euler
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QRecord {
    pub time: f64,
    pub kinetic_term: f64,
    pub density_term: f64,
    pub q_total: f64,
    pub stopped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassSample {
    pub time: f64,
    pub mass: f64,
    pub min_density: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub q: Vec<QRecord>,
    pub mass: Vec<MassSample>,
}

/// `(1/N) Σ_k |V_k - υ(X_k)|²`.
pub fn kinetic_term(particles: &ParticleState, fluid: &FluidState, solver: &EulerSolver) -> f64 {
    let v = solver.sample_velocity(fluid, &particles.positions);
    let sum: f64 = particles
        .velocities
        .iter()
        .zip(&v)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    sum / particles.len() as f64
}

/// `S^N ∗ φ_Nʳ` on the lattice.
pub fn mollified_density(
    measure: &EmpiricalMeasure,
    grid: &PeriodicGrid,
    kernel: &ScaledKernel,
    method: DensityMethod,
) -> GridField {
    match method {
        DensityMethod::Direct => direct_kernel_sum(measure, grid, &kernel.view_r()),
        DensityMethod::Mesh => convolve(
            &deposit(measure, grid, DepositScheme::Linear),
            &kernel.view_r(),
        ),
    }
}

/// Lattice `‖S^N ∗ φ_Nʳ - ρ‖₀²`.
pub fn density_term(
    particles: &ParticleState,
    rho: &GridField,
    kernel: &ScaledKernel,
    method: DensityMethod,
) -> f64 {
    let smooth = mollified_density(&particles.empirical(), &rho.grid, kernel, method);
    let sum: f64 = smooth
        .values
        .iter()
        .zip(&rho.values)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    sum * rho.grid.cell_volume()
}

/// Particle system and fluid driven by one noise path, on one clock.
#[derive(Clone, Debug)]
pub struct CoupledRun {
    pub particles: ParticleState,
    pub fluid: FluidState,
    pub path: NoisePath,
    pub kernel: ScaledKernel,
    pub integrator: ParticleIntegrator,
    pub solver: EulerSolver,
    pub density_method: DensityMethod,
    pub freq_cutoff: usize,
    frozen: Option<QRecord>,
}

impl CoupledRun {
    /// Well-prepared particles and fluid from the scenario's initial data,
    /// with the noise path of `sample`.
    pub fn new(scenario: &Scenario, n: usize, rng: &CounterRng, sample: u64) -> Result<Self> {
        let grid = scenario.grid()?;
        let particles = init_well_prepared(
            &scenario.density,
            &scenario.velocity,
            scenario.dim,
            scenario.period,
            n,
            scenario.init,
            rng,
            sample,
        )?;
        let fluid = FluidState::from_profiles(&grid, &scenario.density, &scenario.velocity)?;
        let path = NoisePath::generate(rng, sample, scenario.steps(), scenario.dim, scenario.dt);
        Self::from_parts(scenario, particles, fluid, path)
    }

    pub fn from_parts(
        scenario: &Scenario,
        particles: ParticleState,
        fluid: FluidState,
        path: NoisePath,
    ) -> Result<Self> {
        let n = particles.len() as u64;
        let kernel = ScaledKernel::new(scenario.kernel.clone(), n, scenario.beta)?;
        let integrator = ParticleIntegrator::new(
            kernel.clone(),
            scenario.sigma.clone(),
            scenario.dt,
            scenario.force,
            scenario.period,
            path.seed,
        )?;
        let mut solver = EulerSolver::new(
            fluid.grid().clone(),
            scenario.euler_config(),
            scenario.sigma.clone(),
        )?;
        solver.seed = path.seed;
        if scenario.freq_cutoff == 0 || scenario.freq_cutoff > fluid.grid().points() / 2 {
            return Err(Error::invalid("study.freq_cutoff", "must lie in 1..=M/2"));
        }
        let mut run = Self {
            particles,
            fluid,
            path,
            kernel,
            integrator,
            solver,
            density_method: scenario.density_method,
            freq_cutoff: scenario.freq_cutoff,
            frozen: None,
        };
        if run.solver.stopping_guard(&mut run.fluid) {
            run.frozen = Some(run.compute_q());
        }
        Ok(run)
    }

    pub fn time(&self) -> f64 {
        self.particles.time
    }

    pub fn steps(&self) -> u64 {
        self.particles.steps
    }

    pub fn stopped(&self) -> bool {
        self.fluid.stopped()
    }

    pub fn stop_record(&self) -> Option<StopRecord> {
        self.fluid.stop
    }

    pub fn finished(&self) -> bool {
        self.stopped() || self.steps() as usize >= self.path.steps()
    }

    fn compute_q(&self) -> QRecord {
        let kinetic_term = kinetic_term(&self.particles, &self.fluid, &self.solver);
        let density_term = density_term(
            &self.particles,
            &self.fluid.rho,
            &self.kernel,
            self.density_method,
        );
        QRecord {
            time: self.time(),
            kinetic_term,
            density_term,
            q_total: kinetic_term + density_term,
            stopped: self.stopped(),
        }
    }

    /// `Q` at `t ∧ τ_m`.
    pub fn q_functional(&self) -> QRecord {
        self.frozen.unwrap_or_else(|| self.compute_q())
    }

    /// Advance both systems by one increment of the shared path. Returns
    /// `false` without touching anything once the fluid has stopped or the
    /// path is exhausted.
    pub fn coupled_step(&mut self) -> Result<bool> {
        if self.finished() {
            return Ok(false);
        }
        let n = self.particles.steps as usize;
        let seed = self.path.seed;
        let inc = self.path.increment(n);
        let step = n as u64 + 1;
        self.integrator
            .step(&mut self.particles, inc)
            .map_err(|e| e.at_step(seed, step))?;
        self.solver
            .step(&mut self.fluid, inc)
            .map_err(|e| e.at_step(seed, step))?;
        debug_assert_eq!(self.particles.steps, self.fluid.steps);
        if self.fluid.stopped() {
            self.frozen = Some(self.compute_q());
        }
        Ok(true)
    }

    /// `(‖S^N - ρ‖²_{-α}, Σ_q ‖V^N_q - ρυ_q‖²_{-α})` at `t ∧ τ_m`.
    pub fn measure_distances(&self, alpha: f64) -> Result<(f64, f64)> {
        let d = self.particles.dim;
        let index = NegativeIndex::new(alpha, d)?;
        let period = self.particles.period;
        let s = neg_sobolev_distance(
            &self.particles.empirical(),
            Some(&self.fluid.rho),
            period,
            index,
            self.freq_cutoff,
        )?;
        let mut dist_v = 0.0;
        for q in 0..d {
            let momentum = self.fluid.momentum(q);
            let v = neg_sobolev_distance(
                &self.particles.velocity_measure(q),
                Some(&momentum),
                period,
                index,
                self.freq_cutoff,
            )?;
            dist_v += v.distance.powi(2);
        }
        Ok((s.distance.powi(2), dist_v))
    }

    /// Step to the end of the path (or `τ_m`), recording `Q` every `every`
    /// steps and the mass after every step.
    pub fn run_to_end(&mut self, every: usize) -> Result<RunTrace> {
        let every = every.max(1);
        let mut trace = RunTrace::default();
        trace.q.push(self.q_functional());
        trace.mass.push(self.mass_sample());
        while self.coupled_step()? {
            trace.mass.push(self.mass_sample());
            if (self.steps() as usize).is_multiple_of(every) || self.finished() {
                trace.q.push(self.q_functional());
            }
        }
        Ok(trace)
    }

    fn mass_sample(&self) -> MassSample {
        MassSample {
            time: self.fluid.time,
            mass: self.fluid.mass(),
            min_density: self.fluid.min_density(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares on `(ln x, ln y)`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<LogLogFit> {
    if xs.len() != ys.len() {
        return Err(Error::DegenerateFit("x and y lengths differ".into()));
    }
    if xs.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 points, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::DegenerateFit("all values must be positive".into()));
    }
    for (i, a) in xs.iter().enumerate() {
        if xs[..i].contains(a) {
            return Err(Error::DegenerateFit(format!("repeated abscissa {a}")));
        }
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(LogLogFit {
        slope,
        intercept,
        r2,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyPlan {
    pub n_values: Vec<usize>,
    pub samples: usize,
    pub master_seed: u64,
}

/// One `(N, sample)` cell of the study.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub n: usize,
    pub sample: u64,
    pub q0: QRecord,
    pub q_t: QRecord,
    pub dist_s0: f64,
    pub dist_v0: f64,
    pub dist_s: f64,
    pub dist_v: f64,
    pub stop: Option<StopRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, se }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub q: MeanSe,
    pub q0: MeanSe,
    pub kinetic: MeanSe,
    pub density: MeanSe,
    pub dist_s: MeanSe,
    pub dist_v: MeanSe,
    pub dist_s0: MeanSe,
    pub dist_v0: MeanSe,
    pub censored_count: usize,
}

/// A fit, or the reason it is unavailable.
pub type FitOutcome = std::result::Result<LogLogFit, String>;

#[derive(Clone, Debug, PartialEq)]
pub struct RateFits {
    pub q: FitOutcome,
    /// Slope of `E Q_T - E Q_0`.
    pub q_floor_subtracted: FitOutcome,
    pub q0: FitOutcome,
    pub dist_s: FitOutcome,
    pub dist_v: FitOutcome,
    pub dist_s0: FitOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateResult {
    pub rows: Vec<RateRow>,
    pub outcomes: Vec<SampleOutcome>,
    pub fits: RateFits,
    pub beta: f64,
    pub dim: usize,
    pub alpha: f64,
    pub t_final: f64,
    pub guard_m: f64,
    pub samples: usize,
    pub master_seed: u64,
}

impl RateResult {
    pub fn target_slope(&self) -> f64 {
        -self.beta / self.dim as f64
    }

    pub fn censored_total(&self) -> usize {
        self.rows.iter().map(|r| r.censored_count).sum()
    }
}

fn run_sample(
    scenario: &Scenario,
    n: usize,
    rng: &CounterRng,
    sample: u64,
    alpha: f64,
) -> Result<SampleOutcome> {
    let mut run = CoupledRun::new(scenario, n, rng, sample)?;
    let q0 = run.q_functional();
    let (dist_s0, dist_v0) = run.measure_distances(alpha)?;
    while run.coupled_step()? {}
    let q_t = run.q_functional();
    let (dist_s, dist_v) = run.measure_distances(alpha)?;
    Ok(SampleOutcome {
        n,
        sample,
        q0,
        q_t,
        dist_s0,
        dist_v0,
        dist_s,
        dist_v,
        stop: run.stop_record(),
    })
}

fn fit_rows(rows: &[&RateRow], y: impl Fn(&RateRow) -> f64) -> FitOutcome {
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| y(r)).collect();
    fit_loglog(&xs, &ys).map_err(|e| e.to_string())
}

/// Monte Carlo estimate of `E Q_{T∧τ_m}` and of the distances for every `N`.
/// Sample `m` uses the noise path of `(master_seed, m)` for every `N`.
pub fn monte_carlo_rate(scenario: &Scenario, plan: &StudyPlan) -> Result<RateResult> {
    if plan.n_values.is_empty() || plan.n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "study.n_values",
            "must be nonempty and strictly ascending",
        ));
    }
    if plan.samples < 2 {
        return Err(Error::invalid("study.samples", "must be at least 2"));
    }
    NegativeIndex::new(scenario.alpha, scenario.dim)?;
    let rng = CounterRng::new(plan.master_seed);
    let m = plan.samples;
    let tasks = plan.n_values.len() * m;
    let results = parallel::map_indexed(tasks, |t| {
        let n = plan.n_values[t / m];
        run_sample(scenario, n, &rng, (t % m) as u64, scenario.alpha)
    });
    let outcomes = results.into_iter().collect::<Result<Vec<_>>>()?;

    let rows: Vec<RateRow> = plan
        .n_values
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let cell = &outcomes[i * m..(i + 1) * m];
            let col = |f: &dyn Fn(&SampleOutcome) -> f64| {
                MeanSe::of(&cell.iter().map(f).collect::<Vec<_>>())
            };
            RateRow {
                n,
                q: col(&|o| o.q_t.q_total),
                q0: col(&|o| o.q0.q_total),
                kinetic: col(&|o| o.q_t.kinetic_term),
                density: col(&|o| o.q_t.density_term),
                dist_s: col(&|o| o.dist_s),
                dist_v: col(&|o| o.dist_v),
                dist_s0: col(&|o| o.dist_s0),
                dist_v0: col(&|o| o.dist_v0),
                censored_count: cell.iter().filter(|o| o.stop.is_some()).count(),
            }
        })
        .collect();

    let clean: Vec<&RateRow> = rows.iter().filter(|r| r.censored_count == 0).collect();
    let q_floor_subtracted = if clean.iter().any(|r| r.q.mean - r.q0.mean <= 0.0) {
        Err("E Q_T - E Q_0 is not positive for every N".to_string())
    } else {
        fit_rows(&clean, |r| r.q.mean - r.q0.mean)
    };
    let all: Vec<&RateRow> = rows.iter().collect();
    let fits = RateFits {
        q: fit_rows(&clean, |r| r.q.mean),
        q_floor_subtracted,
        q0: fit_rows(&all, |r| r.q0.mean),
        dist_s: fit_rows(&clean, |r| r.dist_s.mean),
        dist_v: fit_rows(&clean, |r| r.dist_v.mean),
        dist_s0: fit_rows(&all, |r| r.dist_s0.mean),
    };
    Ok(RateResult {
        rows,
        outcomes,
        fits,
        beta: scenario.beta,
        dim: scenario.dim,
        alpha: scenario.alpha,
        t_final: scenario.t_final,
        guard_m: scenario.euler.guard_m,
        samples: m,
        master_seed: plan.master_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::euler::{GuardRule, Interpolation};
    use crate::mollifier::KernelFamily;
    use crate::particle::MeshSettings;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn scenario() -> Scenario {
        Scenario {
            dim: 1,
            period: TAU,
            grid_points: 128,
            kernel: MollifierSpec::new(KernelFamily::Gaussian, 1.0, 1).unwrap(),
            beta: 0.5,
            init: InitScheme::Stratified,
            density: BumpDensity::new(1, TAU, 1.0, 0.5, [3.0, 0.0], 0.5).unwrap(),
            velocity: SineVelocity {
                period: TAU,
                offset: [0.0; 2],
                amplitude: [0.1, 0.0],
                wavenumber: 1,
            },
            sigma: SigmaField::Constant([0.3, 0.0]),
            dt: 1e-3,
            t_final: 0.02,
            force: ForceMethod::ParticleMesh(MeshSettings::default()),
            euler: EulerConfig {
                interpolation: Interpolation::Spectral,
                ..EulerConfig::default()
            },
            density_method: DensityMethod::Direct,
            alpha: 2.0,
            freq_cutoff: 32,
        }
    }

    #[test]
    fn fit_examples() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let f = fit_loglog(&xs, &xs.map(|x| 3.0 * x.powf(-0.5))).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        assert!(fit_loglog(&xs, &[2.0; 4]).unwrap().slope.abs() < 1e-15);
        let rng = CounterRng::new(1);
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (1.0 + 1e-3 * rng.normal(0, i as u64, 0)) / x)
            .collect();
        assert!((fit_loglog(&xs, &ys).unwrap().slope + 1.0).abs() < 0.01);
        assert!(matches!(
            fit_loglog(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(matches!(
            fit_loglog(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn q_is_additive_and_well_prepared_kinetic_vanishes() {
        let run = CoupledRun::new(&scenario(), 256, &CounterRng::new(1), 0).unwrap();
        let q = run.q_functional();
        assert_eq!(q.q_total, q.kinetic_term + q.density_term);
        // velocities are υ₀(X) exactly; spectral sampling of a sine is exact
        assert!(q.kinetic_term < 1e-28, "{}", q.kinetic_term);
        assert!(q.density_term >= 0.0);
    }

    #[test]
    fn single_particle_q_terms() {
        let mut sc = scenario();
        sc.kernel = MollifierSpec::new(KernelFamily::Gaussian, 0.25, 1).unwrap();
        let grid = sc.grid().unwrap();
        let x0 = 1.7;
        let w = 0.4;
        let particles = ParticleState::new(1, TAU, vec![x0], vec![w]);
        let fluid = FluidState::from_profiles(&grid, &sc.density, &sc.velocity).unwrap();
        let path = NoisePath::zero(sc.steps(), 1, sc.dt);
        let run = CoupledRun::from_parts(&sc, particles, fluid, path).unwrap();
        let q = run.q_functional();
        assert!((q.kinetic_term - (w - 0.1 * x0.sin()).powi(2)).abs() < 1e-14);
        // oracle: ∫ (φʳ(x - x0) - ρ(x))² dx by fine trapezoid on the torus
        let kernel = ScaledKernel::new(sc.kernel.clone(), 1, sc.beta).unwrap();
        let n = 200_000;
        let h = TAU / n as f64;
        let oracle: f64 = (0..n)
            .map(|i| {
                let x = i as f64 * h;
                let k: f64 = (-2..=2)
                    .map(|img| kernel.phi_nr(&[x - x0 + img as f64 * TAU]))
                    .sum();
                (k - sc.density.value(&[x])).powi(2)
            })
            .sum::<f64>()
            * h;
        assert!(
            (q.density_term - oracle).abs() < 1e-6,
            "{} vs {oracle}",
            q.density_term
        );
    }

    use crate::profiles::ScalarProfile;

    #[test]
    fn zero_noise_run_matches_separate_subsystems() {
        let mut sc = scenario();
        sc.sigma = SigmaField::Zero;
        let rng = CounterRng::new(4);
        let mut run = CoupledRun::new(&sc, 128, &rng, 0).unwrap();
        let mut p = run.particles.clone();
        let mut f = run.fluid.clone();
        let integ = run.integrator.clone();
        let solver = run.solver.clone();
        while run.coupled_step().unwrap() {}
        for _ in 0..sc.steps() {
            integ.step(&mut p, &[0.0]).unwrap();
            solver.step(&mut f, &[0.0]).unwrap();
        }
        assert_eq!(run.particles, p);
        assert_eq!(run.fluid, f);
        assert_eq!(run.time(), run.fluid.time);
    }

    #[test]
    fn equal_seeds_give_identical_runs() {
        let sc = scenario();
        let mut a = CoupledRun::new(&sc, 64, &CounterRng::new(9), 3).unwrap();
        let mut b = CoupledRun::new(&sc, 64, &CounterRng::new(9), 3).unwrap();
        let ta = a.run_to_end(5).unwrap();
        let tb = b.run_to_end(5).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.particles, b.particles);
    }

    #[test]
    fn stopped_run_freezes_diagnostics() {
        let mut sc = scenario();
        sc.velocity.amplitude = [0.6, 0.0];
        sc.density = BumpDensity::new(1, TAU, 1.0, 0.0, [0.0; 2], 1.0).unwrap();
        sc.grid_points = 256;
        sc.t_final = 3.0;
        sc.euler.guard_m = 5.0;
        sc.euler.guard_rule = GuardRule::Strict;
        let mut run = CoupledRun::new(&sc, 64, &CounterRng::new(2), 0).unwrap();
        assert!(!run.stopped());
        while run.coupled_step().unwrap() {}
        assert!(run.stopped());
        let rec = run.stop_record().unwrap();
        assert!(rec.norm >= 5.0);
        let q = run.q_functional();
        assert!(q.stopped);
        assert_eq!(q.time, rec.time);
        let d = run.measure_distances(2.0).unwrap();
        let snapshot = (run.particles.clone(), run.fluid.clone());
        assert!(!run.coupled_step().unwrap());
        assert_eq!(run.q_functional(), q);
        assert_eq!(run.measure_distances(2.0).unwrap(), d);
        assert_eq!((run.particles.clone(), run.fluid.clone()), snapshot);
        assert_eq!(run.particles.time, run.fluid.time);
    }

    #[test]
    fn distances_reject_small_alpha() {
        let run = CoupledRun::new(&scenario(), 16, &CounterRng::new(0), 0).unwrap();
        assert!(matches!(
            run.measure_distances(1.5),
            Err(Error::AlphaTooSmall { .. })
        ));
        assert!(run.measure_distances(1.6).is_ok());
    }

    #[test]
    fn initial_distance_decreases_with_n() {
        let sc = scenario();
        let dists: Vec<f64> = [64, 128, 256, 512]
            .iter()
            .map(|&n| {
                CoupledRun::new(&sc, n, &CounterRng::new(0), 0)
                    .unwrap()
                    .measure_distances(2.0)
                    .unwrap()
                    .0
            })
            .collect();
        for w in dists.windows(2) {
            assert!(w[1] < w[0], "{dists:?}");
        }
    }

    #[test]
    fn velocity_distance_vanishes_with_density_distance() {
        let sc = scenario();
        let grid = sc.grid().unwrap();
        // uniform density, constant velocity: particles on a fine lattice match
        // ρ and ρυ in every retained mode
        let n = 1024;
        let xs: Vec<f64> = (0..n).map(|k| k as f64 * TAU / n as f64).collect();
        let vs = vec![0.25; n];
        let rho = GridField::constant(&grid, 1.0 / TAU);
        let vel = vec![GridField::constant(&grid, 0.25)];
        let fluid = FluidState::new(rho, vel).unwrap();
        let run = CoupledRun::from_parts(
            &sc,
            ParticleState::new(1, TAU, xs, vs),
            fluid,
            NoisePath::zero(1, 1, sc.dt),
        )
        .unwrap();
        let (ds, dv) = run.measure_distances(2.0).unwrap();
        assert!(ds < 1e-28 && dv < 1e-28, "{ds} {dv}");
    }

    #[test]
    fn error_carries_step_and_seed() {
        let mut sc = scenario();
        sc.sigma = SigmaField::Constant([50.0, 0.0]);
        sc.t_final = 1.0;
        let rng = CounterRng::new(12);
        let mut run = CoupledRun::new(&sc, 16, &rng, 0).unwrap();
        let mut path = run.path.clone();
        path.increments[3] = 40.0;
        run.path = path;
        let err = loop {
            match run.coupled_step() {
                Ok(true) => continue,
                Ok(false) => panic!("expected failure"),
                Err(e) => break e,
            }
        };
        match err {
            Error::NonFiniteState { seed, step } => assert_eq!((seed, step), (12, 4)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rate_study_schema_and_crn() {
        let sc = scenario();
        let plan = StudyPlan {
            n_values: vec![64, 128, 256],
            samples: 3,
            master_seed: 5,
        };
        let res = monte_carlo_rate(&sc, &plan).unwrap();
        assert_eq!(res.rows.len(), 3);
        assert_eq!(res.outcomes.len(), 9);
        assert_eq!(res.censored_total(), 0);
        assert!(res.fits.q.is_ok());
        let rng = CounterRng::new(5);
        let a = CoupledRun::new(&sc, 64, &rng, 1).unwrap().path.to_bytes();
        let b = CoupledRun::new(&sc, 256, &rng, 1).unwrap().path.to_bytes();
        assert_eq!(a, b);
        let single = monte_carlo_rate(
            &sc,
            &StudyPlan {
                n_values: vec![64],
                samples: 2,
                master_seed: 5,
            },
        )
        .unwrap();
        assert!(single.fits.q.is_err());
        assert_eq!(single.rows[0].n, 64);
        assert!(monte_carlo_rate(
            &sc,
            &StudyPlan {
                n_values: vec![128, 64],
                samples: 2,
                master_seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn sample_outcome_is_independent_of_other_samples() {
        let sc = scenario();
        let rng = CounterRng::new(21);
        let alone = run_sample(&sc, 64, &rng, 2, 2.0).unwrap();
        let res = monte_carlo_rate(
            &sc,
            &StudyPlan {
                n_values: vec![64],
                samples: 3,
                master_seed: 21,
            },
        )
        .unwrap();
        assert_eq!(res.outcomes[2], alone);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn distances_are_permutation_invariant(seed in 0u64..1000, rot in 1usize..31) {
            let sc = scenario();
            let run = CoupledRun::new(&sc, 32, &CounterRng::new(seed), 0).unwrap();
            let d0 = run.measure_distances(2.0).unwrap();
            let n = run.particles.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let xs = perm.iter().map(|&i| run.particles.positions[i]).collect();
            let vs = perm.iter().map(|&i| run.particles.velocities[i]).collect();
            let permuted = CoupledRun::from_parts(&sc, ParticleState::new(1, TAU, xs, vs), run.fluid.clone(), run.path.clone()).unwrap();
            let d1 = permuted.measure_distances(2.0).unwrap();
            prop_assert!((d0.0 - d1.0).abs() <= 1e-12 * d0.0.max(1e-300));
            prop_assert!((d0.1 - d1.1).abs() <= 1e-12 * d0.1.max(1e-300));
        }

        #[test]
        fn q_total_is_sum_of_terms(seed in 0u64..1000) {
            let mut sc = scenario();
            sc.init = InitScheme::Iid;
            let mut run = CoupledRun::new(&sc, 48, &CounterRng::new(seed), 0).unwrap();
            for _ in 0..3 { run.coupled_step().unwrap(); }
            let q = run.q_functional();
            prop_assert_eq!(q.q_total, q.kinetic_term + q.density_term);
            prop_assert!(q.kinetic_term >= 0.0 && q.density_term >= 0.0);
        }
    }
}
