//! Browser bindings: kernel explorer, coupled-run viewer and the
//! mollification-error sweep. The plain functions below hold the logic so
//! they can be tested natively; the `#[wasm_bindgen]` items only convert
//! errors.

use meanfield_core::config::RunConfig;
use meanfield_core::experiment::{mollified_density, CoupledRun};
use meanfield_core::mollifier::{
    mollification_error_ratio, KernelFamily, MollifierSpec, ScaledKernel,
};
use meanfield_core::rng::CounterRng;
use meanfield_core::Result;
use wasm_bindgen::prelude::*;

fn family(name: &str) -> Result<KernelFamily> {
    match name {
        "gaussian" => Ok(KernelFamily::Gaussian),
        "compact-bump" => Ok(KernelFamily::CompactBump),
        other => Err(meanfield_core::Error::invalid(
            "kernel.family",
            format!("unknown family `{other}`"),
        )),
    }
}

/// Flat `[x, φ_Nʳ(x), φ_N(x)]` triples over the support of `φ_N`.
pub fn kernel_profile_values(
    family_name: &str,
    width: f64,
    n: u32,
    beta: f64,
    samples: usize,
) -> Result<Vec<f64>> {
    let kernel = ScaledKernel::new(
        MollifierSpec::new(family(family_name)?, width, 1)?,
        n.into(),
        beta,
    )?;
    let r = kernel.support_radius();
    let samples = samples.max(2);
    let mut out = Vec::with_capacity(3 * samples);
    for i in 0..samples {
        let x = -r + 2.0 * r * i as f64 / (samples - 1) as f64;
        out.extend([x, kernel.phi_nr(&[x]), kernel.phi_n(&[x])]);
    }
    Ok(out)
}

/// Flat `[N, ratio]` pairs for `N = 2^lo..=2^hi`, `f = sin`.
pub fn sweep_values(
    family_name: &str,
    width: f64,
    beta: f64,
    lo: u32,
    hi: u32,
) -> Result<Vec<f64>> {
    let spec = MollifierSpec::new(family(family_name)?, width, 1)?;
    let probes: Vec<f64> = (0..64)
        .map(|i| i as f64 * std::f64::consts::TAU / 64.0)
        .collect();
    let f = |x: &[f64]| x[0].sin();
    let mut out = Vec::new();
    for k in lo..=hi.min(20) {
        let n = 1u64 << k;
        let kernel = ScaledKernel::new(spec.clone(), n, beta)?;
        out.extend([
            n as f64,
            mollification_error_ratio(&kernel, &f, 1.0, &probes),
        ]);
    }
    Ok(out)
}

/// Settings the page exposes; everything else is the default run config.
pub fn viewer_config(
    n: usize,
    kernel_width: f64,
    noise_amplitude: f64,
    velocity_amplitude: f64,
    seed: u64,
) -> RunConfig {
    let mut cfg = RunConfig {
        master_seed: seed,
        ..RunConfig::default()
    };
    cfg.domain.grid_points = 256;
    cfg.particles.n = n;
    cfg.kernel.width = kernel_width;
    cfg.noise.amplitude = [noise_amplitude; 2];
    cfg.initial.velocity_amplitude = [velocity_amplitude; 2];
    cfg.integrator.dt = 2e-3;
    cfg.integrator.t_final = 4.0;
    cfg.study.freq_cutoff = 64;
    cfg
}

fn to_js(e: meanfield_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn kernel_profile(
    family: &str,
    width: f64,
    n: u32,
    beta: f64,
    samples: usize,
) -> Result<Vec<f64>, JsError> {
    kernel_profile_values(family, width, n, beta, samples).map_err(to_js)
}

#[wasm_bindgen]
pub fn mollification_sweep(
    family: &str,
    width: f64,
    beta: f64,
    lo: u32,
    hi: u32,
) -> Result<Vec<f64>, JsError> {
    sweep_values(family, width, beta, lo, hi).map_err(to_js)
}

/// A coupled run stepped on demand by the page.
#[wasm_bindgen]
pub struct CoupledViewer {
    run: CoupledRun,
    alpha: f64,
}

impl CoupledViewer {
    pub fn create(
        n: usize,
        kernel_width: f64,
        noise_amplitude: f64,
        velocity_amplitude: f64,
        seed: u64,
    ) -> Result<Self> {
        let cfg = viewer_config(n, kernel_width, noise_amplitude, velocity_amplitude, seed);
        let sc = cfg.scenario()?;
        let run = CoupledRun::new(&sc, n, &CounterRng::new(seed), 0)?;
        Ok(Self {
            run,
            alpha: sc.alpha,
        })
    }

    pub fn advance_by(&mut self, steps: u32) -> Result<bool> {
        for _ in 0..steps {
            if !self.run.coupled_step()? {
                return Ok(false);
            }
        }
        Ok(!self.run.finished())
    }
}

#[wasm_bindgen]
impl CoupledViewer {
    #[wasm_bindgen(constructor)]
    pub fn new(
        n: usize,
        kernel_width: f64,
        noise_amplitude: f64,
        velocity_amplitude: f64,
        seed: u64,
    ) -> Result<CoupledViewer, JsError> {
        Self::create(n, kernel_width, noise_amplitude, velocity_amplitude, seed).map_err(to_js)
    }

    /// Returns `false` once the run has ended or the guard has fired.
    pub fn advance(&mut self, steps: u32) -> Result<bool, JsError> {
        self.advance_by(steps).map_err(to_js)
    }

    pub fn time(&self) -> f64 {
        self.run.time()
    }

    pub fn stopped(&self) -> bool {
        self.run.stopped()
    }

    /// `[kinetic, density, total]`.
    pub fn q(&self) -> Vec<f64> {
        let r = self.run.q_functional();
        vec![r.kinetic_term, r.density_term, r.q_total]
    }

    /// `[‖S^N - ρ‖², ‖V^N - ρυ‖²]` in the negative Sobolev norm.
    pub fn distances(&self) -> Result<Vec<f64>, JsError> {
        let (s, v) = self.run.measure_distances(self.alpha).map_err(to_js)?;
        Ok(vec![s, v])
    }

    pub fn period(&self) -> f64 {
        self.run.particles.period
    }

    pub fn fluid_density(&self) -> Vec<f64> {
        self.run.fluid.rho.values.clone()
    }

    pub fn fluid_velocity(&self) -> Vec<f64> {
        self.run.fluid.vel[0].values.clone()
    }

    /// `S^N ∗ φ_Nʳ` on the fluid grid.
    pub fn particle_density(&self) -> Vec<f64> {
        let grid = self.run.fluid.grid();
        mollified_density(
            &self.run.particles.empirical(),
            grid,
            &self.run.kernel,
            self.run.density_method,
        )
        .values
    }

    pub fn positions(&self) -> Vec<f64> {
        self.run.particles.positions.clone()
    }

    pub fn velocities(&self) -> Vec<f64> {
        self.run.particles.velocities.clone()
    }
}
