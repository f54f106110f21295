//! Run configuration: TOML sections mirroring the modules, strict parsing,
//! validation with the offending key named, and conversion into scenarios.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::{EulerConfig, GuardRule, Interpolation};
use crate::experiment::{DensityMethod, Scenario, StudyPlan};
use crate::field::DepositScheme;
use crate::mollifier::{HypothesisSettings, KernelFamily, MollifierSpec};
use crate::particle::{ForceMethod, InitScheme, MeshSettings};
use crate::profiles::{BumpDensity, SigmaField, SigmaKind, SineVelocity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSection {
    pub dim: usize,
    pub period: f64,
    pub grid_points: usize,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self {
            dim: 1,
            period: TAU,
            grid_points: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub family: KernelFamily,
    pub width: f64,
    pub beta: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            family: KernelFamily::Gaussian,
            width: 2.0,
            beta: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticlesSection {
    pub n: usize,
    pub init_scheme: InitScheme,
}

impl Default for ParticlesSection {
    fn default() -> Self {
        Self {
            n: 1024,
            init_scheme: InitScheme::Stratified,
        }
    }
}

/// `ρ₀ ∝ background + amplitude·bump`, `υ₀ = offset + velocity_amplitude·sin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub background: f64,
    pub amplitude: f64,
    pub center: [f64; 2],
    pub bump_width: f64,
    pub velocity_offset: [f64; 2],
    pub velocity_amplitude: [f64; 2],
    pub velocity_wavenumber: u32,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            background: 1.0,
            amplitude: 0.2,
            center: [PI, PI],
            bump_width: 0.5,
            velocity_offset: [0.0, 0.0],
            velocity_amplitude: [0.1, 0.1],
            velocity_wavenumber: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub kind: SigmaKind,
    pub base: [f64; 2],
    pub amplitude: [f64; 2],
    pub wavenumber: u32,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            kind: SigmaKind::Cosine,
            base: [0.3, 0.3],
            amplitude: [0.1, 0.1],
            wavenumber: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForceKind {
    Direct,
    ParticleMesh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub dt: f64,
    pub t_final: f64,
    pub force_method: ForceKind,
    /// Mesh points per dimension; 0 selects the coarsest adequate grid.
    pub force_grid: usize,
    pub deposit: DepositScheme,
    pub compensate: bool,
    pub nodes_per_width: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 0.2,
            force_method: ForceKind::ParticleMesh,
            force_grid: 0,
            deposit: DepositScheme::Linear,
            compensate: true,
            nodes_per_width: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EulerSection {
    pub dealias_fraction: f64,
    pub hyperviscosity: f64,
    pub hyperviscosity_order: u32,
    pub guard_s: f64,
    pub guard_m: f64,
    pub guard_rule: GuardRule,
    pub interpolation: Interpolation,
}

impl Default for EulerSection {
    fn default() -> Self {
        let e = EulerConfig::default();
        Self {
            dealias_fraction: e.dealias_fraction,
            hyperviscosity: e.hyperviscosity,
            hyperviscosity_order: e.hyperviscosity_order,
            guard_s: e.guard_s,
            guard_m: e.guard_m,
            guard_rule: e.guard_rule,
            interpolation: Interpolation::Spectral,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub n_values: Vec<usize>,
    pub samples: usize,
    pub alpha: f64,
    /// Frequency cutoff `K` for measure distances; 0 means `M/2`.
    pub freq_cutoff: usize,
    pub density_method: DensityMethod,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            n_values: vec![256, 512, 1024, 2048, 4096, 8192],
            samples: 32,
            alpha: 2.0,
            freq_cutoff: 0,
            density_method: DensityMethod::Direct,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Steps between `Q` records.
    pub record_every: usize,
    /// Steps between snapshots; 0 writes only the initial and final states.
    pub snapshot_every: usize,
    pub snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            record_every: 10,
            snapshot_every: 0,
            snapshots: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub freq_window: f64,
    pub space_window: f64,
    pub samples: usize,
    pub ceiling: f64,
    pub underflow: f64,
    /// Particle counts for the mollification-error sweep.
    pub sweep_n_values: Vec<u64>,
    pub sweep_probes: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        let h = HypothesisSettings::default();
        Self {
            // the default width-2 Gaussian transform stays above `underflow` for λ < 3.7
            freq_window: 3.0,
            space_window: 8.0,
            samples: h.samples,
            ceiling: h.ceiling,
            underflow: h.underflow,
            sweep_n_values: (4..=14).map(|k| 1u64 << k).collect(),
            sweep_probes: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub domain: DomainSection,
    pub kernel: KernelSection,
    pub particles: ParticlesSection,
    pub initial: InitialSection,
    pub noise: NoiseSection,
    pub integrator: IntegratorSection,
    pub euler: EulerSection,
    pub study: StudySection,
    pub output: OutputSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 1,
            output_dir: PathBuf::from("out"),
            domain: DomainSection::default(),
            kernel: KernelSection::default(),
            particles: ParticlesSection::default(),
            initial: InitialSection::default(),
            noise: NoiseSection::default(),
            integrator: IntegratorSection::default(),
            euler: EulerSection::default(),
            study: StudySection::default(),
            output: OutputSection::default(),
            report: ReportSection::default(),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            key,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// Parse and validate a file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_toml_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.domain.dim;
        if !(1..=2).contains(&d) {
            return Err(Error::invalid("domain.dim", "must be 1 or 2"));
        }
        positive("domain.period", self.domain.period)?;
        let m = self.domain.grid_points;
        if m < 4 || !m.is_power_of_two() {
            return Err(Error::invalid(
                "domain.grid_points",
                "must be a power of two >= 4",
            ));
        }
        positive("kernel.width", self.kernel.width)?;
        if !(self.kernel.beta > 0.0 && self.kernel.beta < 1.0) {
            return Err(Error::invalid("kernel.beta", "must lie in (0, 1)"));
        }
        if self.particles.n == 0 {
            return Err(Error::invalid("particles.n", "must be at least 1"));
        }
        if d == 2 && self.particles.init_scheme == InitScheme::Stratified {
            return Err(Error::invalid(
                "particles.init_scheme",
                "stratified placement needs domain.dim = 1",
            ));
        }
        let init = &self.initial;
        if init.background < 0.0 || init.amplitude < 0.0 || init.background + init.amplitude <= 0.0
        {
            return Err(Error::invalid(
                "initial.background",
                "density weights must be nonnegative and not both zero",
            ));
        }
        positive("initial.bump_width", init.bump_width)?;
        if init.velocity_wavenumber == 0 {
            return Err(Error::invalid(
                "initial.velocity_wavenumber",
                "must be at least 1",
            ));
        }
        if self.noise.kind == SigmaKind::Cosine && self.noise.wavenumber == 0 {
            return Err(Error::invalid("noise.wavenumber", "must be at least 1"));
        }
        if self
            .noise
            .base
            .iter()
            .chain(&self.noise.amplitude)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("noise.base", "must be finite"));
        }
        let it = &self.integrator;
        positive("integrator.dt", it.dt)?;
        if !(it.t_final >= 0.0 && it.t_final.is_finite()) {
            return Err(Error::invalid("integrator.t_final", "must be nonnegative"));
        }
        let steps = it.t_final / it.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::invalid(
                "integrator.t_final",
                "must be an integer multiple of integrator.dt",
            ));
        }
        if it.force_grid != 0 && (it.force_grid < 4 || !it.force_grid.is_power_of_two()) {
            return Err(Error::invalid(
                "integrator.force_grid",
                "must be 0 (auto) or a power of two >= 4",
            ));
        }
        positive("integrator.nodes_per_width", it.nodes_per_width)?;
        self.euler_config().validate(d)?;
        let st = &self.study;
        if st.n_values.is_empty()
            || st.n_values.contains(&0)
            || st.n_values.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid(
                "study.n_values",
                "must be nonempty, positive and strictly ascending",
            ));
        }
        if st.samples < 2 {
            return Err(Error::invalid("study.samples", "must be at least 2"));
        }
        let min_alpha = d as f64 / 2.0 + 1.0;
        if !(st.alpha > min_alpha) {
            return Err(Error::invalid(
                "study.alpha",
                format!("must exceed d/2 + 1 = {min_alpha}"),
            ));
        }
        if st.freq_cutoff > m / 2 {
            return Err(Error::invalid(
                "study.freq_cutoff",
                format!("must be 0 (auto) or lie in 1..={}", m / 2),
            ));
        }
        if self.output.record_every == 0 {
            return Err(Error::invalid("output.record_every", "must be at least 1"));
        }
        let r = &self.report;
        positive("report.freq_window", r.freq_window)?;
        positive("report.space_window", r.space_window)?;
        positive("report.ceiling", r.ceiling)?;
        positive("report.underflow", r.underflow)?;
        if r.samples < 3 {
            return Err(Error::invalid("report.samples", "must be at least 3"));
        }
        if r.sweep_n_values.is_empty() || r.sweep_n_values.contains(&0) {
            return Err(Error::invalid(
                "report.sweep_n_values",
                "must be nonempty and positive",
            ));
        }
        if r.sweep_probes == 0 {
            return Err(Error::invalid("report.sweep_probes", "must be at least 1"));
        }
        Ok(())
    }

    pub fn euler_config(&self) -> EulerConfig {
        let e = &self.euler;
        EulerConfig {
            dt: self.integrator.dt,
            dealias_fraction: e.dealias_fraction,
            hyperviscosity: e.hyperviscosity,
            hyperviscosity_order: e.hyperviscosity_order,
            guard_s: e.guard_s,
            guard_m: e.guard_m,
            guard_rule: e.guard_rule,
            interpolation: e.interpolation,
        }
    }

    pub fn mollifier(&self) -> Result<MollifierSpec> {
        MollifierSpec::new(self.kernel.family, self.kernel.width, self.domain.dim)
    }

    pub fn force_method(&self) -> ForceMethod {
        let it = &self.integrator;
        match it.force_method {
            ForceKind::Direct => ForceMethod::Direct,
            ForceKind::ParticleMesh => ForceMethod::ParticleMesh(MeshSettings {
                points: (it.force_grid != 0).then_some(it.force_grid),
                scheme: it.deposit,
                compensate: it.compensate,
                nodes_per_width: it.nodes_per_width,
            }),
        }
    }

    pub fn sigma(&self) -> SigmaField {
        let n = &self.noise;
        match n.kind {
            SigmaKind::Zero => SigmaField::Zero,
            SigmaKind::Constant => SigmaField::Constant(n.base),
            SigmaKind::Cosine => SigmaField::Cosine {
                base: n.base,
                amplitude: n.amplitude,
                wavenumber: n.wavenumber,
                period: self.domain.period,
            },
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.validate()?;
        let d = self.domain.dim;
        let period = self.domain.period;
        let init = &self.initial;
        Ok(Scenario {
            dim: d,
            period,
            grid_points: self.domain.grid_points,
            kernel: self.mollifier()?,
            beta: self.kernel.beta,
            init: self.particles.init_scheme,
            density: BumpDensity::new(
                d,
                period,
                init.background,
                init.amplitude,
                init.center,
                init.bump_width,
            )?,
            velocity: SineVelocity {
                period,
                offset: init.velocity_offset,
                amplitude: init.velocity_amplitude,
                wavenumber: init.velocity_wavenumber,
            },
            sigma: self.sigma(),
            dt: self.integrator.dt,
            t_final: self.integrator.t_final,
            force: self.force_method(),
            euler: self.euler_config(),
            density_method: self.study.density_method,
            alpha: self.study.alpha,
            freq_cutoff: match self.study.freq_cutoff {
                0 => self.domain.grid_points / 2,
                k => k,
            },
        })
    }

    pub fn study_plan(&self) -> StudyPlan {
        StudyPlan {
            n_values: self.study.n_values.clone(),
            samples: self.study.samples,
            master_seed: self.master_seed,
        }
    }

    pub fn hypothesis_settings(&self) -> HypothesisSettings {
        HypothesisSettings {
            samples: self.report.samples,
            ceiling: self.report.ceiling,
            underflow: self.report.underflow,
        }
    }
}
