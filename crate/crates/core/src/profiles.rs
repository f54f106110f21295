//! Closed-form initial data and noise coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    interpolate, min_image, spectral_derivative, DepositScheme, GridField, PeriodicGrid,
};

pub trait ScalarProfile: Sync {
    fn value(&self, x: &[f64]) -> f64;
}

pub trait VectorProfile: Sync {
    fn component(&self, x: &[f64], q: usize) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarProfile for F {
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

impl ScalarProfile for GridField {
    fn value(&self, x: &[f64]) -> f64 {
        interpolate(self, x, DepositScheme::Linear)
    }
}

/// Unit-mass density `(b + a Σ_images exp(-|x-c|²/2ℓ²)) / Z` on the torus.
#[derive(Clone, Debug, PartialEq)]
pub struct BumpDensity {
    pub dim: usize,
    pub period: f64,
    pub background: f64,
    pub amplitude: f64,
    pub center: [f64; 2],
    pub width: f64,
    normaliser: f64,
}

impl BumpDensity {
    pub fn new(
        dim: usize,
        period: f64,
        background: f64,
        amplitude: f64,
        center: [f64; 2],
        width: f64,
    ) -> Result<Self> {
        if background < 0.0 || amplitude < 0.0 || background + amplitude <= 0.0 {
            return Err(Error::invalid(
                "initial.background",
                "density must be nonnegative and nonzero",
            ));
        }
        if !(width > 0.0) {
            return Err(Error::invalid("initial.bump_width", "must be positive"));
        }
        // periodising a Gaussian keeps its full-line integral
        let bump_mass = (std::f64::consts::TAU * width * width).powf(dim as f64 / 2.0);
        let normaliser = background * period.powi(dim as i32) + amplitude * bump_mass;
        Ok(Self {
            dim,
            period,
            background,
            amplitude,
            center,
            width,
            normaliser,
        })
    }
}

impl ScalarProfile for BumpDensity {
    fn value(&self, x: &[f64]) -> f64 {
        let mut acc = 1.0;
        // nearest image plus one image on each side per axis
        for q in 0..self.dim {
            let dx = min_image(x[q] - self.center[q], self.period);
            let s2 = 2.0 * self.width * self.width;
            let axis: f64 = [-1.0, 0.0, 1.0]
                .iter()
                .map(|k| (-(dx + k * self.period).powi(2) / s2).exp())
                .sum();
            acc *= axis;
        }
        (self.background + self.amplitude * acc) / self.normaliser
    }
}

/// Uniform density on `[a, b)` (1-D), zero elsewhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalDensity {
    pub start: f64,
    pub end: f64,
}

impl ScalarProfile for IntervalDensity {
    fn value(&self, x: &[f64]) -> f64 {
        if x[0] >= self.start && x[0] < self.end {
            1.0 / (self.end - self.start)
        } else {
            0.0
        }
    }
}

/// `υ_q(x) = offset_q + amplitude_q sin(2πk x_q / Λ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SineVelocity {
    pub period: f64,
    pub offset: [f64; 2],
    pub amplitude: [f64; 2],
    pub wavenumber: u32,
}

impl VectorProfile for SineVelocity {
    fn component(&self, x: &[f64], q: usize) -> f64 {
        let theta = std::f64::consts::TAU * self.wavenumber as f64 * x[q] / self.period;
        self.offset[q] + self.amplitude[q] * theta.sin()
    }
}

impl VectorProfile for Vec<GridField> {
    fn component(&self, x: &[f64], q: usize) -> f64 {
        interpolate(&self[q], x, DepositScheme::Linear)
    }
}

/// Noise coefficients `σ_q(x)`, diagonal in `q`.
#[derive(Clone, Debug, PartialEq)]
pub enum SigmaField {
    Zero,
    Constant([f64; 2]),
    /// `σ_q(x) = base_q + amplitude_q cos(2πk Σ_j x_j / Λ)`
    Cosine {
        base: [f64; 2],
        amplitude: [f64; 2],
        wavenumber: u32,
        period: f64,
    },
    /// Lattice samples per component, linearly interpolated off-lattice.
    Sampled(Vec<GridField>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaKind {
    Zero,
    Constant,
    Cosine,
}

impl SigmaField {
    #[inline]
    pub fn value(&self, x: &[f64], q: usize) -> f64 {
        match self {
            SigmaField::Zero => 0.0,
            SigmaField::Constant(c) => c[q],
            SigmaField::Cosine {
                base,
                amplitude,
                wavenumber,
                period,
            } => {
                let s: f64 = x.iter().sum();
                base[q]
                    + amplitude[q] * (std::f64::consts::TAU * *wavenumber as f64 * s / period).cos()
            }
            SigmaField::Sampled(fields) => interpolate(&fields[q], x, DepositScheme::Linear),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, SigmaField::Zero)
    }

    /// Component `q` sampled on a grid (exact lattice values for `Sampled`).
    pub fn on_grid(&self, grid: &PeriodicGrid, q: usize) -> GridField {
        match self {
            SigmaField::Sampled(fields) if fields[q].grid == *grid => fields[q].clone(),
            _ => GridField::from_fn(grid, |x| self.value(x, q)),
        }
    }

    /// `(sup |σ|, sup |∇σ|)` over the lattice, derivatives spectral.
    pub fn sup_norms(&self, grid: &PeriodicGrid) -> (f64, f64) {
        let mut sup = 0.0f64;
        let mut grad = 0.0f64;
        for q in 0..grid.dim() {
            let f = self.on_grid(grid, q);
            sup = sup.max(f.max_abs());
            for axis in 0..grid.dim() {
                grad = grad.max(spectral_derivative(&f, axis).max_abs());
            }
        }
        (sup, grad)
    }
}
