//! Interaction kernels.
//!
//! The base mollifier `φ₁ʳ` is a radial symmetric probability density; the
//! interaction potential is its self-convolution `φ₁ = φ₁ʳ ∗ φ₁ʳ`, and the
//! `N`-particle system uses the rescaled families
//!
//! ```text
//! φ_N(x)  = N^β φ₁(N^{β/d} x)        φ_Nʳ(x) = N^β φ₁ʳ(N^{β/d} x)
//! ```
//!
//! Fourier transforms follow `û(λ) = ∫ u(x) e^{-iλ·x} dx`, so `φ̂₁ʳ(0) = 1`.
//!
//! Two families ship: `gaussian` has closed forms for everything, while
//! `compact-bump` (`C exp(-1/(1-|x/w|²))`) goes through trapezoid quadrature
//! for its self-convolution and transforms.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Kernel;

pub const MAX_DIM: usize = 2;
pub type Point = [f64; MAX_DIM];

/// Level (relative to the peak) below which a Gaussian is truncated.
pub const TRUNCATION_LEVEL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    Gaussian,
    CompactBump,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::CompactBump => "compact-bump",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureConfig {
    /// Trapezoid points per dimension.
    pub points_per_dim: usize,
    /// Largest accepted difference between the full and half resolution rule.
    pub tolerance: f64,
}

impl QuadratureConfig {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            points_per_dim: if dim == 1 { 1 << 12 } else { 1 << 8 },
            tolerance: 1e-8,
        }
    }
}

/// Trapezoid rule on `[a, b]` with `n` points (both ends included).
pub fn trapezoid(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    debug_assert!(n >= 2);
    let h = (b - a) / (n - 1) as f64;
    let mut sum = 0.5 * (f(a) + f(b));
    for i in 1..n - 1 {
        sum += f(a + i as f64 * h);
    }
    sum * h
}

/// Trapezoid rule over `[-r, r]^dim` centred on `center`, returning the
/// full-resolution value and the value using every other node.
fn trapezoid_box_pair(
    dim: usize,
    center: &[f64],
    radius: f64,
    n: usize,
    f: impl Fn(&[f64]) -> f64,
) -> (f64, f64) {
    // odd n so that the half rule shares the end points
    let n = if n.is_multiple_of(2) { n + 1 } else { n };
    let h = 2.0 * radius / (n - 1) as f64;
    let w = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let (mut full, mut half) = (0.0, 0.0);
    match dim {
        1 => {
            for i in 0..n {
                let v = w(i) * f(&[center[0] - radius + i as f64 * h]);
                full += v;
                if i % 2 == 0 {
                    half += v;
                }
            }
            (full * h, half * 2.0 * h)
        }
        _ => {
            let mut y = [0.0; 2];
            for i in 0..n {
                y[0] = center[0] - radius + i as f64 * h;
                for j in 0..n {
                    y[1] = center[1] - radius + j as f64 * h;
                    let v = w(i) * w(j) * f(&y);
                    full += v;
                    if i % 2 == 0 && j % 2 == 0 {
                        half += v;
                    }
                }
            }
            (full * h * h, half * 4.0 * h * h)
        }
    }
}

fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = if n % 2 == 1 { n + 1 } else { n };
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let c = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += c * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

fn bump_profile(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Base kernel description. Construct with [`MollifierSpec::new`].
#[derive(Clone, Debug, PartialEq)]
pub struct MollifierSpec {
    pub family: KernelFamily,
    pub width: f64,
    pub dim: usize,
    pub quadrature: QuadratureConfig,
    norm: f64,
    axis_variance: f64,
}

impl MollifierSpec {
    pub fn new(family: KernelFamily, width: f64, dim: usize) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::invalid(
                "kernel.width",
                "must be a positive finite number",
            ));
        }
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::invalid("domain.dim", "must be 1 or 2"));
        }
        let (norm, axis_variance) = match family {
            KernelFamily::Gaussian => (
                (std::f64::consts::TAU * width * width).powf(-(dim as f64) / 2.0),
                width * width,
            ),
            KernelFamily::CompactBump => {
                const NODES: usize = 200_000;
                if dim == 1 {
                    let mass = 2.0 * simpson(0.0, 1.0, NODES, |t| bump_profile(1.0 - t * t));
                    let second =
                        2.0 * simpson(0.0, 1.0, NODES, |t| t * t * bump_profile(1.0 - t * t));
                    (1.0 / (width * mass), width * width * second / mass)
                } else {
                    // substitute u = r², so ∫ r g(r) dr = ½ ∫ g(√u) du
                    let j0 = simpson(0.0, 1.0, NODES, |u| bump_profile(1.0 - u));
                    let j1 = simpson(0.0, 1.0, NODES, |u| u * bump_profile(1.0 - u));
                    let mass = std::f64::consts::PI * j0;
                    (1.0 / (width * width * mass), 0.5 * width * width * j1 / j0)
                }
            }
        };
        Ok(Self {
            family,
            width,
            dim,
            quadrature: QuadratureConfig::for_dim(dim),
            norm,
            axis_variance,
        })
    }

    pub fn with_quadrature(mut self, quadrature: QuadratureConfig) -> Self {
        self.quadrature = quadrature;
        self
    }

    /// Per-axis variance of `φ₁ʳ`.
    pub fn axis_variance(&self) -> f64 {
        self.axis_variance
    }

    /// Radius outside of which `φ₁ʳ` is treated as zero.
    pub fn support_radius(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => self.width * (2.0 * (1.0 / TRUNCATION_LEVEL).ln()).sqrt(),
            KernelFamily::CompactBump => self.width,
        }
    }

    /// Radius outside of which `φ₁` is treated as zero.
    pub fn phi1_support_radius(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => std::f64::consts::SQRT_2 * self.support_radius(),
            KernelFamily::CompactBump => 2.0 * self.width,
        }
    }

    /// Radial profile `f(|x|²)` and its first two derivatives in `|x|²`.
    fn radial(&self, r2: f64) -> (f64, f64, f64) {
        let w2 = self.width * self.width;
        match self.family {
            KernelFamily::Gaussian => {
                let f = self.norm * (-r2 / (2.0 * w2)).exp();
                (f, -f / (2.0 * w2), f / (4.0 * w2 * w2))
            }
            KernelFamily::CompactBump => {
                let u = 1.0 - r2 / w2;
                if u <= 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                let f = self.norm * (-1.0 / u).exp();
                let u2 = u * u;
                (f, -f / (w2 * u2), f * (1.0 - 2.0 * u) / (w2 * w2 * u2 * u2))
            }
        }
    }

    /// `φ₁ʳ(x)`.
    pub fn phi1r(&self, x: &[f64]) -> f64 {
        self.radial(norm2(&x[..self.dim])).0
    }

    pub fn grad_phi1r(&self, x: &[f64]) -> Point {
        let (_, df, _) = self.radial(norm2(&x[..self.dim]));
        let mut g = [0.0; MAX_DIM];
        for q in 0..self.dim {
            g[q] = 2.0 * df * x[q];
        }
        g
    }

    pub fn hessian_phi1r(&self, x: &[f64]) -> [[f64; MAX_DIM]; MAX_DIM] {
        let (_, df, d2f) = self.radial(norm2(&x[..self.dim]));
        let mut h = [[0.0; MAX_DIM]; MAX_DIM];
        for p in 0..self.dim {
            for q in 0..self.dim {
                h[p][q] = 4.0 * x[p] * x[q] * d2f + if p == q { 2.0 * df } else { 0.0 };
            }
        }
        h
    }

    fn quadrature_check(&self, pair: (f64, f64)) -> Result<f64> {
        let residual = (pair.0 - pair.1).abs();
        if residual > self.quadrature.tolerance {
            return Err(Error::QuadratureNotConverged {
                residual,
                tolerance: self.quadrature.tolerance,
            });
        }
        Ok(pair.0)
    }

    /// `φ₁ = φ₁ʳ ∗ φ₁ʳ` by trapezoid quadrature, whatever the family.
    pub fn phi1_quadrature(&self, x: &[f64]) -> Result<f64> {
        let r = self.support_radius();
        let pair = trapezoid_box_pair(
            self.dim,
            &[0.0; MAX_DIM],
            r,
            self.quadrature.points_per_dim,
            |y| {
                let mut z = [0.0; MAX_DIM];
                for q in 0..self.dim {
                    z[q] = x[q] - y[q];
                }
                self.phi1r(y) * self.phi1r(&z)
            },
        );
        self.quadrature_check(pair)
    }

    /// `∂_q φ₁ = φ₁ʳ ∗ ∂_q φ₁ʳ` by quadrature.
    pub fn grad_phi1_quadrature(&self, x: &[f64]) -> Result<Point> {
        let r = self.support_radius();
        let mut g = [0.0; MAX_DIM];
        for (q, gq) in g.iter_mut().enumerate().take(self.dim) {
            let pair = trapezoid_box_pair(
                self.dim,
                &[0.0; MAX_DIM],
                r,
                self.quadrature.points_per_dim,
                |y| {
                    let mut z = [0.0; MAX_DIM];
                    for p in 0..self.dim {
                        z[p] = x[p] - y[p];
                    }
                    self.phi1r(y) * self.grad_phi1r(&z)[q]
                },
            );
            *gq = self.quadrature_check(pair)?;
        }
        Ok(g)
    }

    /// `φ₁(x)`: closed form for the Gaussian (variance doubles), quadrature
    /// otherwise.
    pub fn phi1(&self, x: &[f64]) -> Result<f64> {
        match self.family {
            KernelFamily::Gaussian => Ok(self.gaussian_phi1(norm2(&x[..self.dim])).0),
            KernelFamily::CompactBump => self.phi1_quadrature(x),
        }
    }

    pub fn grad_phi1(&self, x: &[f64]) -> Result<Point> {
        match self.family {
            KernelFamily::Gaussian => {
                let (_, df) = self.gaussian_phi1(norm2(&x[..self.dim]));
                let mut g = [0.0; MAX_DIM];
                for q in 0..self.dim {
                    g[q] = 2.0 * df * x[q];
                }
                Ok(g)
            }
            KernelFamily::CompactBump => self.grad_phi1_quadrature(x),
        }
    }

    fn gaussian_phi1(&self, r2: f64) -> (f64, f64) {
        let s2 = 2.0 * self.width * self.width;
        let c = (std::f64::consts::TAU * s2).powf(-(self.dim as f64) / 2.0);
        let f = c * (-r2 / (2.0 * s2)).exp();
        (f, -f / (2.0 * s2))
    }

    /// `φ̂₁ʳ(λ)`; real because the kernel is even.
    pub fn fourier_phi1r(&self, lambda: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                (-0.5 * self.width * self.width * norm2(&lambda[..self.dim])).exp()
            }
            KernelFamily::CompactBump => {
                let r = self.width;
                let (full, _) = trapezoid_box_pair(
                    self.dim,
                    &[0.0; MAX_DIM],
                    r,
                    self.quadrature.points_per_dim,
                    |y| {
                        let phase: f64 = (0..self.dim).map(|q| lambda[q] * y[q]).sum();
                        self.phi1r(y) * phase.cos()
                    },
                );
                full
            }
        }
    }

    /// `φ̂₁ = (φ̂₁ʳ)²`.
    pub fn fourier_phi1(&self, lambda: &[f64]) -> f64 {
        let v = self.fourier_phi1r(lambda);
        v * v
    }
}

/// How `φ₁` is evaluated inside a [`ScaledKernel`].
#[derive(Clone, Debug)]
enum Phi1Eval {
    Gaussian,
    /// Cubic Hermite table of the radial profile on `[0, r_max]`.
    Table {
        r_max: f64,
        dr: f64,
        values: Vec<f64>,
        slopes: Vec<f64>,
    },
}

const TABLE_INTERVALS_1D: usize = 1024;
const TABLE_INTERVALS_2D: usize = 256;

/// The `N`-dependent kernels `φ_N` and `φ_Nʳ`.
#[derive(Clone, Debug)]
pub struct ScaledKernel {
    pub spec: MollifierSpec,
    pub n_particles: u64,
    pub beta: f64,
    /// `N^{β/d}`
    scale: f64,
    /// `N^β`
    amplitude: f64,
    phi1: Phi1Eval,
}

impl ScaledKernel {
    pub fn new(spec: MollifierSpec, n_particles: u64, beta: f64) -> Result<Self> {
        if n_particles == 0 {
            return Err(Error::invalid("particles.n", "must be at least 1"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::invalid(
                "kernel.beta",
                "must lie in the open interval (0, 1)",
            ));
        }
        let n = n_particles as f64;
        let amplitude = n.powf(beta);
        let scale = n.powf(beta / spec.dim as f64);
        let phi1 = match spec.family {
            KernelFamily::Gaussian => Phi1Eval::Gaussian,
            KernelFamily::CompactBump => Self::tabulate(&spec)?,
        };
        Ok(Self {
            spec,
            n_particles,
            beta,
            scale,
            amplitude,
            phi1,
        })
    }

    fn tabulate(spec: &MollifierSpec) -> Result<Phi1Eval> {
        let intervals = if spec.dim == 1 {
            TABLE_INTERVALS_1D
        } else {
            TABLE_INTERVALS_2D
        };
        let r_max = spec.phi1_support_radius();
        let dr = r_max / intervals as f64;
        let mut values = Vec::with_capacity(intervals + 1);
        let mut slopes = Vec::with_capacity(intervals + 1);
        for i in 0..=intervals {
            let x = [i as f64 * dr, 0.0];
            values.push(spec.phi1_quadrature(&x)?);
            slopes.push(spec.grad_phi1_quadrature(&x)?[0]);
        }
        Ok(Phi1Eval::Table {
            r_max,
            dr,
            values,
            slopes,
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// `N^{β/d}`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `N^β`.
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Per-axis standard deviation of `φ_N`.
    pub fn effective_width(&self) -> f64 {
        (2.0 * self.spec.axis_variance()).sqrt() / self.scale
    }

    /// Per-axis standard deviation of `φ_Nʳ`.
    pub fn effective_width_r(&self) -> f64 {
        self.spec.axis_variance().sqrt() / self.scale
    }

    /// Radius beyond which `φ_N` (and its gradient) are treated as zero.
    pub fn support_radius(&self) -> f64 {
        self.spec.phi1_support_radius() / self.scale
    }

    pub fn support_radius_r(&self) -> f64 {
        self.spec.support_radius() / self.scale
    }

    /// Minimum-image pair sums need the interaction range below half the box.
    pub fn check_fits_box(&self, period: f64) -> Result<()> {
        let radius = self.support_radius();
        if radius >= 0.5 * period {
            return Err(Error::KernelTooWide {
                radius,
                half_box: 0.5 * period,
            });
        }
        Ok(())
    }

    /// `(φ₁(r), dφ₁/d(r²))` for the profile at `r² = r2`.
    #[inline]
    fn phi1_radial(&self, r2: f64) -> (f64, f64) {
        match &self.phi1 {
            Phi1Eval::Gaussian => self.spec.gaussian_phi1(r2),
            Phi1Eval::Table {
                r_max,
                dr,
                values,
                slopes,
            } => {
                let r = r2.sqrt();
                if r >= *r_max {
                    return (0.0, 0.0);
                }
                let t = r / dr;
                let i = (t as usize).min(values.len() - 2);
                let s = t - i as f64;
                let (y0, y1) = (values[i], values[i + 1]);
                let (m0, m1) = (slopes[i] * dr, slopes[i + 1] * dr);
                let s2 = s * s;
                let s3 = s2 * s;
                let value = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
                    + (s3 - 2.0 * s2 + s) * m0
                    + (-2.0 * s3 + 3.0 * s2) * y1
                    + (s3 - s2) * m1;
                let dvalue = ((6.0 * s2 - 6.0 * s) * y0
                    + (3.0 * s2 - 4.0 * s + 1.0) * m0
                    + (-6.0 * s2 + 6.0 * s) * y1
                    + (3.0 * s2 - 2.0 * s) * m1)
                    / dr;
                // d/d(r²) = (d/dr) / 2r; the profile is flat at the origin
                let d_r2 = if r > 0.0 { dvalue / (2.0 * r) } else { 0.0 };
                (value, d_r2)
            }
        }
    }

    /// `φ₁` as evaluated by this kernel (closed form or table).
    pub fn phi1(&self, x: &[f64]) -> f64 {
        self.phi1_radial(norm2(&x[..self.dim()])).0
    }

    pub fn phi_n(&self, x: &[f64]) -> f64 {
        let mut y = [0.0; MAX_DIM];
        for q in 0..self.dim() {
            y[q] = self.scale * x[q];
        }
        self.amplitude * self.phi1(&y)
    }

    /// `∇φ_N(x) = N^{β(1+1/d)} ∇φ₁(N^{β/d} x)`.
    #[inline]
    pub fn grad_phi_n(&self, x: &[f64]) -> Point {
        let d = self.dim();
        let mut r2 = 0.0;
        for q in 0..d {
            let y = self.scale * x[q];
            r2 += y * y;
        }
        let (_, df) = self.phi1_radial(r2);
        let c = 2.0 * df * self.amplitude * self.scale;
        let mut g = [0.0; MAX_DIM];
        for q in 0..d {
            g[q] = c * self.scale * x[q];
        }
        g
    }

    pub fn phi_nr(&self, x: &[f64]) -> f64 {
        let mut y = [0.0; MAX_DIM];
        for q in 0..self.dim() {
            y[q] = self.scale * x[q];
        }
        self.amplitude * self.spec.phi1r(&y)
    }

    pub fn grad_phi_nr(&self, x: &[f64]) -> Point {
        let mut y = [0.0; MAX_DIM];
        for q in 0..self.dim() {
            y[q] = self.scale * x[q];
        }
        let g1 = self.spec.grad_phi1r(&y);
        let mut g = [0.0; MAX_DIM];
        for q in 0..self.dim() {
            g[q] = self.amplitude * self.scale * g1[q];
        }
        g
    }

    /// Mass of `φ_Nʳ` outside the ball of radius `r`.
    pub fn mass_outside_r(&self, r: f64) -> f64 {
        let r1 = r * self.scale;
        match self.spec.family {
            KernelFamily::Gaussian => {
                let s = self.spec.width;
                if self.dim() == 1 {
                    libm::erfc(r1 / (s * std::f64::consts::SQRT_2))
                } else {
                    (-r1 * r1 / (2.0 * s * s)).exp()
                }
            }
            KernelFamily::CompactBump => {
                if r1 >= self.spec.width {
                    0.0
                } else {
                    // only reached for kernels wider than the box
                    let inside = trapezoid_box_pair(
                        self.dim(),
                        &[0.0; MAX_DIM],
                        r1,
                        self.spec.quadrature.points_per_dim,
                        |y| {
                            if norm2(y) <= r1 * r1 {
                                self.spec.phi1r(y)
                            } else {
                                0.0
                            }
                        },
                    )
                    .0;
                    (1.0 - inside).max(0.0)
                }
            }
        }
    }

    pub fn view_r(&self) -> KernelView<'_> {
        KernelView {
            kernel: self,
            which: KernelFn::PhiNr,
        }
    }

    pub fn view(&self) -> KernelView<'_> {
        KernelView {
            kernel: self,
            which: KernelFn::PhiN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFn {
    PhiN,
    PhiNr,
}

/// Borrowed view of one of the scaled kernels, usable wherever a
/// [`Kernel`] is expected.
#[derive(Clone, Copy, Debug)]
pub struct KernelView<'a> {
    kernel: &'a ScaledKernel,
    which: KernelFn,
}

impl Kernel for KernelView<'_> {
    fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self.which {
            KernelFn::PhiN => self.kernel.phi_n(x),
            KernelFn::PhiNr => self.kernel.phi_nr(x),
        }
    }

    fn mass_outside(&self, radius: f64) -> f64 {
        match self.which {
            KernelFn::PhiNr => self.kernel.mass_outside_r(radius),
            KernelFn::PhiN => match self.kernel.spec.family {
                KernelFamily::Gaussian => {
                    let s = self.kernel.effective_width();
                    if self.kernel.dim() == 1 {
                        libm::erfc(radius / (s * std::f64::consts::SQRT_2))
                    } else {
                        (-radius * radius / (2.0 * s * s)).exp()
                    }
                }
                KernelFamily::CompactBump => {
                    if radius >= self.kernel.support_radius() {
                        0.0
                    } else {
                        1.0
                    }
                }
            },
        }
    }

    fn support_radius(&self) -> f64 {
        match self.which {
            KernelFn::PhiN => self.kernel.support_radius(),
            KernelFn::PhiNr => self.kernel.support_radius_r(),
        }
    }
}

/// `L = ⌊(d+2)/2⌋`.
pub fn taylor_order(dim: usize) -> usize {
    (dim + 2) / 2
}

/// Multi-index `α ∈ ℕ^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct MultiIndex {
    pub dim: usize,
    pub orders: [u32; MAX_DIM],
}

impl MultiIndex {
    pub fn order(&self) -> u32 {
        self.orders[..self.dim].iter().sum()
    }

    pub fn factorial(&self) -> f64 {
        self.orders[..self.dim]
            .iter()
            .map(|&a| (1..=a).map(f64::from).product::<f64>())
            .product()
    }

    pub fn monomial(&self, x: &[f64]) -> f64 {
        (0..self.dim)
            .map(|q| x[q].powi(self.orders[q] as i32))
            .product()
    }

    /// All multi-indices with `lo <= |α| <= hi`, ordered by total order.
    pub fn range(dim: usize, lo: u32, hi: u32) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for total in lo..=hi {
            if dim == 1 {
                out.push(MultiIndex {
                    dim,
                    orders: [total, 0],
                });
            } else {
                for a0 in (0..=total).rev() {
                    out.push(MultiIndex {
                        dim,
                        orders: [a0, total - a0],
                    });
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.orders[..self.dim]
            .iter()
            .map(|a| a.to_string())
            .collect();
        format!("({})", parts.join(","))
    }
}

/// The Taylor remainder kernels `U_{1;α}^q(x) = (-1)^{1+|α|} x^α/α! ∂_q φ₁ʳ(x)`.
#[derive(Clone, Debug)]
pub struct TaylorKernelFamily {
    pub spec: MollifierSpec,
    pub order_l: usize,
}

impl TaylorKernelFamily {
    pub fn new(spec: MollifierSpec) -> Self {
        let order_l = taylor_order(spec.dim);
        Self { spec, order_l }
    }

    pub fn u(&self, alpha: &MultiIndex, q: usize, x: &[f64]) -> f64 {
        let sign = if (1 + alpha.order()).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        sign * alpha.monomial(x) / alpha.factorial() * self.spec.grad_phi1r(x)[q]
    }

    /// `Û_{1;α}^q(λ)` by quadrature over the truncated support.
    pub fn fourier_u(&self, alpha: &MultiIndex, q: usize, lambda: &[f64]) -> Complex64 {
        let d = self.spec.dim;
        let r = self.spec.support_radius();
        let n = self.spec.quadrature.points_per_dim;
        let re = trapezoid_box_pair(d, &[0.0; MAX_DIM], r, n, |y| {
            let phase: f64 = (0..d).map(|p| lambda[p] * y[p]).sum();
            self.u(alpha, q, y) * phase.cos()
        })
        .0;
        let im = trapezoid_box_pair(d, &[0.0; MAX_DIM], r, n, |y| {
            let phase: f64 = (0..d).map(|p| lambda[p] * y[p]).sum();
            -self.u(alpha, q, y) * phase.sin()
        })
        .0;
        Complex64::new(re, im)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Bounded,
    ExceedsCeiling,
    /// The sup over the outer half of the window is more than twice the sup
    /// over the inner half: the ratio keeps growing at the window edge.
    GrowthTrend,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Bounded => "bounded",
            Verdict::ExceedsCeiling => "unbounded (exceeds ceiling)",
            Verdict::GrowthTrend => "unbounded over window (growth trend)",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisRow {
    pub q: usize,
    pub alpha: MultiIndex,
    pub sup: f64,
    pub argmax: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisSettings {
    pub samples: usize,
    pub ceiling: f64,
    /// Transform magnitudes below this are treated as degenerate divisors.
    pub underflow: f64,
}

impl Default for HypothesisSettings {
    fn default() -> Self {
        Self {
            samples: 401,
            ceiling: 1e6,
            underflow: 1e-12,
        }
    }
}

/// Sampled suprema for the three kernel hypotheses:
///
/// * `decay_bound`: `sup_{1≤|x|≤R} φ₁ʳ(x)(1+|x|^{d+2})`
/// * `transform_ratio`: `sup_{|λ|≤Λ} |Û_{1;α}^q(λ)| / |φ̂₁ʳ(λ)|`, `1 ≤ |α| ≤ L`
/// * `remainder_decay`: `sup_{|x|≤R} |U_{1;α}^q(x)| (1+|x|^{d+1})^{1/2}`, `|α| = L+1`
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    pub family: KernelFamily,
    pub width: f64,
    pub dim: usize,
    pub order_l: usize,
    pub freq_window: f64,
    pub space_window: f64,
    pub ceiling: f64,
    pub decay_bound: HypothesisRow,
    pub transform_ratio: Vec<HypothesisRow>,
    pub remainder_decay: Vec<HypothesisRow>,
}

fn verdict_for(inner: f64, outer: f64, ceiling: f64) -> Verdict {
    let sup = inner.max(outer);
    if !sup.is_finite() || sup > ceiling {
        Verdict::ExceedsCeiling
    } else if outer > 2.0 * inner {
        Verdict::GrowthTrend
    } else {
        Verdict::Bounded
    }
}

/// Sample points along a ray for radial quantities, or over a square lattice
/// clipped to the disk in 2-D. Returned as `(point, |point|)`.
fn window_points(dim: usize, lo: f64, hi: f64, samples: usize) -> Vec<(Point, f64)> {
    let samples = samples.max(3);
    if dim == 1 {
        (0..samples)
            .map(|i| {
                let r = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
                ([r, 0.0], r)
            })
            .collect()
    } else {
        let side = ((samples as f64).sqrt().ceil() as usize).max(3) | 1;
        let mut pts = Vec::new();
        for i in 0..side {
            for j in 0..side {
                let x = -hi + 2.0 * hi * i as f64 / (side - 1) as f64;
                let y = -hi + 2.0 * hi * j as f64 / (side - 1) as f64;
                let r = (x * x + y * y).sqrt();
                if r >= lo && r <= hi {
                    pts.push(([x, y], r));
                }
            }
        }
        pts
    }
}

fn sup_split(values: &[(f64, f64)], split: f64) -> (f64, f64, f64) {
    let (mut inner, mut outer, mut argmax, mut best) = (0.0f64, 0.0f64, 0.0, f64::NEG_INFINITY);
    for &(r, v) in values {
        if r <= split {
            inner = inner.max(v);
        } else {
            outer = outer.max(v);
        }
        if v > best {
            best = v;
            argmax = r;
        }
    }
    (inner, outer, argmax)
}

pub fn hypothesis_report(
    family: &TaylorKernelFamily,
    freq_window: f64,
    space_window: f64,
    settings: &HypothesisSettings,
) -> Result<HypothesisReport> {
    if !(freq_window > 0.0 && space_window > 0.0) {
        return Err(Error::invalid(
            "report.freq_window",
            "windows must be positive",
        ));
    }
    let spec = &family.spec;
    let d = spec.dim;
    let l = family.order_l as u32;

    // decay bound, radial so a ray suffices
    let lo = 1.0f64.min(space_window);
    let decay: Vec<(f64, f64)> = window_points(1, lo, space_window, settings.samples)
        .into_iter()
        .map(|(_, r)| (r, spec.phi1r(&[r, 0.0]) * (1.0 + r.powi(d as i32 + 2))))
        .collect();
    let (inner, outer, argmax) = sup_split(&decay, 0.5 * (lo + space_window));
    let decay_bound = HypothesisRow {
        q: 0,
        alpha: MultiIndex {
            dim: d,
            orders: [0; MAX_DIM],
        },
        sup: inner.max(outer),
        argmax,
        verdict: verdict_for(inner, outer, settings.ceiling),
    };

    // transform ratio
    let freq_points = window_points(d, 0.0, freq_window, settings.samples);
    let mut transforms = Vec::with_capacity(freq_points.len());
    for (lambda, _) in &freq_points {
        let phi = spec.fourier_phi1r(lambda).abs();
        if !(phi > settings.underflow) {
            return Err(Error::DivisionDegenerate {
                lambda: lambda[..d].to_vec(),
                value: phi,
            });
        }
        transforms.push(phi);
    }
    let mut transform_ratio = Vec::new();
    for q in 0..d {
        for alpha in MultiIndex::range(d, 1, l) {
            let values: Vec<(f64, f64)> = freq_points
                .iter()
                .zip(&transforms)
                .map(|((lambda, r), phi)| (*r, family.fourier_u(&alpha, q, lambda).norm() / phi))
                .collect();
            let (inner, outer, argmax) = sup_split(&values, 0.5 * freq_window);
            transform_ratio.push(HypothesisRow {
                q,
                alpha,
                sup: inner.max(outer),
                argmax,
                verdict: verdict_for(inner, outer, settings.ceiling),
            });
        }
    }

    // remainder decay
    let space_points = window_points(d, 0.0, space_window, settings.samples);
    let mut remainder_decay = Vec::new();
    for q in 0..d {
        for alpha in MultiIndex::range(d, l + 1, l + 1) {
            let values: Vec<(f64, f64)> = space_points
                .iter()
                .map(|(x, r)| {
                    (
                        *r,
                        family.u(&alpha, q, x).abs() * (1.0 + r.powi(d as i32 + 1)).sqrt(),
                    )
                })
                .collect();
            let (inner, outer, argmax) = sup_split(&values, 0.5 * space_window);
            remainder_decay.push(HypothesisRow {
                q,
                alpha,
                sup: inner.max(outer),
                argmax,
                verdict: verdict_for(inner, outer, settings.ceiling),
            });
        }
    }

    Ok(HypothesisReport {
        family: spec.family,
        width: spec.width,
        dim: d,
        order_l: family.order_l,
        freq_window,
        space_window,
        ceiling: settings.ceiling,
        decay_bound,
        transform_ratio,
        remainder_decay,
    })
}

impl HypothesisReport {
    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(": ");
            s.push_str(&v);
            s.push('\n');
        };
        line("family", self.family.name().to_string());
        line("width", format!("{}", self.width));
        line("dim", format!("{}", self.dim));
        line("order_L", format!("{}", self.order_l));
        line("taylor_orders", format!("0..={}", self.order_l));
        line("remainder_order", format!("{}", self.order_l + 1));
        line("freq_window", format!("{}", self.freq_window));
        line("space_window", format!("{}", self.space_window));
        line("ceiling", format!("{:e}", self.ceiling));
        line("decay_bound.sup", format!("{:e}", self.decay_bound.sup));
        line(
            "decay_bound.argmax_r",
            format!("{}", self.decay_bound.argmax),
        );
        line(
            "decay_bound.verdict",
            self.decay_bound.verdict.name().to_string(),
        );
        for row in &self.transform_ratio {
            let key = format!("transform_ratio.q{}.alpha{}", row.q + 1, row.alpha.label());
            line(&format!("{key}.sup"), format!("{:e}", row.sup));
            line(&format!("{key}.argmax_lambda"), format!("{}", row.argmax));
            line(&format!("{key}.verdict"), row.verdict.name().to_string());
        }
        for row in &self.remainder_decay {
            let key = format!("remainder_decay.q{}.alpha{}", row.q + 1, row.alpha.label());
            line(&format!("{key}.sup"), format!("{:e}", row.sup));
            line(&format!("{key}.argmax_r"), format!("{}", row.argmax));
            line(&format!("{key}.verdict"), row.verdict.name().to_string());
        }
        s
    }
}

/// `sup_probes |f - f ∗ φ_Nʳ| / (N^{-β/d} ‖∇f‖_∞)`, convolution by trapezoid
/// quadrature over the truncated support of `φ_Nʳ`. `probes` is a flat list
/// of points.
pub fn mollification_error_ratio(
    kernel: &ScaledKernel,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    grad_sup: f64,
    probes: &[f64],
) -> f64 {
    assert!(grad_sup > 0.0, "gradient bound must be positive");
    let d = kernel.dim();
    let radius = kernel.support_radius_r();
    let n = kernel.spec.quadrature.points_per_dim;
    let mut worst = 0.0f64;
    for x in probes.chunks_exact(d) {
        let (conv, _) = trapezoid_box_pair(d, &[0.0; MAX_DIM], radius, n, |y| {
            let mut z = [0.0; MAX_DIM];
            for q in 0..d {
                z[q] = x[q] - y[q];
            }
            f(&z[..d]) * kernel.phi_nr(y)
        });
        worst = worst.max((f(x) - conv).abs());
    }
    let rate = (kernel.n_particles as f64).powf(-kernel.beta / d as f64);
    worst / (rate * grad_sup)
}
