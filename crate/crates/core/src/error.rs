use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quadrature did not converge (residual {residual:.3e} > {tolerance:.1e})")]
    QuadratureNotConverged { residual: f64, tolerance: f64 },

    #[error("kernel transform underflows at frequency {lambda:?} (|transform| = {value:.3e})")]
    DivisionDegenerate { lambda: Vec<f64>, value: f64 },

    #[error("sobolev index alpha = {alpha} must exceed {min} for measure distances")]
    AlphaTooSmall { alpha: f64, min: f64 },

    #[error("grid spacing {spacing:.4e} does not resolve kernel width {width:.4e} (need h <= width/{ratio})")]
    GridTooCoarse {
        spacing: f64,
        width: f64,
        ratio: f64,
    },

    #[error("kernel support radius {radius:.4e} is not below half the box side {half_box:.4e}")]
    KernelTooWide { radius: f64, half_box: f64 },

    #[error("non-finite state at step {step} (seed {seed})")]
    NonFiniteState { seed: u64, step: u64 },

    #[error("density is not positive (min {min:.4e})")]
    NonPositiveDensity { min: f64 },

    #[error("initial density has mass {mass:.10}, expected 1")]
    DensityNotNormalizable { mass: f64 },

    #[error("degenerate log-log fit: {0}")]
    DegenerateFit(String),

    #[error("invalid value for `{key}`: {constraint}")]
    InvalidConfig { key: String, constraint: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("step {step} (seed {seed}): {source}")]
    AtStep {
        seed: u64,
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(key: &str, constraint: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.to_string(),
            constraint: constraint.into(),
        }
    }

    /// True for errors caused by user input rather than by the simulation,
    /// including parameter combinations rejected before the first step.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidConfig { .. }
            | Error::ConfigParse(_)
            | Error::GridTooCoarse { .. }
            | Error::KernelTooWide { .. }
            | Error::AlphaTooSmall { .. } => true,
            Error::AtStep { source, .. } => source.is_config_error(),
            _ => false,
        }
    }

    /// Attach the step index and seed unless the error already carries them.
    pub fn at_step(self, seed: u64, step: u64) -> Self {
        match self {
            e @ (Error::NonFiniteState { .. } | Error::AtStep { .. }) => e,
            e => Error::AtStep {
                seed,
                step,
                source: Box::new(e),
            },
        }
    }
}
