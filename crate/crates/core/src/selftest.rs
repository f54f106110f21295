//! Quick closed-form checks run by `meanfield self-test`.
//!
//! Each check compares a library result against a value computed here by an
//! independent route. Everything finishes in well under a second.

use std::f64::consts::{PI, TAU};

use crate::euler::{EulerConfig, EulerSolver, FluidState};
use crate::field::{
    neg_sobolev_distance, EmpiricalMeasure, GridField, NegativeIndex, PeriodicGrid,
};
use crate::mollifier::{KernelFamily, MollifierSpec, ScaledKernel};
use crate::particle::{
    force_direct, force_particle_mesh, init_well_prepared, ForceMethod, InitScheme, MeshSettings,
    NoisePath, ParticleIntegrator, ParticleState,
};
use crate::profiles::{BumpDensity, SigmaField, SineVelocity};
use crate::rng::CounterRng;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn compare(name: &'static str, got: f64, want: f64, tol: f64) -> Check {
    let err = (got - want).abs();
    Check {
        name,
        passed: err <= tol,
        detail: format!("got {got:.15e}, expected {want:.15e}, |diff| {err:.2e} (tol {tol:.0e})"),
    }
}

fn gaussian(width: f64) -> Result<MollifierSpec> {
    MollifierSpec::new(KernelFamily::Gaussian, width, 1)
}

fn kernel_values() -> Result<Vec<Check>> {
    let spec = gaussian(1.0)?;
    let scaled = ScaledKernel::new(spec.clone(), 16, 0.5)?;
    Ok(vec![
        compare(
            "base kernel at 0",
            spec.phi1r(&[0.0]),
            1.0 / TAU.sqrt(),
            1e-15,
        ),
        compare(
            "base kernel at 1",
            spec.phi1r(&[1.0]),
            (-0.5f64).exp() / TAU.sqrt(),
            1e-15,
        ),
        compare(
            "potential at 0",
            spec.phi1(&[0.0])?,
            1.0 / (4.0 * PI).sqrt(),
            1e-12,
        ),
        compare(
            "scaled potential at 0 (N = 16)",
            scaled.phi_n(&[0.0]),
            4.0 / (4.0 * PI).sqrt(),
            1e-12,
        ),
        compare(
            "base kernel transform at 1",
            spec.fourier_phi1r(&[1.0]),
            (-0.5f64).exp(),
            1e-15,
        ),
    ])
}

fn pair_force() -> Result<Check> {
    let kernel = ScaledKernel::new(gaussian(1.0)?, 2, 0.5)?;
    let r = 0.7;
    let state = ParticleState::new(1, 4.0 * TAU, vec![3.0, 3.0 + r], vec![0.0; 2]);
    let f = force_direct(&state, &kernel);
    // φ_2(x) = √2 g(√2 x) with g the centred normal density of variance 2
    let a = 2f64.sqrt();
    let grad =
        |x: f64| a * a * (-(a * x) / 2.0) * (-(a * x).powi(2) / 4.0).exp() / (2.0 * TAU).sqrt();
    let mut c = compare("pair force", f[0], -0.5 * grad(-r), 1e-15);
    c.passed &= f[0] == -f[1];
    Ok(c)
}

fn dirac_distance() -> Result<Check> {
    let x0 = 1.234;
    let cutoff = 32;
    let got = neg_sobolev_distance(
        &EmpiricalMeasure::uniform(vec![x0], 1),
        None,
        TAU,
        NegativeIndex::summable(1.0, 1)?,
        cutoff,
    )?
    .distance;
    // every Fourier coefficient of the Dirac mass has modulus 1/Λ
    let sum: f64 = (-(cutoff as i64)..=cutoff as i64)
        .map(|k| 1.0 / (1.0 + (k * k) as f64))
        .sum();
    Ok(compare(
        "Dirac negative-Sobolev distance",
        got,
        (sum / TAU).sqrt(),
        1e-12,
    ))
}

fn noise_exactness() -> Result<Check> {
    let sigma = 0.3;
    let dt = 1.0 / 256.0;
    let path = NoisePath::generate(&CounterRng::new(1), 0, 256, 1, dt);
    let integ = ParticleIntegrator::new(
        ScaledKernel::new(gaussian(1.0)?, 1, 0.5)?,
        SigmaField::Constant([sigma, 0.0]),
        dt,
        ForceMethod::Direct,
        8.0 * TAU,
        1,
    )?
    .without_interaction();
    let mut p = ParticleState::new(1, 8.0 * TAU, vec![1.0], vec![1.0]);
    for n in 0..path.steps() {
        integ.step(&mut p, path.increment(n))?;
    }
    let b: f64 = path.increments.iter().sum();
    let want = (sigma * b).exp();
    Ok(compare(
        "exact noise factor",
        p.velocities[0] / want,
        1.0,
        1e-12,
    ))
}

fn fluid_steady_state() -> Result<Check> {
    let grid = PeriodicGrid::new(1, 64, TAU)?;
    let solver = EulerSolver::new(
        grid.clone(),
        EulerConfig::default(),
        SigmaField::Constant([0.3, 0.0]),
    )?;
    let mut s = FluidState::new(
        GridField::constant(&grid, 1.0 / TAU),
        vec![GridField::constant(&grid, 0.5)],
    )?;
    let path = NoisePath::generate(&CounterRng::new(1), 0, 100, 1, solver.config.dt);
    for n in 0..100 {
        solver.step(&mut s, path.increment(n))?;
    }
    let b: f64 = path.increments.iter().sum();
    let want = 0.5 * (0.3 * b).exp();
    let err = s.vel[0]
        .values
        .iter()
        .fold(0.0f64, |a, v| a.max((v - want).abs()));
    let drift = (s.mass() - 1.0).abs();
    Ok(Check {
        name: "constant fluid state",
        passed: err < 1e-12 && drift < 1e-12,
        detail: format!("velocity deviation from 0.5 exp(σB) {err:.2e}, mass drift {drift:.2e}"),
    })
}

fn force_paths() -> Result<Check> {
    let n = 1024;
    let rho = BumpDensity::new(1, TAU, 1.0, 0.2, [PI, 0.0], 0.5)?;
    let vel = SineVelocity {
        period: TAU,
        offset: [0.0; 2],
        amplitude: [0.0; 2],
        wavenumber: 1,
    };
    let state = init_well_prepared(
        &rho,
        &vel,
        1,
        TAU,
        n,
        InitScheme::Stratified,
        &CounterRng::new(1),
        0,
    )?;
    let kernel = ScaledKernel::new(gaussian(6.0)?, n as u64, 0.5)?;
    let direct = force_direct(&state, &kernel);
    let mesh = force_particle_mesh(
        &state,
        &kernel,
        MeshSettings {
            points: Some(256),
            ..MeshSettings::default()
        },
    )?;
    let max_f = direct.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let dev = direct
        .iter()
        .zip(&mesh)
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    Ok(Check {
        name: "direct vs particle-mesh force",
        passed: dev < 1e-3 * max_f,
        detail: format!("max deviation / max|F| = {:.3e} (tol 1e-3)", dev / max_f),
    })
}

/// Runs every check. Library errors are reported as failed checks.
pub fn run_self_test() -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, r: Result<Vec<Check>>| match r {
        Ok(cs) => out.extend(cs),
        Err(e) => out.push(Check {
            name,
            passed: false,
            detail: e.to_string(),
        }),
    };
    push("kernel values", kernel_values());
    push("pair force", pair_force().map(|c| vec![c]));
    push(
        "Dirac negative-Sobolev distance",
        dirac_distance().map(|c| vec![c]),
    );
    push("exact noise factor", noise_exactness().map(|c| vec![c]));
    push(
        "constant fluid state",
        fluid_steady_state().map(|c| vec![c]),
    );
    push(
        "direct vs particle-mesh force",
        force_paths().map(|c| vec![c]),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_self_test() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
