use std::f64::consts::{PI, TAU};

use meanfield_core::config::RunConfig;
use meanfield_core::experiment::{mollified_density, CoupledRun, DensityMethod};
use meanfield_core::field::{EmpiricalMeasure, PeriodicGrid};
use meanfield_core::io;
use meanfield_core::mollifier::{KernelFamily, MollifierSpec, ScaledKernel};
use meanfield_core::particle::{
    force_direct, force_particle_mesh, init_well_prepared, InitScheme, MeshSettings,
};
use meanfield_core::profiles::{BumpDensity, SineVelocity};
use meanfield_core::rng::CounterRng;

fn bump() -> BumpDensity {
    BumpDensity::new(1, TAU, 1.0, 0.2, [PI, 0.0], 0.5).unwrap()
}

fn still() -> SineVelocity {
    SineVelocity {
        period: TAU,
        offset: [0.0; 2],
        amplitude: [0.0; 2],
        wavenumber: 1,
    }
}

#[test]
fn mesh_force_refines_with_grid() {
    let n = 1024;
    let state = init_well_prepared(
        &bump(),
        &still(),
        1,
        TAU,
        n,
        InitScheme::Iid,
        &CounterRng::new(3),
        0,
    )
    .unwrap();
    let kernel = ScaledKernel::new(
        MollifierSpec::new(KernelFamily::Gaussian, 2.5, 1).unwrap(),
        n as u64,
        0.5,
    )
    .unwrap();
    let direct = force_direct(&state, &kernel);
    let devs: Vec<f64> = [256, 512, 1024]
        .iter()
        .map(|&m| {
            let s = MeshSettings {
                points: Some(m),
                ..MeshSettings::default()
            };
            let mesh = force_particle_mesh(&state, &kernel, s).unwrap();
            direct
                .iter()
                .zip(&mesh)
                .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
        })
        .collect();
    for w in devs.windows(2) {
        assert!(w[1] <= 0.5 * w[0], "{devs:?}");
    }
}

#[test]
fn deposit_convolve_matches_direct_sum() {
    let n = 64;
    let grid = PeriodicGrid::new(1, 256, TAU).unwrap();
    let state = init_well_prepared(
        &bump(),
        &still(),
        1,
        TAU,
        n,
        InitScheme::Iid,
        &CounterRng::new(5),
        0,
    )
    .unwrap();
    let kernel = ScaledKernel::new(
        MollifierSpec::new(KernelFamily::Gaussian, 1.0, 1).unwrap(),
        n as u64,
        0.5,
    )
    .unwrap();
    let measure = state.empirical();
    let direct = mollified_density(&measure, &grid, &kernel, DensityMethod::Direct);
    let mesh = mollified_density(&measure, &grid, &kernel, DensityMethod::Mesh);

    // oracle: plain sum over particles and periodic images
    let sigma = 1.0 / kernel.scale();
    let norm = 1.0 / (TAU.sqrt() * sigma);
    for (i, &v) in direct.values.iter().enumerate().step_by(17) {
        let x = i as f64 * grid.spacing();
        let mut s = 0.0;
        for &p in &state.positions {
            for image in -2..=2 {
                let r = x - p - image as f64 * TAU;
                s += norm * (-0.5 * r * r / (sigma * sigma)).exp();
            }
        }
        s /= n as f64;
        assert!((v - s).abs() < 1e-12 * s.max(1.0), "node {i}: {v} vs {s}");
    }
    // linear deposit smooths by one cell: second-order in h / σ
    let h = grid.spacing();
    let bound = direct.max_abs() * (h / sigma).powi(2);
    let dev = direct.zip_with(&mesh, |a, b| a - b).max_abs();
    assert!(dev < bound, "{dev} vs {bound}");
    assert!((mesh.integral() - 1.0).abs() < 1e-12);
}

#[test]
fn snapshot_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let state = init_well_prepared(
        &bump(),
        &still(),
        1,
        TAU,
        32,
        InitScheme::Stratified,
        &CounterRng::new(1),
        0,
    )
    .unwrap();
    let path = dir.path().join("p.bin");
    io::write_particle_snapshot(&path, &state).unwrap();
    assert_eq!(io::read_particle_snapshot(&path).unwrap(), state);

    let grid = PeriodicGrid::new(1, 64, TAU).unwrap();
    let field = mollified_density(
        &EmpiricalMeasure::uniform(state.positions.clone(), 1),
        &grid,
        &ScaledKernel::new(
            MollifierSpec::new(KernelFamily::Gaussian, 1.0, 1).unwrap(),
            32,
            0.5,
        )
        .unwrap(),
        DensityMethod::Direct,
    );
    let fpath = dir.path().join("f.bin");
    io::write_grid_field(&fpath, &field).unwrap();
    assert_eq!(io::read_grid_field(&fpath).unwrap(), field);
}

#[test]
fn config_drives_a_short_coupled_run() {
    let text = r#"
master_seed = 9
[kernel]
width = 1.0
[integrator]
t_final = 0.01
[euler]
interpolation = "spectral"
"#;
    let cfg = RunConfig::from_toml_str(text).unwrap();
    let sc = cfg.scenario().unwrap();
    let rng = CounterRng::new(cfg.master_seed);
    let mut a = CoupledRun::new(&sc, 256, &rng, 0).unwrap();
    let mut b = CoupledRun::new(&sc, 256, &rng, 0).unwrap();
    let ta = a.run_to_end(1).unwrap();
    let tb = b.run_to_end(1).unwrap();
    assert_eq!(io::q_records_csv(&ta.q), io::q_records_csv(&tb.q));
    assert_eq!(ta.q.len(), sc.steps() + 1);
    let first = ta.q[0];
    let last = *ta.q.last().unwrap();
    assert!(first.q_total.is_finite() && last.q_total.is_finite());
    assert!((last.time - 0.01).abs() < 1e-12);
    let mass0 = ta.mass[0].mass;
    assert!(ta
        .mass
        .iter()
        .all(|m| ((m.mass - mass0) / mass0).abs() < 1e-12));
}
