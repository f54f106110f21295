use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn meanfield(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meanfield"))
        .current_dir(dir)
        .env_remove("OUTPUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

const SMALL: &str = "
[kernel]
width = 1.0
[particles]
n = 256
[integrator]
t_final = 0.01
[study]
n_values = [128, 256, 512]
samples = 2
[output]
record_every = 2
";

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

#[test]
fn self_test_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = meanfield(dir.path(), &["self-test"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failed"));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = setup("[integrator]\ndt = -0.5\n");
    let out = meanfield(dir.path(), &["run-coupled", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("integrator.dt"));

    fs::write(
        dir.path().join("run.toml"),
        "[integrator]\nstep_size = 0.1\n",
    )
    .unwrap();
    let out = meanfield(dir.path(), &["run-coupled", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step_size"));

    let out = meanfield(dir.path(), &["run-coupled", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));
}

#[test]
fn coupled_run_is_reproducible_from_its_manifest() {
    let dir = setup(SMALL);
    let out = meanfield(
        dir.path(),
        &[
            "run-coupled",
            "--config",
            "run.toml",
            "--out",
            "a",
            "--seed",
            "7",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = dir.path().join("a");
    for f in [
        "manifest.toml",
        "q_records.csv",
        "mass_trace.csv",
        "snapshots/particles_000000.bin",
        "snapshots/density_000010.bin",
    ] {
        assert!(a.join(f).exists(), "{f}");
    }
    let manifest = fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("# seed: 7"));
    assert!(manifest.contains("# stopping_record: none"));
    assert!(manifest.contains("master_seed = 7"));
    let q = fs::read_to_string(a.join("q_records.csv")).unwrap();
    assert!(q.starts_with("time,kinetic_term,density_term,q_total,stopped\n"));
    assert_eq!(q.lines().count(), 1 + 6);

    // the manifest is itself a config; only output_dir is overridden
    let out = meanfield(
        dir.path(),
        &["run-coupled", "--config", "a/manifest.toml", "--out", "b"],
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        q,
        fs::read_to_string(dir.path().join("b/q_records.csv")).unwrap()
    );
}

#[test]
fn output_dir_environment_override() {
    let dir = setup(SMALL);
    let status = Command::new(env!("CARGO_BIN_EXE_meanfield"))
        .current_dir(dir.path())
        .env("OUTPUT_DIR", "from_env")
        .args(["run-coupled", "--config", "run.toml"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("from_env/q_records.csv").exists());
}

#[test]
fn rate_study_is_thread_count_independent() {
    let dir = setup(SMALL);
    let one = meanfield(
        dir.path(),
        &[
            "rate-study",
            "--config",
            "run.toml",
            "--out",
            "t1",
            "--threads",
            "1",
        ],
    );
    let three = meanfield(
        dir.path(),
        &[
            "rate-study",
            "--config",
            "run.toml",
            "--out",
            "t3",
            "--threads",
            "3",
        ],
    );
    assert_eq!(
        one.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&one.stderr)
    );
    assert_eq!(three.status.code(), Some(0));
    for f in [
        "rate.csv",
        "rate_detail.csv",
        "rate_samples.csv",
        "rate_summary.txt",
    ] {
        let a = fs::read(dir.path().join("t1").join(f)).unwrap();
        let b = fs::read(dir.path().join("t3").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let csv = fs::read_to_string(dir.path().join("t1/rate.csv")).unwrap();
    assert!(csv.starts_with("N,mean_q,se_q,mean_dist_S,mean_dist_V,censored_count\n"));
    let stdout = String::from_utf8_lossy(&one.stdout);
    assert!(stdout.contains("target_slope: -0.5"));
    assert!(
        stdout.lines().any(|l| l.starts_with("slope.q: -")),
        "{stdout}"
    );
}

#[test]
fn single_n_study_reports_degenerate_fit() {
    let dir = setup(&SMALL.replace("n_values = [128, 256, 512]", "n_values = [256]"));
    let out = meanfield(
        dir.path(),
        &["rate-study", "--config", "run.toml", "--out", "s"],
    );
    assert_eq!(out.status.code(), Some(0));
    let summary = fs::read_to_string(dir.path().join("s/rate_summary.txt")).unwrap();
    assert!(summary.contains("slope.q: unavailable"));
    let csv = fs::read_to_string(dir.path().join("s/rate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn kernel_report_lists_orders_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = meanfield(dir.path(), &["kernel-report", "--out", "k"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = fs::read_to_string(dir.path().join("k/hypothesis_report.txt")).unwrap();
    assert!(report.contains("order_L: 1\n"));
    assert!(report.contains("taylor_orders: 0..=1\n"));
    assert!(report.contains("remainder_order: 2\n"));
    assert!(report.contains("transform_ratio.q1.alpha(1).sup"));
    let sweep = fs::read_to_string(dir.path().join("k/mollification_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 11);
}
