use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use meanfield_core::config::RunConfig;
use meanfield_core::experiment::{monte_carlo_rate, CoupledRun, FitOutcome, RunTrace};
use meanfield_core::io;
use meanfield_core::mollifier::{
    hypothesis_report, mollification_error_ratio, ScaledKernel, TaylorKernelFamily,
};
use meanfield_core::rng::CounterRng;
use meanfield_core::selftest::run_self_test;
use meanfield_core::Error;

/// Particle / stochastic Euler mean-field simulator.
#[derive(Parser, Debug)]
#[command(name = "meanfield", version)]
struct Cli {
    /// TOML configuration file; defaults apply to every missing key.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides `output_dir` (and the OUTPUT_DIR environment variable).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, value_name = "INT")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One coupled particle/fluid run.
    RunCoupled,
    /// Monte Carlo convergence-rate study over particle counts.
    RateStudy,
    /// Kernel hypothesis report and mollification-error sweep.
    KernelReport,
    /// Closed-form oracle checks.
    SelfTest,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn resolve_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = std::env::var_os("OUTPUT_DIR") {
        cfg.output_dir = PathBuf::from(dir);
    }
    if let Some(dir) = &cli.out {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, bytes: &[u8]) -> Outcome {
    io::write_atomic(path, bytes)?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// `# key: value` header followed by the resolved configuration, which parses
/// back as a config file on its own.
fn manifest(command: &str, cfg: &RunConfig, extra: &[(&str, String)]) -> Result<String, Failure> {
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut s = String::new();
    s.push_str("# meanfield run manifest\n");
    s.push_str(&format!("# command: {command}\n"));
    s.push_str(&format!("# version: {}\n", env!("CARGO_PKG_VERSION")));
    s.push_str(&format!("# seed: {}\n", cfg.master_seed));
    s.push_str(&format!("# created_unix: {created}\n"));
    for (k, v) in extra {
        s.push_str(&format!("# {k}: {v}\n"));
    }
    s.push('\n');
    s.push_str(&cfg.to_toml_string()?);
    Ok(s)
}

fn snapshot(dir: &Path, run: &CoupledRun) -> Outcome {
    let step = run.steps();
    io::write_particle_snapshot(
        &dir.join(format!("particles_{step:06}.bin")),
        &run.particles,
    )?;
    io::write_grid_field(&dir.join(format!("density_{step:06}.bin")), &run.fluid.rho)?;
    for (q, v) in run.fluid.vel.iter().enumerate() {
        io::write_grid_field(&dir.join(format!("velocity{q}_{step:06}.bin")), v)?;
    }
    Ok(())
}

fn run_coupled(cfg: &RunConfig) -> Outcome {
    let sc = cfg.scenario()?;
    let rng = CounterRng::new(cfg.master_seed);
    let mut run = CoupledRun::new(&sc, cfg.particles.n, &rng, 0)?;
    let out = &cfg.output_dir;
    let snaps = out.join("snapshots");
    ensure_dir(out)?;
    if cfg.output.snapshots {
        ensure_dir(&snaps)?;
        snapshot(&snaps, &run)?;
    }
    let every = cfg.output.record_every;
    let mut trace = RunTrace::default();
    trace.q.push(run.q_functional());
    while run.coupled_step()? {
        let step = run.steps() as usize;
        trace.mass.push(meanfield_core::experiment::MassSample {
            time: run.fluid.time,
            mass: run.fluid.mass(),
            min_density: run.fluid.min_density(),
        });
        if step.is_multiple_of(every) || run.finished() {
            trace.q.push(run.q_functional());
        }
        let periodic =
            cfg.output.snapshot_every > 0 && step.is_multiple_of(cfg.output.snapshot_every);
        if cfg.output.snapshots && (periodic || run.finished()) {
            snapshot(&snaps, &run)?;
        }
    }
    write(
        &out.join("q_records.csv"),
        io::q_records_csv(&trace.q).as_bytes(),
    )?;
    write(
        &out.join("mass_trace.csv"),
        io::mass_trace_csv(&trace.mass).as_bytes(),
    )?;
    let (dist_s, dist_v) = run.measure_distances(sc.alpha)?;
    let last = run.q_functional();
    let stop = match run.stop_record() {
        Some(r) => format!(
            "step={} time={} norm={:e} threshold={}",
            r.step, r.time, r.norm, r.threshold
        ),
        None => "none".to_string(),
    };
    let extra = [
        ("particles", cfg.particles.n.to_string()),
        ("steps", run.steps().to_string()),
        ("stopping_record", stop.clone()),
        ("q_records", "q_records.csv".to_string()),
        ("mass_trace", "mass_trace.csv".to_string()),
        (
            "snapshots",
            if cfg.output.snapshots {
                "snapshots/".into()
            } else {
                "none".into()
            },
        ),
    ];
    write(
        &out.join("manifest.toml"),
        manifest("run-coupled", cfg, &extra)?.as_bytes(),
    )?;
    println!("time: {}", last.time);
    println!("q_total: {:e}", last.q_total);
    println!("kinetic_term: {:e}", last.kinetic_term);
    println!("density_term: {:e}", last.density_term);
    println!("dist_S: {dist_s:e}");
    println!("dist_V: {dist_v:e}");
    println!("stopping_record: {stop}");
    println!("output_dir: {}", out.display());
    Ok(())
}

fn slope_text(f: &FitOutcome) -> String {
    match f {
        Ok(fit) => format!("{:.4} (r2 {:.4})", fit.slope, fit.r2),
        Err(reason) => format!("unavailable ({reason})"),
    }
}

fn rate_study(cfg: &RunConfig) -> Outcome {
    let sc = cfg.scenario()?;
    let result = monte_carlo_rate(&sc, &cfg.study_plan())?;
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    write(&out.join("rate.csv"), io::rate_csv(&result).as_bytes())?;
    write(
        &out.join("rate_detail.csv"),
        io::rate_detail_csv(&result).as_bytes(),
    )?;
    write(
        &out.join("rate_samples.csv"),
        io::rate_samples_csv(&result).as_bytes(),
    )?;
    write(
        &out.join("rate_summary.txt"),
        io::rate_summary(&result).as_bytes(),
    )?;
    let extra = [
        ("rate", "rate.csv".to_string()),
        ("summary", "rate_summary.txt".to_string()),
        ("censored_total", result.censored_total().to_string()),
    ];
    write(
        &out.join("manifest.toml"),
        manifest("rate-study", cfg, &extra)?.as_bytes(),
    )?;
    print!("{}", io::rate_csv(&result));
    println!("target_slope: {}", result.target_slope());
    println!("slope.q: {}", slope_text(&result.fits.q));
    println!(
        "slope.q_floor_subtracted: {}",
        slope_text(&result.fits.q_floor_subtracted)
    );
    println!("slope.dist_S: {}", slope_text(&result.fits.dist_s));
    println!("slope.dist_V: {}", slope_text(&result.fits.dist_v));
    println!("censored_total: {}", result.censored_total());
    Ok(())
}

fn kernel_report(cfg: &RunConfig) -> Outcome {
    let spec = cfg.mollifier()?;
    let family = TaylorKernelFamily::new(spec.clone());
    let r = &cfg.report;
    let report = hypothesis_report(
        &family,
        r.freq_window,
        r.space_window,
        &cfg.hypothesis_settings(),
    )?;
    let d = spec.dim;
    let probes: Vec<f64> = (0..r.sweep_probes)
        .flat_map(|i| std::iter::repeat_n(i as f64 * cfg.domain.period / r.sweep_probes as f64, d))
        .collect();
    // f(x) = sin(x_1), so ‖∇f‖_∞ = 1
    let f = |x: &[f64]| x[0].sin();
    let mut csv = String::from("N,ratio\n");
    let mut ratios = Vec::new();
    for &n in &r.sweep_n_values {
        let kernel = ScaledKernel::new(spec.clone(), n, cfg.kernel.beta)?;
        let ratio = mollification_error_ratio(&kernel, &f, 1.0, &probes);
        csv.push_str(&format!("{n},{ratio:e}\n"));
        ratios.push(ratio);
    }
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut text = report.to_text();
    text.push_str(&format!("sweep.beta: {}\n", cfg.kernel.beta));
    text.push_str(&format!("sweep.max_ratio: {max:e}\n"));
    text.push_str(&format!("sweep.min_ratio: {min:e}\n"));
    text.push_str(&format!("sweep.max_over_min: {}\n", max / min));
    text.push_str(&format!("sweep.max_over_first: {}\n", max / ratios[0]));
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    write(&out.join("hypothesis_report.txt"), text.as_bytes())?;
    write(&out.join("mollification_sweep.csv"), csv.as_bytes())?;
    let extra = [
        ("report", "hypothesis_report.txt".to_string()),
        ("sweep", "mollification_sweep.csv".to_string()),
    ];
    write(
        &out.join("manifest.toml"),
        manifest("kernel-report", cfg, &extra)?.as_bytes(),
    )?;
    print!("{text}");
    Ok(())
}

fn self_test() -> Outcome {
    let checks = run_self_test();
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!(
            "[{}] {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        return Err(Failure::Runtime(format!(
            "{failed} self-test check(s) failed"
        )));
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config(
                "invalid value for `--threads`: must be at least 1".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    if matches!(cli.command, Command::SelfTest) {
        return self_test();
    }
    let cfg = resolve_config(cli)?;
    match cli.command {
        Command::RunCoupled => run_coupled(&cfg),
        Command::RateStudy => rate_study(&cfg),
        Command::KernelReport => kernel_report(&cfg),
        Command::SelfTest => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
