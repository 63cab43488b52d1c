use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use burgers_core::fields::{LocalObservable, TestFunctionSpec};
use burgers_core::harness::{self, EstimateReport, ExperimentConfig, HarnessError, Suite, TimeUnit, Trajectory};
use burgers_core::integrator::Scheme;
use burgers_core::lattice::Nonlinearity;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

const COST_MODEL: &str = "\
Cost model: a trajectory at scaling parameter n over macroscopic horizon T
takes steps = T·n/dt microscopic steps, each O(M log M) on a torus of M sites
(M defaults to 8·⌈√n⌉·R for a test function of support half-width R, about
42·⌈√n⌉ for the Gaussian bump, rounded up to a length with prime factors
2, 3 and 5 only). Block suites multiply this by `blocks`, and every
suite by `ensemble`.

Configuration: defaults per suite, then --config (strict JSON, unknown keys
rejected), then flags. Keys: n_values, l_values, eps_values, test_functions,
ensemble, horizon, time_unit, sample_times, blocks, spatial_copies, scheme,
dt, record_stride, sites, coupling, nonlinearity, observable, arithmetic,
bias_budget, tolerance, master_seed, threads. Use --print-config to see the
resolved values.

Exit codes: 0 all checks passed, 2 a check failed, 1 error.";

#[derive(Parser, Debug)]
#[command(name = "burgers", version, about = "Lattice stochastic Burgers simulator and verification harness", after_long_help = COST_MODEL)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one trajectory and export snapshots and the field decomposition.
    Simulate(Opts),
    /// Certify exact invariance and Gaussian integration by parts on a random polynomial corpus.
    InvarianceExact(Opts),
    /// Per-site moments along stationary trajectories.
    Stationarity(Opts),
    /// Quadratic variation of the martingale part of the fluctuation field.
    Qv(Opts),
    /// Second-order Boltzmann–Gibbs scaling in n and l.
    BgScaling(Opts),
    /// One-block estimate scaling for a local observable.
    OneBlock(Opts),
    /// Energy-condition estimates over t − s and ε.
    Ec(Opts),
    /// Decay in n of the supremum of the ucp statistic.
    Ucp(Opts),
    /// Space-time covariance at zero coupling against the heat kernel.
    BaselineOu(Opts),
    /// White-noise statistics of the field at a fixed time.
    FixedTime(Opts),
}

impl Command {
    fn split(&self) -> (Suite, &Opts) {
        match self {
            Command::Simulate(o) => (Suite::Simulate, o),
            Command::InvarianceExact(o) => (Suite::InvarianceExact, o),
            Command::Stationarity(o) => (Suite::Stationarity, o),
            Command::Qv(o) => (Suite::Qv, o),
            Command::BgScaling(o) => (Suite::BgScaling, o),
            Command::OneBlock(o) => (Suite::OneBlock, o),
            Command::Ec(o) => (Suite::Ec, o),
            Command::Ucp(o) => (Suite::Ucp, o),
            Command::BaselineOu(o) => (Suite::BaselineOu, o),
            Command::FixedTime(o) => (Suite::FixedTime, o),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Args, Debug)]
struct Opts {
    /// JSON config layered over the suite defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "BURGERS_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Scaling parameters, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<u64>,
    /// Block sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    l: Vec<usize>,
    /// Mollifier widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    /// Test function: gaussian[:center:scale] | hermite:k[:center:scale] |
    /// indicator:eps[:smoothing]. Repeat for a battery.
    #[arg(long)]
    phi: Vec<String>,
    /// Microscopic time step.
    #[arg(long)]
    dt: Option<f64>,
    /// euler | ou-splitting
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Number of replicates.
    #[arg(long)]
    ensemble: Option<usize>,
    /// Torus size.
    #[arg(long)]
    sites: Option<usize>,
    /// Horizon in --time-unit units.
    #[arg(long)]
    horizon: Option<f64>,
    /// macro | micro
    #[arg(long)]
    time_unit: Option<TimeUnit>,
    /// Sample times, comma separated.
    #[arg(long, value_delimiter = ',')]
    sample_times: Vec<f64>,
    /// Time blocks per trajectory.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    record_stride: Option<usize>,
    /// Coupling γ; the default is n^{-1/4}.
    #[arg(long)]
    coupling: Option<f64>,
    /// Use the naive current w_j = u_j² (negative control).
    #[arg(long)]
    naive: bool,
    /// One-block observable: centered-square | left-pair | zero.
    #[arg(long)]
    observable: Option<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn parse_phi(s: &str) -> Result<TestFunctionSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |i: usize, default: f64| -> Result<f64, String> {
        parts.get(i).map_or(Ok(default), |v| v.parse::<f64>().map_err(|e| format!("--phi {s}: {e}")))
    };
    match parts[0] {
        "gaussian" => Ok(TestFunctionSpec::GaussianBump { center: num(1, 0.0)?, scale: num(2, 1.0)? }),
        "hermite" => {
            let order = parts.get(1).ok_or("--phi hermite needs an order")?.parse().map_err(|e| format!("--phi {s}: {e}"))?;
            Ok(TestFunctionSpec::Hermite { order, center: num(2, 0.0)?, scale: num(3, 1.0)? })
        }
        "indicator" => Ok(TestFunctionSpec::SmoothedIndicator {
            epsilon: num(1, 0.1)?,
            smoothing: num(2, 0.02)?,
            center: 0.0,
        }),
        other => Err(format!("unknown test function family `{other}`")),
    }
}

fn resolve(suite: Suite, o: &Opts) -> Result<ExperimentConfig, Vec<String>> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
            ExperimentConfig::from_json(suite, &text).map_err(|e| vec![format!("{}: {e}", path.display())])?
        }
        None => ExperimentConfig::defaults(suite),
    };
    let mut errors = Vec::new();
    if let Some(s) = o.seed {
        cfg.master_seed = s;
    }
    if let Some(t) = o.threads {
        cfg.threads = t;
    }
    if !o.n.is_empty() {
        cfg.n_values = o.n.clone();
    }
    if !o.l.is_empty() {
        cfg.l_values = o.l.clone();
    }
    if !o.eps.is_empty() {
        cfg.eps_values = o.eps.clone();
    }
    if !o.phi.is_empty() {
        match o.phi.iter().map(|s| parse_phi(s)).collect::<Result<Vec<_>, _>>() {
            Ok(v) => cfg.test_functions = v,
            Err(e) => errors.push(e),
        }
    }
    if let Some(v) = o.dt {
        cfg.dt = v;
    }
    if let Some(v) = o.scheme {
        cfg.scheme = v;
    }
    if let Some(v) = o.ensemble {
        cfg.ensemble = v;
    }
    if let Some(v) = o.sites {
        cfg.sites = Some(v);
    }
    if let Some(v) = o.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = o.time_unit {
        cfg.time_unit = v;
    }
    if !o.sample_times.is_empty() {
        cfg.sample_times = o.sample_times.clone();
    }
    if let Some(v) = o.blocks {
        cfg.blocks = v;
    }
    if let Some(v) = o.record_stride {
        cfg.record_stride = v;
    }
    if let Some(v) = o.coupling {
        cfg.coupling = Some(v);
    }
    if o.naive {
        cfg.nonlinearity = Nonlinearity::Naive;
    }
    if let Some(g) = &o.observable {
        match serde_json::from_value::<LocalObservable>(serde_json::Value::String(g.clone())) {
            Ok(v) => cfg.observable = v,
            Err(_) => errors.push(format!("unknown observable `{g}`")),
        }
    }
    errors.extend(cfg.violations(suite));
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

#[derive(Serialize)]
struct RunManifest {
    suite: String,
    config_hash: String,
    master_seed: u64,
    artifact_version: String,
    config: ExperimentConfig,
    outputs: Vec<String>,
    microscopic_steps: u64,
    wall_clock_seconds: f64,
    finished_unix_seconds: u64,
    pass: bool,
}

/// Rough count of microscopic steps, `ensemble · blocks · Σ_n T·n/dt`.
fn step_budget(suite: Suite, cfg: &ExperimentConfig) -> u64 {
    let per_n: u64 = cfg.n_values.iter().map(|&n| cfg.steps_for(cfg.horizon, n) as u64).sum();
    match suite {
        Suite::InvarianceExact => 0,
        Suite::Simulate => per_n.min(cfg.steps_for(cfg.horizon, cfg.n_values[0]) as u64),
        Suite::BgScaling | Suite::OneBlock | Suite::Ucp | Suite::Ec => per_n * cfg.blocks as u64 * cfg.ensemble as u64,
        _ => cfg.steps_for(cfg.horizon, cfg.n_values[0]) as u64 * cfg.ensemble as u64,
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), String> {
    std::fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_report(report: &EstimateReport, dir: &Path, format: Format) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    if matches!(format, Format::Json | Format::Both) {
        let p = dir.join(format!("{}.json", report.suite));
        write(&p, report.to_json().as_bytes())?;
        out.push(p.display().to_string());
    }
    if matches!(format, Format::Csv | Format::Both) {
        let p = dir.join(format!("{}.csv", report.suite));
        let mut buf = Vec::new();
        report.write_csv(&mut buf).map_err(|e| e.to_string())?;
        write(&p, &buf)?;
        out.push(p.display().to_string());
    }
    Ok(out)
}

#[derive(Serialize)]
struct TrajectoryReport {
    suite: &'static str,
    config_hash: String,
    master_seed: u64,
    seed: u64,
    n: u64,
    gamma: f64,
    sites: usize,
    steps: usize,
    snapshots: usize,
    final_time_micro: f64,
    max_closure_gap: f64,
}

fn write_trajectory(t: &Trajectory, cfg: &ExperimentConfig, dir: &Path, format: Format) -> Result<Vec<String>, String> {
    let hash = cfg.hash(Suite::Simulate);
    let mut out = Vec::new();
    if matches!(format, Format::Csv | Format::Both) {
        let p = dir.join("snapshots.csv");
        let mut text = String::from("seed,config_hash,time");
        for j in 0..t.params.sites {
            text.push_str(&format!(",u{j}"));
        }
        text.push('\n');
        for (time, u) in &t.snapshots {
            text.push_str(&format!("{},{hash},{time:e}", t.summary.seed));
            for x in u {
                text.push_str(&format!(",{x:e}"));
            }
            text.push('\n');
        }
        write(&p, text.as_bytes())?;
        out.push(p.display().to_string());
        let p = dir.join("field_series.csv");
        let mut buf = Vec::new();
        t.series.write_csv(&mut buf).map_err(|e| e.to_string())?;
        write(&p, &buf)?;
        out.push(p.display().to_string());
    }
    if matches!(format, Format::Json | Format::Both) {
        let summary = TrajectoryReport {
            suite: "simulate",
            config_hash: hash,
            master_seed: cfg.master_seed,
            seed: t.summary.seed,
            n: t.params.n,
            gamma: t.params.gamma,
            sites: t.params.sites,
            steps: t.summary.steps,
            snapshots: t.summary.snapshots,
            final_time_micro: t.summary.final_state.time(),
            max_closure_gap: t.series.max_closure_gap(),
        };
        let p = dir.join("simulate.json");
        write(&p, serde_json::to_string_pretty(&summary).expect("serializes").as_bytes())?;
        out.push(p.display().to_string());
    }
    Ok(out)
}

fn run(suite: Suite, o: &Opts) -> Result<bool, String> {
    let cfg = resolve(suite, o).map_err(|v| format!("invalid configuration:\n  - {}", v.join("\n  - ")))?;
    if o.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("serializes"));
        return Ok(true);
    }
    std::fs::create_dir_all(&o.out_dir).map_err(|e| format!("{}: {e}", o.out_dir.display()))?;
    eprintln!("burgers {suite}: ~{} microscopic steps", step_budget(suite, &cfg));
    let start = Instant::now();
    let (outputs, pass) = if suite == Suite::Simulate {
        let t = harness::run_trajectory(&cfg).map_err(|e: HarnessError| e.to_string())?;
        (write_trajectory(&t, &cfg, &o.out_dir, o.format)?, true)
    } else {
        let report = harness::run_suite(suite, &cfg).map_err(|e| e.to_string())?;
        for c in &report.checks {
            eprintln!("  [{}] {} = {:.6e}  {}", if c.pass { "pass" } else { "FAIL" }, c.name, c.value, c.detail);
        }
        for f in &report.fits {
            let slope = f.fit.slope.map_or("inconclusive".to_string(), |s| format!("{s:.4} ± {:.4}", f.fit.slope_se));
            eprintln!(
                "  [{}] {} exponent in {} = {slope} (R² = {:.3}, window [{}, {}])",
                if f.pass { "pass" } else { "FAIL" },
                f.name,
                f.variable,
                f.fit.r_squared,
                f.window.0,
                f.window.1
            );
        }
        let failed_points = report.points.iter().filter(|p| p.pass == Some(false)).count();
        eprintln!("  {} grid points, {failed_points} outside tolerance", report.points.len());
        (write_report(&report, &o.out_dir, o.format)?, report.pass)
    };
    let manifest = RunManifest {
        suite: suite.name().to_string(),
        config_hash: cfg.hash(suite),
        master_seed: cfg.master_seed,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        outputs,
        microscopic_steps: step_budget(suite, &cfg),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        finished_unix_seconds: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        pass,
    };
    let p = o.out_dir.join(format!("{}.manifest.json", suite.name()));
    write(&p, serde_json::to_string_pretty(&manifest).expect("serializes").as_bytes())?;
    eprintln!("burgers {suite}: {} in {:.1}s", if pass { "PASS" } else { "FAIL" }, manifest.wall_clock_seconds);
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Some(command) = cli.command else {
        use clap::CommandFactory;
        let _ = Cli::command().print_help();
        return ExitCode::from(1);
    };
    let (suite, opts) = command.split();
    match run(suite, opts) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_specs_parse() {
        assert_eq!(parse_phi("gaussian").unwrap(), TestFunctionSpec::GaussianBump { center: 0.0, scale: 1.0 });
        assert_eq!(
            parse_phi("hermite:2:0.5:2").unwrap(),
            TestFunctionSpec::Hermite { order: 2, center: 0.5, scale: 2.0 }
        );
        assert!(matches!(parse_phi("indicator:0.2"), Ok(TestFunctionSpec::SmoothedIndicator { epsilon, .. }) if epsilon == 0.2));
        assert!(parse_phi("hermite").is_err());
        assert!(parse_phi("box:1").is_err());
        assert!(parse_phi("gaussian:x").is_err());
    }
}
