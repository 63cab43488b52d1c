use rayon::prelude::*;

use super::blocks::{copy_offsets, max_copies, BlockIntegrals, Integrand};
use super::config::{ExperimentConfig, Suite};
use super::report::{CheckRecord, EstimateReport, FitRecord, GridPoint};
use super::HarnessError;
use crate::fields::{
    bg_static_second_moment, discrete_energy, epsilon_block, field_value, FieldRecorder, FieldSeries,
    LocalObservable, SampledTestFunction, TestFunction,
};
use crate::gaussian::{self, ArithmeticMode, CylinderPolynomial, Monomial};
use crate::integrator::{
    laplacian_eigenvalue, sample_invariant, simulate, IntegratorConfig, Observer, Scheme, SimulationError, Snapshot,
    TrajectorySummary,
};
use crate::lattice::{Nonlinearity, ScalingParams};
use crate::rng::{derive_seed, label_hash, NoiseStream};
use crate::stats::{kurtosis, log_log_fit, ratio_of_means, Estimate};

/// Exponent window for `n`-regressions (expected `−1/2`).
pub const N_EXPONENT_WINDOW: (f64, f64) = (-0.7, -0.3);
/// Exponent window for `l`-regressions (upper bound `1`).
pub const L_EXPONENT_WINDOW: (f64, f64) = (0.5, 1.3);
/// Window for consecutive `ε`-halving ratios of the EC2 estimate.
pub const HALVING_WINDOW: (f64, f64) = (0.35, 0.7);
/// Exponent window in `t − s` for the EC1 estimate: between the diffusive
/// and the ballistic regimes, so the ratio stays bounded as `t − s → 0`.
pub const EC1_EXPONENT_WINDOW: (f64, f64) = (0.9, 2.1);

/// Runs any report-producing suite.
pub fn run_suite(suite: Suite, cfg: &ExperimentConfig) -> Result<EstimateReport, HarnessError> {
    match suite {
        Suite::Simulate => Err(HarnessError::Config(vec!["`simulate` produces a trajectory, not a report".into()])),
        Suite::InvarianceExact => run_invariance_exact(cfg),
        Suite::Stationarity => run_stationarity(cfg),
        Suite::Qv => run_qv_check(cfg),
        Suite::BgScaling => run_bg_scaling(cfg),
        Suite::OneBlock => run_one_block(cfg, cfg.observable),
        Suite::Ec => run_ec_estimates(cfg),
        Suite::Ucp => run_ucp_decay(cfg),
        Suite::BaselineOu => run_linear_baseline(cfg),
        Suite::FixedTime => run_fixed_time_field(cfg),
    }
}

fn validated(cfg: &ExperimentConfig, suite: Suite) -> Result<(), HarnessError> {
    cfg.validate(suite).map_err(HarnessError::Config)
}

fn suite_seed(cfg: &ExperimentConfig, suite: Suite, n: u64) -> u64 {
    derive_seed(cfg.master_seed, &[label_hash(suite.name()), n])
}

/// Runs `count` replicates on the configured pool. Results come back in
/// replicate order, so every later reduction is thread-count independent.
fn parallel<T: Send>(
    cfg: &ExperimentConfig,
    count: usize,
    f: impl Fn(u64) -> T + Sync + Send,
) -> Result<Vec<T>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    Ok(pool.install(|| (0..count as u64).into_par_iter().map(&f).collect()))
}

/// Splits off blow-ups; any other simulation error aborts the suite.
fn partition<T>(results: Vec<Result<T, SimulationError>>) -> Result<(Vec<T>, Vec<SimulationError>), HarnessError> {
    let mut ok = Vec::with_capacity(results.len());
    let mut blowups = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e @ SimulationError::NonFinite { .. }) => blowups.push(e),
            Err(e) => return Err(e.into()),
        }
    }
    Ok((ok, blowups))
}

fn blowup_check(blowups: &[SimulationError]) -> CheckRecord {
    let detail = if blowups.is_empty() {
        "all trajectories finite".to_string()
    } else {
        blowups.iter().take(3).map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
    };
    CheckRecord::new("finite-trajectories", blowups.len() as f64, blowups.is_empty(), detail)
}

fn new_report(cfg: &ExperimentConfig, suite: Suite) -> EstimateReport {
    EstimateReport::new(suite.name(), cfg.hash(suite), cfg.master_seed, cfg.ensemble)
}

fn column(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}

fn integrator(cfg: &ExperimentConfig, t_micro: f64) -> IntegratorConfig {
    IntegratorConfig { scheme: cfg.scheme, dt: cfg.dt, t_end: t_micro, record_stride: cfg.record_stride }
}

// ---------------------------------------------------------------------------
// invariance-exact

/// Certifies `E_μ[L f] = 0` and Gaussian integration by parts on a random
/// corpus of cylinder polynomials, and confirms the naive nonlinearity
/// breaks invariance.
pub fn run_invariance_exact(cfg: &ExperimentConfig) -> Result<EstimateReport, HarnessError> {
    validated(cfg, Suite::InvarianceExact)?;
    let seed = suite_seed(cfg, Suite::InvarianceExact, 0);
    let sites = cfg.sites.unwrap_or(7);
    let max_window = sites.saturating_sub(2).clamp(1, 5);
    let corpus = gaussian::random_corpus(cfg.ensemble, seed, 4, max_window);
    let mut report = new_report(cfg, Suite::InvarianceExact);
    report.quadrature = "exact Wick contraction".into();
    let modes = match cfg.arithmetic {
        ArithmeticMode::Rational => vec![ArithmeticMode::Rational, ArithmeticMode::Float],
        ArithmeticMode::Float => vec![ArithmeticMode::Float],
    };
    for mode in modes {
        let tag = match mode {
            ArithmeticMode::Rational => "rational",
            ArithmeticMode::Float => "float",
        };
        let r = gaussian::certify(&corpus, sites, mode)?;
        let tol = r.tolerance;
        let pass_of = |v: f64| if mode == ArithmeticMode::Rational { v == 0.0 } else { v <= tol };
        report.checks.push(CheckRecord::new(
            &format!("invariance-{tag}"),
            r.max_invariance_residual,
            pass_of(r.max_invariance_residual),
            format!("max |E[Lf]| over {} polynomials, M = {sites}", r.corpus_size),
        ));
        report.checks.push(CheckRecord::new(
            &format!("symmetric-part-{tag}"),
            r.max_symmetric_residual,
            pass_of(r.max_symmetric_residual),
            "max |E[Sf]|",
        ));
        report.checks.push(CheckRecord::new(
            &format!("antisymmetric-part-{tag}"),
            r.max_antisymmetric_residual,
            pass_of(r.max_antisymmetric_residual),
            "max |E[Af]|",
        ));
        report.checks.push(CheckRecord::new(
            &format!("ibp-{tag}"),
            r.max_ibp_residual,
            pass_of(r.max_ibp_residual),
            "max |E[u_j f] − E[∂_j f]| over window sites",
        ));
    }
    let naive = gaussian::certify_with(&corpus, sites, ArithmeticMode::Float, Nonlinearity::Naive)?;
    report.checks.push(CheckRecord::new(
        "naive-control-detected",
        naive.max_invariance_residual,
        !naive.pass,
        "the naive current must violate invariance",
    ));
    report.constants.insert("corpus_size".into(), corpus.len() as f64);
    Ok(report.finalize())
}

// ---------------------------------------------------------------------------
// stationarity

const MOMENTS: [(&str, f64, f64); 6] = [
    // name, target under μ, bias-budget multiplier
    ("mean", 0.0, 1.0),
    ("variance", 1.0, 1.0),
    ("lag1", 0.0, 1.0),
    ("lag2", 0.0, 1.0),
    ("third", 0.0, 1.0),
    ("fourth", 3.0, 6.0),
];

struct MomentProbe {
    targets: Vec<usize>,
    out: Vec<[f64; 6]>,
}

impl Observer for MomentProbe {
    fn observe(&mut self, snap: &Snapshot<'_>) {
        if self.targets.binary_search(&snap.step).is_err() {
            return;
        }
        let u = snap.state;
        let m = u.len();
        let mut acc = [0.0; 6];
        for j in 0..m {
            let x = u[j];
            let x2 = x * x;
            acc[0] += x;
            acc[1] += x2;
            acc[2] += x * u[(j + 1) % m];
            acc[3] += x * u[(j + 2) % m];
            acc[4] += x2 * x;
            acc[5] += x2 * x2;
        }
        self.out.push(acc.map(|a| a / m as f64));
    }
}

fn stationarity_moments(
    cfg: &ExperimentConfig,
    dt: f64,
    target_steps: &[usize],
    total_steps: usize,
) -> Result<(Vec<Vec<[f64; 6]>>, Vec<SimulationError>), HarnessError> {
    let n = cfg.n_values[0];
    let m = cfg.sites_for(n);
    let p = ScalingParams::with_gamma(n, cfg.coupling_for(n), m)?;
    let seed = suite_seed(cfg, Suite::Stationarity, n);
    let icfg = IntegratorConfig { scheme: cfg.scheme, dt, t_end: total_steps as f64 * dt, record_stride: 1 };
    let results = parallel(cfg, cfg.ensemble, |r| {
        let mut rng = NoiseStream::new(seed, r);
        let u0 = sample_invariant(&mut rng, m)?;
        let mut probe = MomentProbe { targets: target_steps.to_vec(), out: Vec::new() };
        simulate(&u0, &p, &icfg, cfg.nonlinearity, &mut rng, &mut [&mut probe])?;
        Ok(probe.out)
    })?;
    partition(results)
}

/// Per-site moments at the sample times against the i.i.d. `N(0,1)` values,
/// with tolerance `3σ + bias budget`.
pub fn run_stationarity(cfg: &ExperimentConfig) -> Result<EstimateReport, HarnessError> {
    validated(cfg, Suite::Stationarity)?;
    let n = cfg.n_values[0];
    let gamma = cfg.coupling_for(n);
    let mut times = cfg.sample_times.clone();
    if times.is_empty() {
        times.push(cfg.horizon);
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    let steps: Vec<usize> = times.iter().map(|&t| cfg.steps_for(t, n)).collect();
    let total = cfg.steps_for(cfg.horizon, n);
    let (rows, blowups) = stationarity_moments(cfg, cfg.dt, &steps, total)?;

    let exact_linear = gamma == 0.0 && cfg.scheme == Scheme::OuSplitting;
    let budget = cfg.bias_budget.unwrap_or(if exact_linear { 0.0 } else { 0.02 });
    let mut report = new_report(cfg, Suite::Stationarity);
    report.quadrature = format!("spatial averages over M = {} sites at the sample times", cfg.sites_for(n));
    report.checks.push(blowup_check(&blowups));
    report.notes.push(format!("nonlinearity = {:?}, gamma = {gamma}, bias budget = {budget}", cfg.nonlinearity));
    for (ti, &t) in times.iter().enumerate() {
        for (k, (name, target, mult)) in MOMENTS.iter().enumerate() {
            let xs: Vec<f64> = rows.iter().map(|r| r[ti][k]).collect();
            let e = Estimate::from_samples(&xs);
            let tol = 3.0 * e.se() + mult * budget;
            report.points.push(GridPoint::new(name, &[("t", t)], &e).against(*target, tol));
        }
    }

    // dt-sensitivity: the final-time variance with dt halved
    let half = cfg.dt / 2.0;
    let last = *steps.last().expect("sample time");
    let (half_rows, half_blowups) = stationarity_moments(cfg, half, &[2 * last], 2 * total)?;
    if half_blowups.is_empty() && !rows.is_empty() {
        let e_half = Estimate::from_samples(&half_rows.iter().map(|r| r[0][1]).collect::<Vec<_>>());
        let e_full = Estimate::from_samples(&rows.iter().map(|r| r[times.len() - 1][1]).collect::<Vec<_>>());
        report.points.push(GridPoint::new("variance-dt-half", &[("t", *times.last().unwrap()), ("dt", half)], &e_half));
        report.constants.insert("dt_sensitivity_variance".into(), e_full.mean - e_half.mean);
    }
    Ok(report.finalize())
}

// ---------------------------------------------------------------------------
// quadratic variation

/// Realized quadratic variation of the residual and direct martingale
/// constructions against `t·E_n(∇^nφ^n)`.
pub fn run_qv_check(cfg: &ExperimentConfig) -> Result<EstimateReport, HarnessError> {
    validated(cfg, Suite::Qv)?;
    let n = cfg.n_values[0];
    let m = cfg.sites_for(n);
    let tf = cfg.test_function(0).map_err(|e| HarnessError::Config(vec![e]))?;
    let f = SampledTestFunction::new(&tf, n, m, 0)?;
    let gamma = cfg.coupling_for(n);
    let p = ScalingParams::with_gamma(n, gamma, m)?;
    let t_micro = cfg.horizon * cfg.micro_per_unit(n);
    let t_macro = t_micro / n as f64;
    let icfg = integrator(cfg, t_micro);
    let seed = suite_seed(cfg, Suite::Qv, n);
    let energy = f.gradient_energy();
    let results = parallel(cfg, cfg.ensemble, |r| {
        let mut rng = NoiseStream::new(seed, r);
        let u0 = sample_invariant(&mut rng, m)?;
        let mut rec = FieldRecorder::new(f.clone(), gamma, &[]).expect("no ε");
        simulate(&u0, &p, &icfg, cfg.nonlinearity, &mut rng, &mut [&mut rec])?;
        Ok(rec.into_series())
    })?;
    let (series, blowups) = partition(results)?;

    let mut report = new_report(cfg, Suite::Qv);
    report.quadrature = format!(
        "left-endpoint on the recorded grid, h = {} (macro), scheme = {}",
        cfg.record_stride as f64 * cfg.dt / n as f64,
        cfg.scheme
    );
    report.checks.push(blowup_check(&blowups));
    report.constants.insert("E_n_grad_phi".into(), energy);
    report.constants.insert("E_grad_phi".into(), tf.gradient_energy());
    let target = t_macro * energy;
    let params = [("n", n as f64), ("t", t_macro)];
    for (name, pick) in [("qv-direct", 0), ("qv-residual", 1)] {
        let xs: Vec<f64> = series
            .iter()
            .map(|s| {
                let m = if pick == 0 { &s.martingale_direct } else { &s.martingale_residual };
                FieldSeries::realized_qv(m)
            })
            .collect();
        let e = Estimate::from_samples(&xs);
        let point = if target > 0.0 {
            GridPoint::new(name, &params, &e.scaled(1.0 / target)).against(1.0, cfg.tolerance)
        } else {
            GridPoint::new(name, &params, &e).against(0.0, 0.0)
        };
        report.points.push(point);
    }
    let gap = series.iter().map(FieldSeries::max_closure_gap).fold(0.0, f64::max);
    let closure_tol = 1e-8;
    report.checks.push(CheckRecord::new(
        "closure",
        gap,
        gap <= closure_tol || cfg.scheme != Scheme::Euler || cfg.record_stride != 1,
        format!("max |M_residual − M_direct| over all steps and replicates (tolerance {closure_tol:e})"),
    ));

    // BDG-style second moments on consecutive sample-time intervals
    let mut knots = vec![0.0];
    knots.extend(cfg.sample_times.iter().map(|&t| t * cfg.micro_per_unit(n) / n as f64));
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let h = cfg.record_stride as f64 * cfg.dt / n as f64;
    let idx = |t: f64| (t / h).round() as usize;
    for w in knots.windows(2) {
        let (s, t) = (w[0], w[1]);
        let xs: Vec<f64> =
            series.iter().map(|q| (q.martingale_direct[idx(t)] - q.martingale_direct[idx(s)]).powi(2)).collect();
        let e = Estimate::from_samples(&xs).scaled(1.0 / ((t - s) * energy));
        let tol = 3.0 * e.se();
        report.points.push(GridPoint::new("bdg-second-moment", &[("s", s), ("t", t)], &e).against(1.0, tol));
    }
    Ok(report.finalize())
}

// ---------------------------------------------------------------------------
// block ensembles shared by the scaling suites

struct BlockSetup {
    n: u64,
    sites: usize,
    copies: Vec<SampledTestFunction>,
    block_steps: usize,
    t_block: f64,
}

fn block_setup(cfg: &ExperimentConfig, n: u64, dt: f64) -> Result<BlockSetup, HarnessError> {
    let m = cfg.sites_for(n);
    let tf = cfg.test_function(0).map_err(|e| HarnessError::Config(vec![e]))?;
    let probe = SampledTestFunction::new(&tf, n, m, 0)?;
    let fit = max_copies(m, probe.window());
    let k = cfg.spatial_copies.unwrap_or(fit);
    if k > fit {
        return Err(HarnessError::Config(vec![format!(
            "spatial_copies = {k} exceeds the {fit} disjoint windows that fit on M = {m} at n = {n}"
        )]));
    }
    let copies = copy_offsets(m, k)
        .into_iter()
        .map(|o| SampledTestFunction::new(&tf, n, m, o))
        .collect::<Result<Vec<_>, _>>()?;
    let t_micro = cfg.horizon * cfg.micro_per_unit(n);
    let block_steps = (t_micro / dt).round() as usize;
    Ok(BlockSetup { n, sites: m, copies, block_steps, t_block: t_micro / n as f64 })
}

/// Runs `ensemble` trajectories of `blocks` consecutive blocks and reduces
/// each replicate's [`BlockIntegrals`] with `reduce`.
fn run_blocks<T: Send>(
    cfg: &ExperimentConfig,
    suite: Suite,
    setup: &BlockSetup,
    dt: f64,
    integrands: &[Integrand],
    checkpoints: &[usize],
    reduce: impl Fn(&BlockIntegrals) -> T + Sync + Send,
) -> Result<(Vec<T>, Vec<SimulationError>), HarnessError> {
    let n = setup.n;
    let p = ScalingParams::with_gamma(n, cfg.coupling_for(n), setup.sites)?;
    let total = setup.block_steps * cfg.blocks;
    let stride = cfg.record_stride * ((cfg.dt / dt).round() as usize).max(1);
    let icfg = IntegratorConfig { scheme: cfg.scheme, dt, t_end: total as f64 * dt, record_stride: stride };
    let seed = suite_seed(cfg, suite, n);
    let results = parallel(cfg, cfg.ensemble, |r| {
        let mut rng = NoiseStream::new(seed, r);
        let u0 = sample_invariant(&mut rng, setup.sites)?;
        let mut obs =
            BlockIntegrals::new(setup.copies.clone(), integrands.to_vec(), setup.block_steps, checkpoints.to_vec());
        simulate(&u0, &p, &icfg, cfg.nonlinearity, &mut rng, &mut [&mut obs])?;
        Ok(reduce(&obs))
    })?;
    partition(results)
}

/// Per integrand: mean over blocks and copies of the squared integral at
/// the block end, and of the running supremum of its square.
fn squared_block_means(obs: &BlockIntegrals, integrands: usize) -> Vec<(f64, f64)> {
    let nc = obs.copies();
    let mut out = vec![(0.0, 0.0); integrands];
    for b in &obs.blocks {
        let last = b.values.last().expect("block end");
        for (k, o) in out.iter_mut().enumerate() {
            for i in 0..nc {
                o.0 += last[k * nc + i].powi(2);
                o.1 += b.sup[k * nc + i];
            }
        }
    }
    let count = (obs.blocks.len() * nc) as f64;
    out.into_iter().map(|(a, b)| (a / count, b / count)).collect()
}

fn block_quadrature(cfg: &ExperimentConfig) -> String {
    format!(
        "left-endpoint on the recorded grid, record_stride = {} steps of dt = {}; sup taken over the same grid; {} blocks per trajectory",
        cfg.record_stride, cfg.dt, cfg.blocks
    )
}

fn scaling_fits(
    report: &mut EstimateReport,
    name: &str,
    cfg: &ExperimentConfig,
    // (n, l, value normalized by E_n)
    table: &[(u64, usize, f64)],
) {
    let l_fix = cfg.l_values[0];
    let (ns, ys): (Vec<f64>, Vec<f64>) =
        table.iter().filter(|r| r.1 == l_fix).map(|r| (r.0 as f64, r.2)).unzip();
    report.fits.push(FitRecord::new(
        &format!("{name}-n"),
        "n",
        &[("l", l_fix as f64), ("t", cfg.horizon)],
        log_log_fit(&ns, &ys),
        N_EXPONENT_WINDOW,
    ));
    let n_fix = *cfg.n_values.iter().max().expect("n grid");
    let root = (n_fix as f64).sqrt();
    let (ls, ys): (Vec<f64>, Vec<f64>) = table
        .iter()
        .filter(|r| r.0 == n_fix && r.1 as f64 <= root)
        .map(|r| (r.1 as f64, r.2))
        .unzip();
    let fit = log_log_fit(&ls, &ys);
    let upper = fit.slope.map(|s| s <= 1.0 + 1.96 * fit.slope_se);
    report.fits.push(FitRecord::new(
        &format!("{name}-l"),
        "l",
        &[("n", n_fix as f64), ("t", cfg.horizon)],
        fit.clone(),
        L_EXPONENT_WINDOW,
    ));
    report.checks.push(CheckRecord::new(
        &format!("{name}-l-upper-bound"),
        fit.slope.unwrap_or(f64::NAN),
        upper.unwrap_or(false),
        format!("l-exponent ≤ 1 + 1.96·se (se = {:.3}); fit uses l ≤ √n", fit.slope_se),
    ));
}

// ---------------------------------------------------------------------------
// Boltzmann–Gibbs scaling

/// `E[|∫_0^t Σ_j {u_j u_{j+1} − τ_jQ(l)} ∇^nφ_j ds|²]` over the `(n, l)`
/// grid, with exponent fits in `n` and `l`.
pub fn run_bg_scaling(cfg: &ExperimentConfig) -> Result<EstimateReport, HarnessError> {
    validated(cfg, Suite::BgScaling)?;
    let mut report = new_report(cfg, Suite::BgScaling);
    report.quadrature = block_quadrature(cfg);
    let integrands: Vec<Integrand> = cfg.l_values.iter().map(|&l| Integrand::BgResidual(l)).collect();
    let mut table = Vec::new();
    let mut blowups = Vec::new();
    let mut c_max: f64 = 0.0;
    for (ni, &n) in cfg.n_values.iter().enumerate() {
        let setup = block_setup(cfg, n, cfg.dt)?;
        let k = integrands.len();
        let (rows, b) =
            run_blocks(cfg, Suite::BgScaling, &setup, cfg.dt, &integrands, &[], |o| squared_block_means(o, k))?;
        blowups.extend(b);
        let energy = setup.copies[0].gradient_energy();
        let t = setup.t_block;
        for (li, &l) in cfg.l_values.iter().enumerate() {
            let xs: Vec<f64> = rows.iter().map(|r| r[li].0).collect();
            let e = Estimate::from_samples(&xs);
            let params = [("n", n as f64), ("l", l as f64), ("t", t)];
            report.points.push(GridPoint::new("bg", &params, &e));
            let scale = t * l as f64 / (n as f64).sqrt() * energy;
            let norm = e.scaled(1.0 / scale);
            c_max = c_max.max(norm.mean);
            report.points.push(GridPoint::new("bg-normalized", &params, &norm));
            table.push((n, l, e.mean / energy));
        }
        // crude regime at the largest l: compare with the exact static bound
        // t²·E_μ[F²] from Cauchy–Schwarz and stationarity
        let l_max = *cfg.l_values.iter().max().expect("l grid");
        let li = cfg.l_values.iter().position(|&l| l == l_max).expect("present");
        let xs: Vec<f64> = rows.iter().map(|r| r[li].0).collect();
        let e = Estimate::from_samples(&xs);
        let static_moment = bg_static_second_moment(setup.copies[0].gradient(), l_max)?;
        let bound = t * t * static_moment;
        report.checks.push(CheckRecord::new(
            &format!("crude-bound[n={n}]"),
            e.mean / bound,
            e.mean - 1.96 * e.se() <= bound,
            format!("E|I|² / (t²·E_μ[F²]) at l = {l_max}; Cauchy–Schwarz forces ≤ 1"),
        ));
        report.constants.insert(
            format!("crude_C[n={n}]"),
            e.mean / (t * t * (n as f64).sqrt() / l_max as f64 * energy),
        );
        if ni == 0 {
            // dt-sensitivity at the smallest n and first l
            let half = cfg.dt / 2.0;
            let hs = block_setup(cfg, n, half)?;
            let one = [integrands[0]];
            let (hrows, _) = run_blocks(cfg, Suite::BgScaling, &hs, half, &one, &[], |o| squared_block_means(o, 1))?;
            let eh = Estimate::from_samples(&hrows.iter().map(|r| r[0].0).collect::<Vec<_>>());
            let e0 = Estimate::from_samples(&rows.iter().map(|r| r[0].0).collect::<Vec<_>>());
            let params = [("n", n as f64), ("l", cfg.l_values[0] as f64), ("t", t), ("dt", half)];
            report.points.push(GridPoint::new("bg-dt-half", &params, &eh));
            report.constants.insert("dt_sensitivity_rel".into(), (e0.mean - eh.mean) / eh.mean);
        }
    }
    report.checks.push(blowup_check(&blowups));
    report.constants.insert("C_max".into(), c_max);
    scaling_fits(&mut report, "bg", cfg, &table);
    Ok(report.finalize())
}

// ---------------------------------------------------------------------------
// one-block

fn observable_polynomial(g: LocalObservable) -> CylinderPolynomial<f64> {
    let mut p = CylinderPolynomial::zero();
    match g {
        LocalObservable::Zero => {}
        LocalObservable::CenteredSquare => {
            p.add_term(Monomial::new(&[(0, 2)]), 1.0);
            p.add_term(Monomial::one(), -1.0);
        }
        LocalObservable::LeftPair => p.add_term(Monomial::new(&[(-1, 1), (0, 1)]), 1.0),
    }
    p
}

/// `E[|∫_0^t Σ_j g(τ_j u)[u_{j+1} − ū^l_j] ∇^nφ_j ds|²]` over the `(n, l)`
/// grid.
pub fn run_one_block(cfg: &ExperimentConfig, g: LocalObservable) -> Result<EstimateReport, HarnessError> {
    validated(cfg, Suite::OneBlock)?;
    let mut report = new_report(cfg, Suite::OneBlock);
    report.quadrature = block_quadrature(cfg);
    let poly = observable_polynomial(g);
    let mean = poly.wick_expectation();
    let norm = poly.mul(&poly).wick_expectation();
    report.notes.push(format!("g = {g:?}"));
    report.checks.push(CheckRecord::new("g-centered", mean, mean == 0.0, "E_μ[g] by Wick contraction"));
    report.checks.push(CheckRecord::new(
        "g-norm",
        norm,
        norm == g.l2_norm_sq(),
        format!("‖g‖²_{{L²(μ)}} by Wick contraction, expected {}", g.l2_norm_sq()),
    ));
    let integrands: Vec<Integrand> = cfg.l_values.iter().map(|&l| Integrand::OneBlock(l, g)).collect();
    let mut table = Vec::new();
    let mut blowups = Vec::new();
    let mut c_max: f64 = 0.0;
    for &n in &cfg.n_values {
        let setup = block_setup(cfg, n, cfg.dt)?;
        let k = integrands.len();
        let (rows, b) =
            run_blocks(cfg, Suite::OneBlock, &setup, cfg.dt, &integrands, &[], |o| squared_block_means(o, k))?;
        blowups.extend(b);
        let energy = setup.copies[0].gradient_energy();
        let t = setup.t_block;
        for (li, &l) in cfg.l_values.iter().enumerate() {
            let e = Estimate::from_samples(&rows.iter().map(|r| r[li].0).collect::<Vec<_>>());
            let params = [("n", n as f64), ("l", l as f64), ("t", t)];
            report.points.push(GridPoint::new("one-block", &params, &e));
            if norm > 0.0 {
                let scale = t * l as f64 / (n as f64).sqrt() * norm * energy;
                let c = e.scaled(1.0 / scale);
                c_max = c_max.max(c.mean);
                report.points.push(GridPoint::new("one-block-normalized", &params, &c));
            }
            table.push((n, l, e.mean / energy));
        }
    }
    report.checks.push(blowup_check(&blowups));
    if g == LocalObservable::Zero {
        let all_zero = table.iter().all(|r| r.2 == 0.0);
        report.checks.push(CheckRecord::new("zero-observable", 0.0, all_zero, "g ≡ 0 gives identically 0"));
    } else {
        report.constants.insert("C_max".into(), c_max);
        scaling_fits(&mut report, "one-block", cfg, &table);
    }
    Ok(report.finalize())
}

// ---------------------------------------------------------------------------
// ucp decay

/// `E[sup_grid |Y^n_t|²]`, `Y^n_t = ∫_0^t Σ_j φ_j{(u_j u_{j+1} − u_j²) + 1} ds`,
/// regressed against `n`.
pub fn run_ucp_decay(cfg: &ExperimentConfig) -> Result<EstimateReport, HarnessError> {
    validated(cfg, Suite::Ucp)?;
    let mut report = new_report(cfg, Suite::Ucp);
    report.quadrature = block_quadrature(cfg);
    let mut wick = CylinderPolynomial::<f64>::constant(1.0);
    wick.add_term(Monomial::new(&[(0, 1), (1, 1)]), 1.0);
    wick.add_term(Monomial::new(&[(0, 2)]), -1.0);
    let centered = wick.wick_expectation();
    report.checks.push(CheckRecord::new(
        "integrand-centered",
        centered,
        centered == 0.0,
        "E_μ[(u_0u_1 − u_0²) + 1] by Wick contraction",
    ));
    let integrands = [Integrand::Ucp];
    let mut ns = Vec::new();
    let mut ys = Vec::new();
    let mut blowups = Vec::new();
    let mut c_max: f64 = 0.0;
    for &n in &cfg.n_values {
        let setup = block_setup(cfg, n, cfg.dt)?;
        let (rows, b) = run_blocks(cfg, Suite::Ucp, &setup, cfg.dt, &integrands, &[], |o| squared_block_means(o, 1))?;
        blowups.extend(b);
        let energy = setup.copies[0].energy();
        let t = setup.t_block;
        let e = Estimate::from_samples(&rows.iter().map(|r| r[0].1).collect::<Vec<_>>());
        let params = [("n", n as f64), ("t", t)];
        report.points.push(GridPoint::new("ucp-sup", &params, &e));
        let c = e.scaled((n as f64).sqrt() / (t * energy));
        c_max = c_max.max(c.mean);
        report.points.push(GridPoint::new("ucp-sup-normalized", &params, &c));
        let end = Estimate::from_samples(&rows.iter().map(|r| r[0].0).collect::<Vec<_>>());
        report.points.push(GridPoint::new("ucp-terminal", &params, &end));
        ns.push(n as f64);
        ys.push(e.mean / energy);
    }
    report.checks.push(blowup_check(&blowups));
    report.constants.insert("C_max".into(), c_max);
    report.fits.push(FitRecord::new("ucp-n", "n", &[("t", cfg.horizon)], log_log_fit(&ns, &ys), N_EXPONENT_WINDOW));
    Ok(report.finalize())
}

// ---------------------------------------------------------------------------
// energy conditions

/// EC1 and EC2 estimates: `E[|∫_s^t X_r(∂_x²φ) dr|²]/((t−s)E(∂_xφ))` over
/// `t − s` and `E[|A^ε − A^{ε'}|²]/((t−s)εE(∂_xφ))` over consecutive `ε`.
pub fn run_ec_estimates(cfg: &ExperimentConfig) -> Result<EstimateReport, HarnessError> {
    validated(cfg, Suite::Ec)?;
    let n = cfg.n_values[0];
    let mut eps = cfg.eps_values.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let blocks: Vec<usize> = eps.iter().map(|&e| epsilon_block(e, n)).collect::<Result<_, _>>()?;
    let setup = block_setup(cfg, n, cfg.dt)?;
    let tf = cfg.test_function(0).map_err(|e| HarnessError::Config(vec![e]))?;
    let e_grad = tf.gradient_energy();
    let mut taus: Vec<f64> = cfg.sample_times.iter().copied().filter(|&t| t > 0.0).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let tau_steps: Vec<usize> = taus.iter().map(|&t| cfg.steps_for(t, n)).collect();

    let ke = eps.len();
    let mut integrands: Vec<Integrand> = blocks.iter().map(|&l| Integrand::QField(l)).collect();
    integrands.push(Integrand::PairCurrent);
    integrands.push(Integrand::Curvature);
    integrands.push(Integrand::Surrogate);
    let (i_pair, i_curv, i_sur) = (ke, ke + 1, ke + 2);
    let width = integrands.len();
    let block_steps = setup.block_steps;

    // per replicate: [D_k (ke−1)] [BG-ε (ke)] [EC1 τ] [surrogate τ]
    let reduce = |obs: &BlockIntegrals| {
        let nc = obs.copies();
        let cps = obs.checkpoints();
        let at = |s: usize| cps.binary_search(&s).expect("checkpoint");
        let mut out = vec![0.0; (ke - 1) + ke + 2 * taus.len()];
        for b in &obs.blocks {
            let last = b.values.last().expect("block end");
            for i in 0..nc {
                let v = |k: usize| last[k * nc + i];
                for k in 0..ke - 1 {
                    out[k] += (v(k) - v(k + 1)).powi(2);
                }
                for k in 0..ke {
                    out[ke - 1 + k] += (v(i_pair) - v(k)).powi(2);
                }
                for (ti, &s) in tau_steps.iter().enumerate() {
                    let row = if s == block_steps { last } else { &b.values[at(s)] };
                    out[2 * ke - 1 + ti] += row[i_curv * nc + i].powi(2);
                    out[2 * ke - 1 + taus.len() + ti] += row[i_sur * nc + i].powi(2);
                }
            }
        }
        let count = (obs.blocks.len() * nc) as f64;
        out.iter_mut().for_each(|x| *x /= count);
        debug_assert_eq!(width, integrands.len());
        out
    };
    let (rows, blowups) = run_blocks(cfg, Suite::Ec, &setup, cfg.dt, &integrands, &tau_steps, reduce)?;

    let mut report = new_report(cfg, Suite::Ec);
    report.quadrature = block_quadrature(cfg);
    report.checks.push(blowup_check(&blowups));
    let t = setup.t_block;
    report.constants.insert("E_grad_phi".into(), e_grad);
    let mut kappa2: f64 = 0.0;
    for k in 0..ke - 1 {
        let e = Estimate::from_samples(&column(&rows, k));
        let params = [("eps", eps[k]), ("delta", eps[k + 1]), ("n", n as f64), ("t_minus_s", t)];
        report.points.push(GridPoint::new("ec2", &params, &e));
        let norm = e.scaled(1.0 / (t * eps[k] * e_grad));
        kappa2 = kappa2.max(norm.mean);
        report.points.push(GridPoint::new("ec2-normalized", &params, &norm));
    }
    for k in 0..ke.saturating_sub(2) {
        let (ratio, se) = ratio_of_means(&column(&rows, k), &column(&rows, k + 1));
        let pass = ratio >= HALVING_WINDOW.0 && ratio <= HALVING_WINDOW.1;
        report.checks.push(CheckRecord::new(
            &format!("ec2-halving[eps={}]", eps[k + 1]),
            ratio,
            pass,
            format!(
                "D({}, {}) / D({}, {}) = {ratio:.4} ± {:.4} (95%), window [{}, {}]",
                eps[k + 1],
                eps[k + 2],
                eps[k],
                eps[k + 1],
                1.96 * se,
                HALVING_WINDOW.0,
                HALVING_WINDOW.1
            ),
        ));
    }
    for k in 0..ke {
        let e = Estimate::from_samples(&column(&rows, ke - 1 + k));
        let params = [("eps", eps[k]), ("l", blocks[k] as f64), ("n", n as f64), ("t_minus_s", t)];
        report.points.push(GridPoint::new("bg-eps-normalized", &params, &e.scaled(1.0 / (t * eps[k] * e_grad))));
    }
    let mut kappa1: f64 = 0.0;
    for (name, offset) in [("ec1", 2 * ke - 1), ("surrogate", 2 * ke - 1 + taus.len())] {
        let mut ys = Vec::new();
        for (ti, &tau) in taus.iter().enumerate() {
            let e = Estimate::from_samples(&column(&rows, offset + ti));
            let tau_macro = tau * cfg.micro_per_unit(n) / n as f64;
            let params = [("t_minus_s", tau_macro), ("n", n as f64)];
            report.points.push(GridPoint::new(name, &params, &e));
            let norm = e.scaled(1.0 / (tau_macro * e_grad));
            if name == "ec1" {
                kappa1 = kappa1.max(norm.mean);
            }
            report.points.push(GridPoint::new(&format!("{name}-normalized"), &params, &norm));
            ys.push(e.mean);
        }
        let xs: Vec<f64> = taus.iter().map(|&t| t * cfg.micro_per_unit(n) / n as f64).collect();
        report.fits.push(FitRecord::new(
            &format!("{name}-tau"),
            "t_minus_s",
            &[("n", n as f64)],
            log_log_fit(&xs, &ys),
            EC1_EXPONENT_WINDOW,
        ));
    }
    report.constants.insert("kappa_ec1".into(), kappa1);
    report.constants.insert("kappa_ec2".into(), kappa2);
    Ok(report.finalize())
}

// ---------------------------------------------------------------------------
// linear baseline

/// `(e^{tΔ/2})_{i,i+r}` on `Z_M` via the circulant eigendecomposition.
pub fn heat_kernel(sites: usize, t: f64, r: usize) -> f64 {
    (0..sites)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * (k * r % sites) as f64 / sites as f64;
            (-0.5 * laplacian_eigenvalue(k, sites) * t).exp() * theta.cos()
        })
        .sum::<f64>()
        / sites as f64
}

struct CovarianceProbe {
    targets: Vec<usize>,
    phi: Option<SampledTestFunction>,
    u0: Vec<f64>,
    x0: f64,
    total0: f64,
    /// Per target: folded lag covariances, field product, momentum drift.
    out: Vec<(Vec<f64>, f64, f64)>,
}

impl Observer for CovarianceProbe {
    fn observe(&mut self, snap: &Snapshot<'_>) {
        let u = snap.state;
        let m = u.len();
        if snap.step == 0 {
            self.u0 = u.to_vec();
            self.x0 = self.phi.as_ref().map_or(0.0, |f| field_value(u, f));
            self.total0 = u.iter().sum();
        }
        if self.targets.binary_search(&snap.step).is_err() {
            return;
        }
        let raw: Vec<f64> = (0..m)
            .map(|r| (0..m).map(|i| u[(i + r) % m] * self.u0[i]).sum::<f64>() / m as f64)
            .collect();
        let folded = (0..=m / 2).map(|r| 0.5 * (raw[r] + raw[(m - r) % m])).collect();
        let x = self.phi.as_ref().map_or(0.0, |f| field_value(u, f));
        let total: f64 = u.iter().sum();
        self.out.push((folded, x * self.x0, (total - self.total0).abs()));
    }
}

/// Space-time covariance at `γ = 0` against the heat-semigroup oracle.
pub fn run_linear_baseline(cfg: &ExperimentConfig) -> Result<EstimateReport, HarnessError> {
    validated(cfg, Suite::BaselineOu)?;
    let n = cfg.n_values[0];
    let m = cfg.sites_for(n);
    let p = ScalingParams::with_gamma(n, 0.0, m)?;
    let tf = cfg.test_function(0).map_err(|e| HarnessError::Config(vec![e]))?;
    let phi = SampledTestFunction::new(&tf, n, m, 0).ok();
    let mut times = cfg.sample_times.clone();
    if times.is_empty() {
        times.push(cfg.horizon);
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    let steps: Vec<usize> = times.iter().map(|&t| cfg.steps_for(t, n)).collect();
    let total = cfg.steps_for(cfg.horizon, n).max(*steps.last().expect("time"));
    let icfg = IntegratorConfig { scheme: cfg.scheme, dt: cfg.dt, t_end: total as f64 * cfg.dt, record_stride: 1 };
    let seed = suite_seed(cfg, Suite::BaselineOu, n);
    let results = parallel(cfg, cfg.ensemble, |r| {
        let mut rng = NoiseStream::new(seed, r);
        let u0 = sample_invariant(&mut rng, m)?;
        let mut probe = CovarianceProbe {
            targets: steps.clone(),
            phi: phi.clone(),
            u0: Vec::new(),
            x0: 0.0,
            total0: 0.0,
            out: Vec::new(),
        };
        simulate(&u0, &p, &icfg, cfg.nonlinearity, &mut rng, &mut [&mut probe])?;
        Ok(probe.out)
    })?;
    let (rows, blowups) = partition(results)?;

    let mut report = new_report(cfg, Suite::BaselineOu);
    report.quadrature = "exact observation times; lag covariances averaged over sites and folded r ↔ M − r".into();
    report.checks.push(blowup_check(&blowups));
    if cfg.coupling.is_some_and(|g| g != 0.0) {
        report.notes.push("coupling forced to 0 for the linear baseline".into());
    }
    let mut momentum_gap: f64 = 0.0;
    for (ti, &t) in times.iter().enumerate() {
        let micro = t * cfg.micro_per_unit(n);
        for r in 0..=m / 2 {
            let e = Estimate::from_samples(&rows.iter().map(|x| x[ti].0[r]).collect::<Vec<_>>());
            let target = heat_kernel(m, micro, r);
            let tol = 3.0 * e.se();
            report.points.push(GridPoint::new("covariance", &[("t", t), ("r", r as f64)], &e).against(target, tol));
        }
        if let Some(f) = &phi {
            let w = f.phi();
            let kernel: Vec<f64> = (0..m).map(|r| heat_kernel(m, micro, r)).collect();
            let mut contraction = 0.0;
            for i in 0..m {
                if w[i] == 0.0 {
                    continue;
                }
                for j in 0..m {
                    contraction += w[i] * w[j] * kernel[(i + m - j) % m];
                }
            }
            contraction /= (n as f64).sqrt();
            let e = Estimate::from_samples(&rows.iter().map(|x| x[ti].1).collect::<Vec<_>>());
            let tol = 3.0 * e.se();
            report.points.push(GridPoint::new("field-covariance", &[("t", t)], &e).against(contraction, tol));
        }
        for x in &rows {
            momentum_gap = momentum_gap.max(x[ti].2);
        }
    }
    report.checks.push(CheckRecord::new(
        "momentum-mode-constant",
        momentum_gap,
        momentum_gap <= 1e-9,
        "max |Σu(t) − Σu(0)| over replicates and sample times",
    ));
    Ok(report.finalize())
}

// ---------------------------------------------------------------------------
// fixed-time field statistics

/// White-noise statistics of `X^n_t(φ)` at a fixed macroscopic time, pooled
/// over replicates and disjoint spatial copies.
pub fn run_fixed_time_field(cfg: &ExperimentConfig) -> Result<EstimateReport, HarnessError> {
    validated(cfg, Suite::FixedTime)?;
    let n = cfg.n_values[0];
    let m = cfg.sites_for(n);
    let battery: Vec<TestFunction> = (0..cfg.test_functions.len())
        .map(|i| cfg.test_function(i))
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::Config(vec![e]))?;
    let window = battery
        .iter()
        .map(|tf| SampledTestFunction::new(tf, n, m, 0).map(|f| f.window()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .max()
        .expect("battery");
    let fit = max_copies(m, window);
    let k = cfg.spatial_copies.unwrap_or(fit);
    if k > fit {
        return Err(HarnessError::Config(vec![format!("spatial_copies = {k} exceeds the {fit} that fit")]));
    }
    let offsets = copy_offsets(m, k);
    // fields[i·k + c] = test function i on copy c
    let fields: Vec<SampledTestFunction> = battery
        .iter()
        .flat_map(|tf| offsets.iter().map(move |&o| SampledTestFunction::new(tf, n, m, o)))
        .collect::<Result<_, _>>()?;
    let p = ScalingParams::with_gamma(n, cfg.coupling_for(n), m)?;
    let t_micro = cfg.horizon * cfg.micro_per_unit(n);
    let steps = cfg.steps_for(cfg.horizon, n);
    let icfg = integrator(cfg, t_micro);
    let seed = suite_seed(cfg, Suite::FixedTime, n);
    struct Pair<'a> {
        fields: &'a [SampledTestFunction],
        last: usize,
        at0: Vec<f64>,
        at_t: Vec<f64>,
    }
    impl Observer for Pair<'_> {
        fn observe(&mut self, snap: &Snapshot<'_>) {
            let vals = || self.fields.iter().map(|f| field_value(snap.state, f)).collect::<Vec<_>>();
            if snap.step == 0 {
                self.at0 = vals();
            }
            if snap.step == self.last {
                self.at_t = vals();
            }
        }
    }
    let results = parallel(cfg, cfg.ensemble, |r| {
        let mut rng = NoiseStream::new(seed, r);
        let u0 = sample_invariant(&mut rng, m)?;
        let mut obs = Pair { fields: &fields, last: steps, at0: Vec::new(), at_t: Vec::new() };
        simulate(&u0, &p, &icfg, cfg.nonlinearity, &mut rng, &mut [&mut obs])?;
        Ok((obs.at0, obs.at_t))
    })?;
    let (rows, blowups) = partition(results)?;

    let mut report = new_report(cfg, Suite::FixedTime);
    let t_macro = t_micro / n as f64;
    report.quadrature = format!("field read at the final step, t = {t_macro} (macro)");
    report.checks.push(blowup_check(&blowups));
    report.constants.insert("copies".into(), k as f64);
    for (i, tf) in battery.iter().enumerate() {
        let pooled = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
            rows.iter().flat_map(|row| (0..k).map(move |c| pick(row)[i * k + c])).collect()
        };
        let xt = pooled(&|r| &r.1);
        let x0 = pooled(&|r| &r.0);
        let fam = tf.spec().family();
        let params = [("phi", i as f64), ("n", n as f64), ("t", t_macro)];
        let e = Estimate::from_samples(&xt);
        report.points.push(GridPoint::new(&format!("mean[{fam}]"), &params, &e).against(0.0, 3.0 * e.se()));
        let energy = tf.energy();
        let en = discrete_energy(fields[i * k].phi(), n);
        let plain = Estimate::from_samples(&xt.iter().map(|x| x * x).collect::<Vec<_>>()).scaled(1.0 / energy);
        report.points.push(GridPoint::new(&format!("second-moment-plain[{fam}]"), &params, &plain));
        // X_0 is exactly Gaussian with variance E_n, so X_t² − X_0² + E_n is
        // an unbiased estimator of E[X_t²] with far smaller variance.
        let cv: Vec<f64> = xt.iter().zip(&x0).map(|(a, b)| a * a - b * b + en).collect();
        let sq = Estimate::from_samples(&cv).scaled(1.0 / energy);
        report.points.push(GridPoint::new(&format!("second-moment-ratio[{fam}]"), &params, &sq).against(1.0, cfg.tolerance));
        let (kurt, kse) = kurtosis(&xt);
        let ke = Estimate { mean: kurt, sd: kse, replicates: 1 };
        report.points.push(GridPoint::new(&format!("kurtosis[{fam}]"), &params, &ke).against(3.0, 1.96 * kse));
        let sq0 = Estimate::from_samples(&x0.iter().map(|x| x * x).collect::<Vec<_>>());
        let p0 = [("phi", i as f64), ("n", n as f64), ("t", 0.0)];
        report.points.push(GridPoint::new(&format!("t0-second-moment[{fam}]"), &p0, &sq0).against(en, 3.0 * sq0.se()));
    }
    let discrete_inner = |a: usize, b: usize| {
        fields[a].phi().iter().zip(fields[b].phi()).map(|(x, y)| x * y).sum::<f64>() / (n as f64).sqrt()
    };
    // Products at time t; the same product at time 0 serves as a control
    // variate whose mean is the exact discrete inner product.
    let products = |pairs: &[(usize, usize)]| -> (Vec<f64>, Vec<f64>) {
        let mut plain = Vec::new();
        let mut cv = Vec::new();
        for row in &rows {
            for &(a, b) in pairs {
                plain.push(row.1[a] * row.1[b]);
                cv.push(row.1[a] * row.1[b] - row.0[a] * row.0[b] + discrete_inner(a, b));
            }
        }
        (plain, cv)
    };
    if k >= 2 {
        // cyclically neighbouring copies of the first test function have
        // disjoint supports; with two copies there is a single pair
        let count = if k == 2 { 1 } else { k };
        let pairs: Vec<(usize, usize)> = (0..count).map(|c| (c, (c + 1) % k)).collect();
        let (plain, cv) = products(&pairs);
        let params = [("n", n as f64), ("t", t_macro)];
        report.points.push(GridPoint::new("disjoint-covariance-plain", &params, &Estimate::from_samples(&plain)));
        let e = Estimate::from_samples(&cv);
        report.points.push(GridPoint::new("disjoint-covariance", &params, &e).against(discrete_inner(0, 1), e.half_width()));
    }
    for i in 0..battery.len() {
        for j in i + 1..battery.len() {
            let pairs: Vec<(usize, usize)> = (0..k).map(|c| (i * k + c, j * k + c)).collect();
            let e = Estimate::from_samples(&products(&pairs).1);
            let target = battery[i].inner(&battery[j]);
            let params = [("phi", i as f64), ("psi", j as f64), ("t", t_macro)];
            report.points.push(GridPoint::new("cross-covariance", &params, &e).against(target, e.half_width()));
        }
    }
    Ok(report.finalize())
}

// ---------------------------------------------------------------------------
// single trajectory

/// One trajectory with its recorded states and field decomposition.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub summary: TrajectorySummary,
    pub params: ScalingParams,
    /// `(microscopic time, state)` at every recorded step.
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub series: FieldSeries,
}

pub fn run_trajectory(cfg: &ExperimentConfig) -> Result<Trajectory, HarnessError> {
    validated(cfg, Suite::Simulate)?;
    let n = cfg.n_values[0];
    let m = cfg.sites_for(n);
    let gamma = cfg.coupling_for(n);
    let p = ScalingParams::with_gamma(n, gamma, m)?;
    let tf = cfg.test_function(0).map_err(|e| HarnessError::Config(vec![e]))?;
    let f = SampledTestFunction::new(&tf, n, m, 0)?;
    let mut eps: Vec<f64> = cfg.eps_values.clone();
    eps.retain(|&e| epsilon_block(e, n).is_ok());
    let mut rec = FieldRecorder::new(f, gamma, &eps)?;
    struct States(Vec<(f64, Vec<f64>)>);
    impl Observer for States {
        fn observe(&mut self, snap: &Snapshot<'_>) {
            self.0.push((snap.time, snap.state.to_vec()));
        }
    }
    let mut states = States(Vec::new());
    let seed = suite_seed(cfg, Suite::Simulate, n);
    let mut rng = NoiseStream::new(seed, 0);
    let u0 = sample_invariant(&mut rng, m)?;
    let t_micro = cfg.horizon * cfg.micro_per_unit(n);
    let summary = simulate(&u0, &p, &integrator(cfg, t_micro), cfg.nonlinearity, &mut rng, &mut [&mut rec, &mut states])?;
    Ok(Trajectory { summary, params: p, snapshots: states.0, series: rec.into_series() })
}
