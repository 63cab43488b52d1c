//! Time stepping for the lattice SDE
//! `du_j = ½Δu_j dt + γB_j(u) dt + dξ_j − dξ_{j−1}` on the torus.
//!
//! Two schemes are provided:
//!
//! * `Euler`: explicit Euler–Maruyama with conservative noise
//!   `η_j − η_{j−1}`, `η_j ~ N(0, dt)`.
//! * `OuSplitting`: an Euler kick `u ← u + dt·γB(u)` followed by the exact
//!   Ornstein–Uhlenbeck flow of `½Δ` plus conservative noise, applied in the
//!   discrete Fourier basis. Mode `k` has rate `λ_k/2` with
//!   `λ_k = 2 − 2cos(2πk/M)`; the zero mode is untouched.
//!
//! Both schemes conserve `Σ_j u_j` up to rounding.

use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{drift_into, nonlinear_drift_into, LatticeError, LatticeState, Nonlinearity, ScalingParams};
use crate::rng::NoiseStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Euler,
    #[default]
    OuSplitting,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Euler => "euler",
            Scheme::OuSplitting => "ou-splitting",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "ou-splitting" | "splitting" => Ok(Scheme::OuSplitting),
            other => Err(format!("unknown scheme `{other}` (expected euler | ou-splitting)")),
        }
    }
}

/// Stepping configuration. Times are microscopic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    pub record_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { scheme: Scheme::OuSplitting, dt: 0.01, t_end: 1.0, record_stride: 1 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("dt must be positive and finite, got {0}")]
    NonPositiveDt(f64),
    #[error("euler scheme requires dt < 1 (spectrum of ½Δ lies in [-2, 0]), got dt = {0}")]
    EulerUnstable(f64),
    #[error("t_end must be 0 or at least dt (t_end = {t_end}, dt = {dt})")]
    HorizonTooShort { t_end: f64, dt: f64 },
    #[error("record_stride must be positive")]
    ZeroStride,
}

impl IntegratorConfig {
    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<ConfigError> {
        let mut out = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            out.push(ConfigError::NonPositiveDt(self.dt));
        } else if self.scheme == Scheme::Euler && self.dt >= 1.0 {
            out.push(ConfigError::EulerUnstable(self.dt));
        }
        if !(self.t_end.is_finite() && (self.t_end == 0.0 || self.t_end >= self.dt)) {
            out.push(ConfigError::HorizonTooShort { t_end: self.t_end, dt: self.dt });
        }
        if self.record_stride == 0 {
            out.push(ConfigError::ZeroStride);
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.violations().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("lattice size mismatch: state has {state} sites, parameters expect {params}")]
    SizeMismatch { state: usize, params: usize },
    #[error("non-finite state at step {step} (seed {seed}, replicate {replicate}, site {site})")]
    NonFinite { seed: u64, replicate: u64, step: usize, site: usize },
}

/// Draws `u ~ μ_M`, the standard Gaussian product measure on `M` sites.
pub fn sample_invariant(rng: &mut NoiseStream, sites: usize) -> Result<LatticeState, LatticeError> {
    if sites < crate::lattice::MIN_SITES {
        return Err(LatticeError::TooFewSites(sites));
    }
    let mut values = vec![0.0; sites];
    rng.fill_normal(1.0, &mut values);
    Ok(LatticeState::from_parts_unchecked(values, 0.0))
}

/// Conservative noise `d_j = η_j − η_{j−1}` with `η_j ~ N(0, dt)` i.i.d.
pub fn sample_conservative_noise(rng: &mut NoiseStream, dt: f64, sites: usize) -> Vec<f64> {
    let mut eta = vec![0.0; sites];
    rng.fill_normal(dt.sqrt(), &mut eta);
    conservative_difference(&eta)
}

fn conservative_difference(eta: &[f64]) -> Vec<f64> {
    let m = eta.len();
    (0..m).map(|j| eta[j] - eta[(j + m - 1) % m]).collect()
}

/// Eigenvalues `λ_k = 2 − 2cos(2πk/M)` of `−Δ` on the torus.
pub fn laplacian_eigenvalue(k: usize, sites: usize) -> f64 {
    2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / sites as f64).cos()
}

struct Spectral {
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    spectrum: Vec<Complex64>,
    noise: Vec<Complex64>,
    scratch_fwd: Vec<Complex64>,
    scratch_inv: Vec<Complex64>,
    decay: Vec<f64>,
    // Noise amplitude per mode, including the DFT normalization.
    amplitude: Vec<f64>,
}

impl Spectral {
    fn new(sites: usize, dt: f64) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(sites);
        let inverse = planner.plan_fft_inverse(sites);
        let spectrum = forward.make_output_vec();
        let half = spectrum.len();
        let mut decay = vec![1.0; half];
        let mut amplitude = vec![0.0; half];
        let m = sites as f64;
        for k in 1..half {
            let lambda = laplacian_eigenvalue(k, sites);
            decay[k] = (-0.5 * lambda * dt).exp();
            let b = (-(-lambda * dt).exp_m1()).sqrt();
            let nyquist = sites.is_multiple_of(2) && k == sites / 2;
            amplitude[k] = if nyquist { b * m.sqrt() } else { b * (0.5 * m).sqrt() };
        }
        Self {
            scratch_fwd: forward.make_scratch_vec(),
            scratch_inv: inverse.make_scratch_vec(),
            noise: vec![Complex64::new(0.0, 0.0); half],
            forward,
            inverse,
            spectrum,
            decay,
            amplitude,
        }
    }

    fn is_nyquist(&self, k: usize, sites: usize) -> bool {
        sites.is_multiple_of(2) && k == sites / 2
    }
}

/// Noise projection weights for one observed test vector.
struct Probe {
    // φ_j − φ_{j+1}, for the real-space noise of the Euler scheme.
    differences: Vec<f64>,
    // Half-spectrum of φ, for the spectral noise of the splitting scheme.
    spectrum: Vec<Complex64>,
}

/// Reusable stepping engine with preallocated buffers.
///
/// Each step also projects the realized noise increment onto every
/// registered probe vector `φ`, i.e. `⟨φ, noise⟩ = Σ_j φ_j (η_j − η_{j−1})`
/// for Euler and its spectral counterpart for the splitting scheme.
pub struct Stepper {
    scheme: Scheme,
    dt: f64,
    gamma: f64,
    kind: Nonlinearity,
    sites: usize,
    eta: Vec<f64>,
    scratch: Vec<f64>,
    spectral: Option<Spectral>,
    probes: Vec<Probe>,
    projections: Vec<f64>,
}

impl Stepper {
    pub fn new(p: &ScalingParams, scheme: Scheme, dt: f64, kind: Nonlinearity) -> Self {
        let sites = p.sites;
        Self {
            scheme,
            dt,
            gamma: p.gamma,
            kind,
            sites,
            eta: vec![0.0; sites],
            scratch: vec![0.0; sites],
            spectral: (scheme == Scheme::OuSplitting).then(|| Spectral::new(sites, dt)),
            probes: Vec::new(),
            projections: Vec::new(),
        }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Registers a probe vector and returns its index in
    /// [`Stepper::projections`].
    pub fn add_probe(&mut self, weights: &[f64]) -> usize {
        assert_eq!(weights.len(), self.sites, "probe length must match lattice");
        let m = self.sites;
        let differences = (0..m).map(|j| weights[j] - weights[(j + 1) % m]).collect();
        let spectrum = match &self.spectral {
            Some(s) => {
                let mut input = weights.to_vec();
                let mut out = s.forward.make_output_vec();
                s.forward.process(&mut input, &mut out).expect("fft length mismatch");
                out
            }
            None => Vec::new(),
        };
        self.probes.push(Probe { differences, spectrum });
        self.projections.push(0.0);
        self.probes.len() - 1
    }

    /// Noise projections of the most recent step.
    pub fn projections(&self) -> &[f64] {
        &self.projections
    }

    /// Advances `u` by one step. `rng = None` switches the noise off.
    pub fn step(&mut self, u: &mut [f64], rng: Option<&mut NoiseStream>) {
        debug_assert_eq!(u.len(), self.sites);
        match self.scheme {
            Scheme::Euler => self.euler(u, rng),
            Scheme::OuSplitting => self.splitting(u, rng),
        }
    }

    fn euler(&mut self, u: &mut [f64], rng: Option<&mut NoiseStream>) {
        let m = self.sites;
        let dt = self.dt;
        match rng {
            Some(r) => r.fill_normal(dt.sqrt(), &mut self.eta),
            None => self.eta.iter_mut().for_each(|e| *e = 0.0),
        }
        drift_into(u, self.gamma, self.kind, &mut self.scratch);
        let eta = &self.eta;
        u[0] += dt * self.scratch[0] + (eta[0] - eta[m - 1]);
        for j in 1..m {
            u[j] += dt * self.scratch[j] + (eta[j] - eta[j - 1]);
        }
        for (probe, out) in self.probes.iter().zip(self.projections.iter_mut()) {
            *out = probe.differences.iter().zip(eta).map(|(d, e)| d * e).sum();
        }
    }

    fn splitting(&mut self, u: &mut [f64], rng: Option<&mut NoiseStream>) {
        let m = self.sites;
        if self.gamma != 0.0 {
            nonlinear_drift_into(u, self.gamma, self.kind, &mut self.scratch);
            for (x, b) in u.iter_mut().zip(&self.scratch) {
                *x += self.dt * b;
            }
        }
        let s = self.spectral.as_mut().expect("spectral buffers");
        s.forward
            .process_with_scratch(u, &mut s.spectrum, &mut s.scratch_fwd)
            .expect("fft length mismatch");
        let half = s.spectrum.len();
        match rng {
            Some(r) => {
                s.noise[0] = Complex64::new(0.0, 0.0);
                for k in 1..half {
                    let a = s.amplitude[k];
                    s.noise[k] = if sites_nyquist(m, k) {
                        Complex64::new(a * r.standard_normal(), 0.0)
                    } else {
                        let re = r.standard_normal();
                        let im = r.standard_normal();
                        Complex64::new(a * re, a * im)
                    };
                }
            }
            None => s.noise.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0)),
        }
        for k in 1..half {
            s.spectrum[k] = s.spectrum[k] * s.decay[k] + s.noise[k];
        }
        // The c2r transform requires exactly real DC and Nyquist bins.
        s.spectrum[0].im = 0.0;
        if m.is_multiple_of(2) {
            s.spectrum[half - 1].im = 0.0;
        }
        s.inverse
            .process_with_scratch(&mut s.spectrum, u, &mut s.scratch_inv)
            .expect("fft length mismatch");
        let inv_m = 1.0 / m as f64;
        u.iter_mut().for_each(|x| *x *= inv_m);

        for (probe, out) in self.probes.iter().zip(self.projections.iter_mut()) {
            let mut acc = 0.0;
            for k in 1..half {
                let w = if s.is_nyquist(k, m) { 1.0 } else { 2.0 };
                let z = probe.spectrum[k].conj() * s.noise[k];
                acc += w * z.re;
            }
            *out = acc * inv_m;
        }
    }

    /// Splitting step driven by a prescribed real-space increment `eta`
    /// (`η_j ~ N(0, dt)`): the conservative noise `η_j − η_{j−1}` is
    /// filtered to the exact OU covariance. Used to compare the schemes under
    /// matched noise.
    #[cfg(test)]
    pub(crate) fn splitting_matched(&mut self, u: &mut [f64], eta: &[f64]) {
        let m = self.sites;
        let d = conservative_difference(eta);
        let s = self.spectral.as_mut().expect("spectral buffers");
        let mut d_in = d.clone();
        let mut d_hat = s.forward.make_output_vec();
        s.forward.process(&mut d_in, &mut d_hat).unwrap();
        if self.gamma != 0.0 {
            nonlinear_drift_into(u, self.gamma, self.kind, &mut self.scratch);
            for (x, b) in u.iter_mut().zip(&self.scratch) {
                *x += self.dt * b;
            }
        }
        s.forward.process(u, &mut s.spectrum).unwrap();
        let half = s.spectrum.len();
        for k in 1..half {
            let lambda = laplacian_eigenvalue(k, m);
            let filt = (-(-lambda * self.dt).exp_m1() / (lambda * self.dt)).sqrt();
            s.spectrum[k] = s.spectrum[k] * s.decay[k] + d_hat[k] * filt;
        }
        s.spectrum[0].im = 0.0;
        if m.is_multiple_of(2) {
            s.spectrum[half - 1].im = 0.0;
        }
        s.inverse.process(&mut s.spectrum, u).unwrap();
        u.iter_mut().for_each(|x| *x /= m as f64);
    }
}

#[inline]
fn sites_nyquist(m: usize, k: usize) -> bool {
    m.is_multiple_of(2) && k == m / 2
}

fn check_finite(u: &[f64]) -> Option<usize> {
    u.iter().position(|v| !v.is_finite())
}

fn one_step(
    u: &LatticeState,
    p: &ScalingParams,
    cfg: &IntegratorConfig,
    scheme: Scheme,
    rng: &mut NoiseStream,
) -> Result<LatticeState, SimulationError> {
    cfg.validate()?;
    if u.sites() != p.sites {
        return Err(SimulationError::SizeMismatch { state: u.sites(), params: p.sites });
    }
    let mut stepper = Stepper::new(p, scheme, cfg.dt, Nonlinearity::SasamotoSpohn);
    let mut values = u.values().to_vec();
    stepper.step(&mut values, Some(rng));
    if let Some(site) = check_finite(&values) {
        return Err(SimulationError::NonFinite {
            seed: rng.seed(),
            replicate: rng.replicate_id(),
            step: 1,
            site,
        });
    }
    Ok(LatticeState::from_parts_unchecked(values, u.time() + cfg.dt))
}

/// One explicit Euler–Maruyama step.
pub fn euler_step(
    u: &LatticeState,
    p: &ScalingParams,
    cfg: &IntegratorConfig,
    rng: &mut NoiseStream,
) -> Result<LatticeState, SimulationError> {
    one_step(u, p, cfg, Scheme::Euler, rng)
}

/// One kick + exact-OU splitting step.
pub fn ou_splitting_step(
    u: &LatticeState,
    p: &ScalingParams,
    cfg: &IntegratorConfig,
    rng: &mut NoiseStream,
) -> Result<LatticeState, SimulationError> {
    one_step(u, p, cfg, Scheme::OuSplitting, rng)
}

/// What an observer sees at a recorded time.
pub struct Snapshot<'a> {
    pub step: usize,
    /// Microscopic time.
    pub time: f64,
    pub state: &'a [f64],
    /// Cumulative noise projections `Σ_steps ⟨φ, noise⟩` for the probes the
    /// observer registered, in registration order.
    pub noise: &'a [f64],
}

pub trait Observer {
    /// Probe vectors whose realized noise integrals this observer needs.
    fn probes(&self) -> Vec<Vec<f64>> {
        Vec::new()
    }

    fn observe(&mut self, snapshot: &Snapshot<'_>);
}

/// Records a scalar functional at every snapshot.
pub struct SeriesObserver<F> {
    f: F,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl<F: FnMut(&[f64]) -> f64> SeriesObserver<F> {
    pub fn new(f: F) -> Self {
        Self { f, times: Vec::new(), values: Vec::new() }
    }
}

impl<F: FnMut(&[f64]) -> f64> Observer for SeriesObserver<F> {
    fn observe(&mut self, snapshot: &Snapshot<'_>) {
        self.times.push(snapshot.time);
        self.values.push((self.f)(snapshot.state));
    }
}

#[derive(Debug, Clone)]
pub struct TrajectorySummary {
    pub seed: u64,
    pub replicate: u64,
    pub steps: usize,
    pub snapshots: usize,
    pub final_state: LatticeState,
    /// Cumulative noise projection per registered probe, over all observers.
    pub noise_integrals: Vec<f64>,
}

/// Advances `u0` to `cfg.t_end`, calling each observer at step 0, every
/// `record_stride` steps, and at the final step.
pub fn simulate(
    u0: &LatticeState,
    p: &ScalingParams,
    cfg: &IntegratorConfig,
    kind: Nonlinearity,
    rng: &mut NoiseStream,
    observers: &mut [&mut dyn Observer],
) -> Result<TrajectorySummary, SimulationError> {
    cfg.validate()?;
    if u0.sites() != p.sites {
        return Err(SimulationError::SizeMismatch { state: u0.sites(), params: p.sites });
    }
    let mut stepper = Stepper::new(p, cfg.scheme, cfg.dt, kind);
    let mut ranges = Vec::with_capacity(observers.len());
    for obs in observers.iter() {
        let start = stepper.projections().len();
        for w in obs.probes() {
            stepper.add_probe(&w);
        }
        ranges.push(start..stepper.projections().len());
    }
    let mut cumulative = vec![0.0; stepper.projections().len()];
    let mut u = u0.values().to_vec();
    let t0 = u0.time();
    let steps = cfg.steps();
    let mut snapshots = 0;

    let emit = |step: usize, u: &[f64], cumulative: &[f64], observers: &mut [&mut dyn Observer]| {
        let time = t0 + step as f64 * cfg.dt;
        for (obs, range) in observers.iter_mut().zip(&ranges) {
            obs.observe(&Snapshot { step, time, state: u, noise: &cumulative[range.clone()] });
        }
    };

    emit(0, &u, &cumulative, observers);
    snapshots += 1;
    for step in 1..=steps {
        stepper.step(&mut u, Some(rng));
        for (c, x) in cumulative.iter_mut().zip(stepper.projections()) {
            *c += x;
        }
        if let Some(site) = check_finite(&u) {
            return Err(SimulationError::NonFinite {
                seed: rng.seed(),
                replicate: rng.replicate_id(),
                step,
                site,
            });
        }
        if step % cfg.record_stride == 0 || step == steps {
            emit(step, &u, &cumulative, observers);
            snapshots += 1;
        }
    }
    Ok(TrajectorySummary {
        seed: rng.seed(),
        replicate: rng.replicate_id(),
        steps,
        snapshots,
        final_state: LatticeState::from_parts_unchecked(u, t0 + steps as f64 * cfg.dt),
        noise_integrals: cumulative,
    })
}
