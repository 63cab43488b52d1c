//! Rescaled fluctuation fields and the lattice statistics built from them.
//!
//! For a test function `φ` and scaling parameter `n`, the lattice samples are
//! `φ^n_j = φ(j/√n)`, with discrete gradient `∇^nφ^n_j = √n(φ^n_{j+1} − φ^n_j)`
//! and Laplacian `Δ^nφ^n_j = n(φ^n_{j+1} + φ^n_{j−1} − 2φ^n_j)`. The field is
//! `X^n(φ) = n^{−1/4} Σ_j u_j φ^n_j` and discrete energies are
//! `E_n(ψ) = n^{−1/2} Σ_j ψ_j²`.
//!
//! Along a trajectory `X^n_t − X^n_0 = S^n_t + B^n_t + M^n_t` where, in
//! macroscopic time,
//!
//! * `dS^n = ½ n^{−1/4} Σ_j u_j Δ^nφ^n_j dt`,
//! * `dB^n = −n^{1/4}γ Σ_j w_j ∇^nφ^n_j dt` (equal to `−Σ_j w_j ∇^nφ^n_j dt`
//!   at `γ = n^{−1/4}`),
//! * `M^n` is the noise integral, with quadratic variation `t·E_n(∇^nφ^n)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{Observer, Snapshot};
use crate::lattice::LatticeState;

/// Samples with `|φ| < TRUNCATION·max|φ|` are set to zero.
pub const TRUNCATION: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("state has {state} sites but the test function was sampled on {expected}")]
    TorusMismatch { state: usize, expected: usize },
    #[error("test function window of {window} sites does not fit a torus of {sites} sites")]
    WindowTooLarge { window: usize, sites: usize },
    #[error("invalid test function: {0}")]
    BadSpec(String),
    #[error("closed-form derivative of {family} disagrees with finite differences at x = {x} (error {error:e})")]
    DerivativeMismatch { family: &'static str, x: f64, error: f64 },
    #[error("block size ⌊ε√n⌋ must be at least 1 (ε = {epsilon}, n = {n})")]
    BlockTooSmall { epsilon: f64, n: u64 },
    #[error("block length must be positive")]
    ZeroBlock,
}

/// Smooth, rapidly decaying test functions with closed-form derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum TestFunctionSpec {
    /// `exp(−((x − center)/scale)²)`.
    GaussianBump { center: f64, scale: f64 },
    /// Hermite function `He_k(y) e^{−y²/2}`, `y = (x − center)/scale`.
    Hermite { order: u32, center: f64, scale: f64 },
    /// `ε^{-1}·1_{(0,ε]}` mollified by a Gaussian of width `smoothing`:
    /// `(2ε)^{-1}[erf(y/σ) − erf((y−ε)/σ)]`, `y = x − center`.
    SmoothedIndicator { epsilon: f64, smoothing: f64, center: f64 },
}

impl TestFunctionSpec {
    pub fn gaussian() -> Self {
        TestFunctionSpec::GaussianBump { center: 0.0, scale: 1.0 }
    }

    pub fn family(&self) -> &'static str {
        match self {
            TestFunctionSpec::GaussianBump { .. } => "gaussian-bump",
            TestFunctionSpec::Hermite { .. } => "hermite",
            TestFunctionSpec::SmoothedIndicator { .. } => "indicator-smoothed",
        }
    }
}

/// Probabilists' Hermite polynomial `He_k`.
fn hermite(k: u32, y: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, y);
    if k == 0 {
        return prev;
    }
    for i in 1..k {
        let next = y * cur - i as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// A validated test function with its support half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    spec: TestFunctionSpec,
    /// `|φ(x)| < TRUNCATION·max|φ|` for `|x| > support`.
    support: f64,
    max_abs: f64,
}

impl TestFunction {
    pub fn new(spec: TestFunctionSpec) -> Result<Self, FieldError> {
        let positive = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(FieldError::BadSpec(format!("{what} must be positive, got {v}")))
            }
        };
        match &spec {
            TestFunctionSpec::GaussianBump { center, scale } => {
                positive(*scale, "scale")?;
                if !center.is_finite() {
                    return Err(FieldError::BadSpec("center must be finite".into()));
                }
            }
            TestFunctionSpec::Hermite { order, center, scale } => {
                positive(*scale, "scale")?;
                if *order > 12 || !center.is_finite() {
                    return Err(FieldError::BadSpec(format!("hermite order {order} out of range (≤ 12)")));
                }
            }
            TestFunctionSpec::SmoothedIndicator { epsilon, smoothing, center } => {
                positive(*epsilon, "epsilon")?;
                positive(*smoothing, "smoothing")?;
                if !center.is_finite() {
                    return Err(FieldError::BadSpec("center must be finite".into()));
                }
            }
        }
        let mut tf = TestFunction { spec, support: 0.0, max_abs: 0.0 };
        tf.locate_support();
        tf.check_derivatives()?;
        Ok(tf)
    }

    pub fn gaussian() -> Self {
        Self::new(TestFunctionSpec::gaussian()).expect("valid default test function")
    }

    pub fn spec(&self) -> &TestFunctionSpec {
        &self.spec
    }

    /// Half-width `R` of the symmetric interval `[−R, R]` outside which `φ`
    /// is below the truncation threshold.
    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn max_abs(&self) -> f64 {
        self.max_abs
    }

    fn center_and_width(&self) -> (f64, f64) {
        match self.spec {
            TestFunctionSpec::GaussianBump { center, scale } => (center, scale),
            TestFunctionSpec::Hermite { center, scale, order } => (center, scale * (1.0 + (order as f64).sqrt())),
            TestFunctionSpec::SmoothedIndicator { epsilon, smoothing, center } => {
                (center + 0.5 * epsilon, epsilon + smoothing)
            }
        }
    }

    fn locate_support(&mut self) {
        let (c, w) = self.center_and_width();
        let reach = 60.0 * w;
        let steps = 48_000;
        let h = 2.0 * reach / steps as f64;
        let grid = (0..=steps).map(|i| c - reach + i as f64 * h);
        let max_abs = grid.clone().map(|x| self.value(x).abs()).fold(0.0, f64::max);
        let thr = TRUNCATION * max_abs;
        let support = grid
            .filter(|&x| self.value(x).abs() >= thr)
            .map(|x| x.abs() + h)
            .fold(0.0, f64::max);
        self.max_abs = max_abs;
        self.support = support;
    }

    fn check_derivatives(&self) -> Result<(), FieldError> {
        let (c, w) = self.center_and_width();
        let fine = match self.spec {
            TestFunctionSpec::SmoothedIndicator { smoothing, .. } => smoothing,
            _ => w,
        };
        let h = 1e-4 * fine;
        let xs: Vec<f64> = (0..=400).map(|i| c - 3.0 * w + 6.0 * w * i as f64 / 400.0).collect();
        let max1 = xs.iter().map(|&x| self.derivative(x).abs()).fold(0.0, f64::max);
        let max2 = xs.iter().map(|&x| self.second_derivative(x).abs()).fold(0.0, f64::max);
        for &x in &xs {
            let d1 = (self.value(x + h) - self.value(x - h)) / (2.0 * h);
            let d2 = (self.derivative(x + h) - self.derivative(x - h)) / (2.0 * h);
            let e1 = (d1 - self.derivative(x)).abs();
            let e2 = (d2 - self.second_derivative(x)).abs();
            // central differences are O(h²)
            if e1 > 1e-6 * max1 {
                return Err(FieldError::DerivativeMismatch { family: self.spec.family(), x, error: e1 });
            }
            if e2 > 1e-6 * max2 {
                return Err(FieldError::DerivativeMismatch { family: self.spec.family(), x, error: e2 });
            }
        }
        Ok(())
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.spec {
            TestFunctionSpec::GaussianBump { center, scale } => {
                let y = (x - center) / scale;
                (-y * y).exp()
            }
            TestFunctionSpec::Hermite { order, center, scale } => {
                let y = (x - center) / scale;
                hermite(order, y) * (-0.5 * y * y).exp()
            }
            TestFunctionSpec::SmoothedIndicator { epsilon, smoothing, center } => {
                let y = x - center;
                (libm::erf(y / smoothing) - libm::erf((y - epsilon) / smoothing)) / (2.0 * epsilon)
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self.spec {
            TestFunctionSpec::GaussianBump { center, scale } => {
                let y = (x - center) / scale;
                -2.0 * y / scale * (-y * y).exp()
            }
            TestFunctionSpec::Hermite { order, center, scale } => {
                // d/dy [He_k e^{−y²/2}] = −He_{k+1} e^{−y²/2}
                let y = (x - center) / scale;
                -hermite(order + 1, y) * (-0.5 * y * y).exp() / scale
            }
            TestFunctionSpec::SmoothedIndicator { epsilon, smoothing, center } => {
                let y = x - center;
                let g = |z: f64| (-(z / smoothing).powi(2)).exp();
                let k = 1.0 / (epsilon * smoothing * std::f64::consts::PI.sqrt());
                k * (g(y) - g(y - epsilon))
            }
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self.spec {
            TestFunctionSpec::GaussianBump { center, scale } => {
                let y = (x - center) / scale;
                (4.0 * y * y - 2.0) / (scale * scale) * (-y * y).exp()
            }
            TestFunctionSpec::Hermite { order, center, scale } => {
                let y = (x - center) / scale;
                hermite(order + 2, y) * (-0.5 * y * y).exp() / (scale * scale)
            }
            TestFunctionSpec::SmoothedIndicator { epsilon, smoothing, center } => {
                let y = x - center;
                let s2 = smoothing * smoothing;
                let g = |z: f64| -2.0 * z / s2 * (-(z * z) / s2).exp();
                let k = 1.0 / (epsilon * smoothing * std::f64::consts::PI.sqrt());
                k * (g(y) - g(y - epsilon))
            }
        }
    }

    /// `E(φ) = ∫ φ²`, by composite Simpson quadrature over the support.
    pub fn energy(&self) -> f64 {
        self.integrate(|x| self.value(x).powi(2))
    }

    /// `E(∂_xφ) = ∫ (∂_xφ)²`.
    pub fn gradient_energy(&self) -> f64 {
        self.integrate(|x| self.derivative(x).powi(2))
    }

    /// `∫ φ ψ`.
    pub fn inner(&self, other: &TestFunction) -> f64 {
        let r = self.support.max(other.support);
        simpson(|x| self.value(x) * other.value(x), -r, r, 40_000)
    }

    fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        simpson(f, -self.support, self.support, 40_000)
    }
}

/// Composite Simpson rule with `intervals` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// `E_n(ψ) = n^{−1/2} Σ_j ψ_j²`.
pub fn discrete_energy(psi: &[f64], n: u64) -> f64 {
    psi.iter().map(|x| x * x).sum::<f64>() / (n as f64).sqrt()
}

/// Minimum torus size `8·⌈√n⌉·R` for a test function of half-width `R`.
pub fn required_sites(n: u64, support: f64) -> usize {
    let root = (n as f64).sqrt().ceil();
    (8.0 * root * support).ceil() as usize
}

/// Lattice sampling of a test function, centered at site `offset`.
#[derive(Debug, Clone)]
pub struct SampledTestFunction {
    n: u64,
    offset: i64,
    sqrt_n: f64,
    phi: Vec<f64>,
    gradient: Vec<f64>,
    laplacian: Vec<f64>,
    second_derivative: Vec<f64>,
    window: usize,
}

impl SampledTestFunction {
    pub fn new(tf: &TestFunction, n: u64, sites: usize, offset: i64) -> Result<Self, FieldError> {
        let sqrt_n = (n as f64).sqrt();
        let reach = (tf.support() * sqrt_n).ceil() as usize;
        let window = 2 * reach + 1;
        if window > sites {
            return Err(FieldError::WindowTooLarge { window, sites });
        }
        let thr = TRUNCATION * tf.max_abs();
        let mut phi = vec![0.0; sites];
        let mut second_derivative = vec![0.0; sites];
        let half = (sites / 2) as i64;
        for (s, (p, d2)) in phi.iter_mut().zip(second_derivative.iter_mut()).enumerate() {
            // centered representative of s − offset in [−M/2, M/2)
            let d = (s as i64 - offset + half).rem_euclid(sites as i64) - half;
            let x = d as f64 / sqrt_n;
            if x.abs() > tf.support() {
                continue;
            }
            let v = tf.value(x);
            if v.abs() >= thr {
                *p = v;
            }
            *d2 = tf.second_derivative(x);
        }
        let m = sites;
        let gradient = (0..m).map(|j| sqrt_n * (phi[(j + 1) % m] - phi[j])).collect();
        let laplacian = (0..m)
            .map(|j| n as f64 * (phi[(j + 1) % m] + phi[(j + m - 1) % m] - 2.0 * phi[j]))
            .collect();
        Ok(Self { n, offset, sqrt_n, phi, gradient, laplacian, second_derivative, window })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn sites(&self) -> usize {
        self.phi.len()
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    /// Number of lattice sites spanned by the truncated support.
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// `∇^nφ^n_j = √n(φ^n_{j+1} − φ^n_j)`.
    pub fn gradient(&self) -> &[f64] {
        &self.gradient
    }

    /// `Δ^nφ^n_j = n(φ^n_{j+1} + φ^n_{j−1} − 2φ^n_j)`.
    pub fn laplacian(&self) -> &[f64] {
        &self.laplacian
    }

    /// Samples of the continuum `∂_x²φ(j/√n)`.
    pub fn second_derivative(&self) -> &[f64] {
        &self.second_derivative
    }

    pub fn energy(&self) -> f64 {
        discrete_energy(&self.phi, self.n)
    }

    pub fn gradient_energy(&self) -> f64 {
        discrete_energy(&self.gradient, self.n)
    }

    pub fn laplacian_energy(&self) -> f64 {
        discrete_energy(&self.laplacian, self.n)
    }

    fn n_quarter(&self) -> f64 {
        self.sqrt_n.sqrt()
    }

    fn check(&self, u: &[f64]) -> Result<(), FieldError> {
        if u.len() != self.phi.len() {
            return Err(FieldError::TorusMismatch { state: u.len(), expected: self.phi.len() });
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `X^n(φ) = n^{−1/4} Σ_j u_j φ^n_j`.
pub fn fluctuation_field(u: &LatticeState, f: &SampledTestFunction) -> Result<f64, FieldError> {
    f.check(u.values())?;
    Ok(field_value(u.values(), f))
}

#[inline]
pub(crate) fn field_value(u: &[f64], f: &SampledTestFunction) -> f64 {
    dot(u, &f.phi) / f.n_quarter()
}

/// `½ n^{−1/4} Σ_j u_j Δ^nφ^n_j`, the rate of the symmetric part in
/// macroscopic time.
pub fn symmetric_increment(u: &LatticeState, f: &SampledTestFunction) -> Result<f64, FieldError> {
    f.check(u.values())?;
    Ok(symmetric_rate(u.values(), f))
}

#[inline]
pub(crate) fn symmetric_rate(u: &[f64], f: &SampledTestFunction) -> f64 {
    0.5 * dot(u, &f.laplacian) / f.n_quarter()
}

/// `−Σ_j w_j ∇^nφ^n_j`, the rate of the antisymmetric part in macroscopic
/// time at `γ = n^{−1/4}`. For another coupling multiply by `n^{1/4}γ`.
pub fn antisymmetric_increment(u: &LatticeState, f: &SampledTestFunction) -> Result<f64, FieldError> {
    f.check(u.values())?;
    Ok(antisymmetric_rate(u.values(), f))
}

#[inline]
pub(crate) fn antisymmetric_rate(u: &[f64], f: &SampledTestFunction) -> f64 {
    let m = u.len();
    let g = &f.gradient;
    let mut acc = 0.0;
    for j in 0..m - 1 {
        let (a, b) = (u[j], u[j + 1]);
        acc += (a * a + a * b + b * b) * g[j];
    }
    let (a, b) = (u[m - 1], u[0]);
    acc += (a * a + a * b + b * b) * g[m - 1];
    -acc / 3.0
}

/// `ū^l_j = l^{−1} Σ_{k=1}^{l} u_{j+k}`.
pub fn block_average(u: &LatticeState, j: i64, l: usize) -> Result<f64, FieldError> {
    if l == 0 {
        return Err(FieldError::ZeroBlock);
    }
    Ok((1..=l as i64).map(|k| u.at(j + k)).sum::<f64>() / l as f64)
}

/// `τ_jQ(l, u) = (ū^l_j)² − 1/l`.
pub fn q_statistic(u: &LatticeState, j: i64, l: usize) -> Result<f64, FieldError> {
    let avg = block_average(u, j, l)?;
    Ok(avg * avg - 1.0 / l as f64)
}

/// Block averages `ū^l_j` for every site, by a periodic running sum.
pub(crate) fn block_averages(u: &[f64], l: usize, out: &mut [f64]) {
    let m = u.len();
    let inv = 1.0 / l as f64;
    // window sum over sites j+1..=j+l
    let mut sum: f64 = (1..=l).map(|k| u[k % m]).sum();
    for (j, o) in out.iter_mut().enumerate() {
        *o = sum * inv;
        sum += u[(j + l + 1) % m] - u[(j + 1) % m];
    }
}

fn check_block(l: usize) -> Result<(), FieldError> {
    if l == 0 {
        Err(FieldError::ZeroBlock)
    } else {
        Ok(())
    }
}

/// `Σ_j {u_j u_{j+1} − τ_jQ(l, u)} ∇^nφ^n_j`.
pub fn bg_residual_increment(u: &LatticeState, f: &SampledTestFunction, l: usize) -> Result<f64, FieldError> {
    f.check(u.values())?;
    check_block(l)?;
    let mut avg = vec![0.0; u.sites()];
    block_averages(u.values(), l, &mut avg);
    Ok(bg_residual_rate(u.values(), &avg, l, f.gradient()))
}

#[inline]
pub(crate) fn bg_residual_rate(u: &[f64], block: &[f64], l: usize, weights: &[f64]) -> f64 {
    let m = u.len();
    let inv_l = 1.0 / l as f64;
    let mut acc = 0.0;
    for j in 0..m {
        let w = weights[j];
        if w == 0.0 {
            continue;
        }
        let pair = u[j] * u[(j + 1) % m];
        acc += (pair - (block[j] * block[j] - inv_l)) * w;
    }
    acc
}

/// `Σ_j τ_jQ(l, u) ∇^nφ^n_j`.
#[inline]
pub(crate) fn q_field_rate(block: &[f64], l: usize, weights: &[f64]) -> f64 {
    let inv_l = 1.0 / l as f64;
    block.iter().zip(weights).filter(|(_, &w)| w != 0.0).map(|(a, w)| (a * a - inv_l) * w).sum()
}

/// Exact `E_μ[(Σ_j {u_j u_{j+1} − τ_jQ(l)} ψ_j)²]`.
///
/// The integrand is `uᵀSu − tr S` for a symmetric `S`, so its variance under
/// the standard Gaussian product measure is `2·‖S‖²_F`.
pub fn bg_static_second_moment(weights: &[f64], l: usize) -> Result<f64, FieldError> {
    check_block(l)?;
    let m = weights.len();
    let mut s = std::collections::BTreeMap::<(usize, usize), f64>::new();
    let mut add = |a: usize, b: usize, v: f64| {
        let key = if a <= b { (a, b) } else { (b, a) };
        *s.entry(key).or_insert(0.0) += v;
    };
    let inv = 1.0 / (l * l) as f64;
    for (j, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let k = (j + 1) % m;
        // u_j u_k = uᵀ·½(e_j e_kᵀ + e_k e_jᵀ)·u
        add(j, k, 0.5 * w);
        for a in 1..=l {
            for b in 1..=l {
                let (x, y) = ((j + a) % m, (j + b) % m);
                if x <= y {
                    add(x, y, -w * inv);
                }
            }
        }
    }
    let frob: f64 = s.iter().map(|(&(a, b), v)| if a == b { v * v } else { 2.0 * v * v }).sum();
    Ok(2.0 * frob)
}

/// Block size `⌊ε√n⌋` used for `A^ε`. A `1e-9` guard absorbs the rounding
/// of products such as `0.05·40`.
pub fn epsilon_block(epsilon: f64, n: u64) -> Result<usize, FieldError> {
    let l = (epsilon * (n as f64).sqrt() + 1e-9).floor();
    if !(l >= 1.0) {
        return Err(FieldError::BlockTooSmall { epsilon, n });
    }
    Ok(l as usize)
}

/// `Σ_j τ_jQ(⌊ε√n⌋, u) ∇^nφ^n_j`, the lattice integrand of `A^ε`.
pub fn a_epsilon_increment(u: &LatticeState, f: &SampledTestFunction, epsilon: f64) -> Result<f64, FieldError> {
    f.check(u.values())?;
    let l = epsilon_block(epsilon, f.n())?;
    let mut avg = vec![0.0; u.sites()];
    block_averages(u.values(), l, &mut avg);
    Ok(q_field_rate(&avg, l, f.gradient()))
}

/// `Σ_j φ^n_j {(u_j u_{j+1} − u_j²) + 1}`.
pub fn ucp_statistic_increment(u: &LatticeState, f: &SampledTestFunction) -> Result<f64, FieldError> {
    f.check(u.values())?;
    Ok(ucp_rate(u.values(), f.phi()))
}

#[inline]
pub(crate) fn ucp_rate(u: &[f64], weights: &[f64]) -> f64 {
    let m = u.len();
    let mut acc = 0.0;
    for j in 0..m {
        let w = weights[j];
        if w == 0.0 {
            continue;
        }
        let a = u[j];
        acc += (a * u[(j + 1) % m] - a * a + 1.0) * w;
    }
    acc
}

/// Local observable `g` for the one-block estimate, evaluated at the shifted
/// configuration `τ_j u`. Its support must avoid sites `1..=l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalObservable {
    /// `g(u) = 0`.
    Zero,
    /// `g(u) = u_0² − 1`; centered with `‖g‖²_{L²(μ)} = 2`.
    #[default]
    CenteredSquare,
    /// `g(u) = u_0 u_{−1}`; centered with `‖g‖² = 1`.
    LeftPair,
}

impl LocalObservable {
    #[inline]
    pub fn eval(self, u: &[f64], j: usize) -> f64 {
        let m = u.len();
        match self {
            LocalObservable::Zero => 0.0,
            LocalObservable::CenteredSquare => u[j] * u[j] - 1.0,
            LocalObservable::LeftPair => u[j] * u[(j + m - 1) % m],
        }
    }

    /// `‖g‖²_{L²(μ)}` from Gaussian moments.
    pub fn l2_norm_sq(self) -> f64 {
        match self {
            LocalObservable::Zero => 0.0,
            LocalObservable::CenteredSquare => 2.0,
            LocalObservable::LeftPair => 1.0,
        }
    }
}

/// `Σ_j g(τ_j u)[u_{j+1} − ū^l_j] ψ_j`.
pub fn one_block_increment(
    u: &LatticeState,
    weights: &[f64],
    l: usize,
    g: LocalObservable,
) -> Result<f64, FieldError> {
    check_block(l)?;
    if weights.len() != u.sites() {
        return Err(FieldError::TorusMismatch { state: u.sites(), expected: weights.len() });
    }
    let mut avg = vec![0.0; u.sites()];
    block_averages(u.values(), l, &mut avg);
    Ok(one_block_rate(u.values(), &avg, weights, g))
}

#[inline]
pub(crate) fn one_block_rate(u: &[f64], block: &[f64], weights: &[f64], g: LocalObservable) -> f64 {
    let m = u.len();
    let mut acc = 0.0;
    for j in 0..m {
        let w = weights[j];
        if w == 0.0 {
            continue;
        }
        acc += g.eval(u, j) * (u[(j + 1) % m] - block[j]) * w;
    }
    acc
}

/// `n^{1/4} Σ_j (u_{j+1} − u_j) ∇^nφ^n_j`.
pub fn gradient_surrogate_increment(u: &LatticeState, f: &SampledTestFunction) -> Result<f64, FieldError> {
    f.check(u.values())?;
    Ok(gradient_surrogate_rate(u.values(), f))
}

#[inline]
pub(crate) fn gradient_surrogate_rate(u: &[f64], f: &SampledTestFunction) -> f64 {
    let m = u.len();
    let g = &f.gradient;
    let mut acc = 0.0;
    for j in 0..m {
        acc += (u[(j + 1) % m] - u[j]) * g[j];
    }
    acc * f.n_quarter()
}

/// `X^n(∂_x²φ) = n^{−1/4} Σ_j u_j ∂_x²φ(j/√n)`.
#[inline]
pub(crate) fn curvature_field(u: &[f64], f: &SampledTestFunction) -> f64 {
    dot(u, &f.second_derivative) / f.n_quarter()
}

/// Direct martingale `M^n = n^{−1/4} Σ_steps ⟨φ, noise⟩` from cumulative noise
/// projections.
pub fn martingale_series(cumulative_projections: &[f64], n: u64) -> Vec<f64> {
    let scale = (n as f64).powf(-0.25);
    cumulative_projections.iter().map(|x| x * scale).collect()
}

/// Time series of `X^n`, its decomposition and optional `A^ε` integrals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldSeries {
    pub n: u64,
    /// Macroscopic times.
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub symmetric: Vec<f64>,
    pub antisymmetric: Vec<f64>,
    /// `X_t − X_0 − S_t − B_t`.
    pub martingale_residual: Vec<f64>,
    /// Noise-sum construction.
    pub martingale_direct: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// `a_epsilon[k][i]` is `A^{ε_k}_{0,t_i}`.
    pub a_epsilon: Vec<Vec<f64>>,
}

impl FieldSeries {
    /// `max_t |M_residual − M_direct|`.
    pub fn max_closure_gap(&self) -> f64 {
        self.martingale_residual
            .iter()
            .zip(&self.martingale_direct)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Realized quadratic variation `Σ (ΔM)²` over the recorded grid.
    pub fn realized_qv(values: &[f64]) -> f64 {
        values.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
    }

    /// CSV with columns `t,X,S,B,M_residual,M_direct,A_eps=<ε>...`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> =
            ["t", "X", "S", "B", "M_residual", "M_direct"].iter().map(|s| s.to_string()).collect();
        header.extend(self.epsilons.iter().map(|e| format!("A_eps={e}")));
        w.write_record(&header)?;
        for i in 0..self.times.len() {
            let mut row = vec![
                self.times[i],
                self.x[i],
                self.symmetric[i],
                self.antisymmetric[i],
                self.martingale_residual[i],
                self.martingale_direct[i],
            ];
            row.extend(self.a_epsilon.iter().map(|a| a[i]));
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Observer that builds a [`FieldSeries`] with left-endpoint quadrature on
/// the recorded grid. With `record_stride = 1` and the Euler scheme the
/// decomposition closes to rounding.
pub struct FieldRecorder {
    f: SampledTestFunction,
    coupling_factor: f64,
    blocks: Vec<usize>,
    series: FieldSeries,
    block_buf: Vec<f64>,
    prev: Option<(f64, f64, f64, Vec<f64>)>,
}

impl FieldRecorder {
    /// `gamma` is the coupling of the simulated dynamics.
    pub fn new(f: SampledTestFunction, gamma: f64, epsilons: &[f64]) -> Result<Self, FieldError> {
        let n = f.n();
        let blocks = epsilons.iter().map(|&e| epsilon_block(e, n)).collect::<Result<Vec<_>, _>>()?;
        let coupling_factor = (n as f64).powf(0.25) * gamma;
        let sites = f.sites();
        Ok(Self {
            coupling_factor,
            blocks,
            series: FieldSeries {
                n,
                epsilons: epsilons.to_vec(),
                a_epsilon: vec![Vec::new(); epsilons.len()],
                ..Default::default()
            },
            block_buf: vec![0.0; sites],
            prev: None,
            f,
        })
    }

    pub fn into_series(self) -> FieldSeries {
        self.series
    }
}

impl Observer for FieldRecorder {
    fn probes(&self) -> Vec<Vec<f64>> {
        vec![self.f.phi().to_vec()]
    }

    fn observe(&mut self, snap: &Snapshot<'_>) {
        let n = self.f.n();
        let t = snap.time / n as f64;
        let u = snap.state;
        let x = field_value(u, &self.f);
        let s_rate = symmetric_rate(u, &self.f);
        let b_rate = self.coupling_factor * antisymmetric_rate(u, &self.f);
        let a_rates: Vec<f64> = self
            .blocks
            .iter()
            .map(|&l| {
                block_averages(u, l, &mut self.block_buf);
                q_field_rate(&self.block_buf, l, self.f.gradient())
            })
            .collect();
        let s = &mut self.series;
        let (s_val, b_val, a_vals) = match &self.prev {
            None => (0.0, 0.0, vec![0.0; a_rates.len()]),
            Some((tp, sp, bp, ap)) => {
                let h = t - tp;
                let last = s.times.len() - 1;
                let a = ap.iter().enumerate().map(|(k, r)| s.a_epsilon[k][last] + h * r).collect();
                (s.symmetric[last] + h * sp, s.antisymmetric[last] + h * bp, a)
            }
        };
        let x0 = s.x.first().copied().unwrap_or(x);
        s.times.push(t);
        s.x.push(x);
        s.symmetric.push(s_val);
        s.antisymmetric.push(b_val);
        s.martingale_residual.push(x - x0 - s_val - b_val);
        s.martingale_direct.push(snap.noise[0] * (n as f64).powf(-0.25));
        for (k, a) in a_vals.into_iter().enumerate() {
            s.a_epsilon[k].push(a);
        }
        self.prev = Some((t, s_rate, b_rate, a_rates));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{sample_invariant, simulate, IntegratorConfig, Scheme};
    use crate::lattice::{wrap, Nonlinearity, ScalingParams};
    use crate::rng::NoiseStream;

    fn state(v: Vec<f64>) -> LatticeState {
        LatticeState::new(v, 0.0).unwrap()
    }

    #[test]
    fn gaussian_support_and_energies() {
        let tf = TestFunction::gaussian();
        // e^{−R²} = 1e−12
        assert!((tf.support() - (12.0 * 10f64.ln()).sqrt()).abs() < 0.01, "{}", tf.support());
        assert!((tf.energy() - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-10);
        assert!((tf.gradient_energy() - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn families_pass_derivative_checks() {
        for spec in [
            TestFunctionSpec::Hermite { order: 3, center: 0.5, scale: 0.8 },
            TestFunctionSpec::SmoothedIndicator { epsilon: 0.2, smoothing: 0.05, center: 0.0 },
            TestFunctionSpec::GaussianBump { center: -1.0, scale: 2.0 },
        ] {
            let tf = TestFunction::new(spec).unwrap();
            assert!(tf.energy() > 0.0);
        }
        assert!(TestFunction::new(TestFunctionSpec::GaussianBump { center: 0.0, scale: -1.0 }).is_err());
        // Smoothed indicator approximates ε^{-1}·1_(0,ε]: unit mass.
        let ind = TestFunction::new(TestFunctionSpec::SmoothedIndicator { epsilon: 0.4, smoothing: 0.01, center: 0.0 })
            .unwrap();
        let mass = simpson(|x| ind.value(x), -1.0, 1.5, 20_000);
        assert!((mass - 1.0).abs() < 1e-9);
        // Hermite functions of different order are orthogonal.
        let h0 = TestFunction::new(TestFunctionSpec::Hermite { order: 0, center: 0.0, scale: 1.0 }).unwrap();
        let h1 = TestFunction::new(TestFunctionSpec::Hermite { order: 1, center: 0.0, scale: 1.0 }).unwrap();
        assert!(h0.inner(&h1).abs() < 1e-12);
    }

    #[test]
    fn discrete_energy_examples() {
        assert_eq!(discrete_energy(&[0.0; 5], 4), 0.0);
        assert_eq!(discrete_energy(&[1.0, 1.0], 4), 1.0);
    }

    #[test]
    fn gradient_energy_converges_monotonically() {
        let tf = TestFunction::gaussian();
        let target = (std::f64::consts::PI / 2.0).sqrt();
        let gaps: Vec<f64> = [64u64, 256, 1024]
            .iter()
            .map(|&n| {
                let m = required_sites(n, tf.support());
                let f = SampledTestFunction::new(&tf, n, m, 0).unwrap();
                (f.gradient_energy() - target).abs()
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(gaps[2] < 1e-3);
    }

    #[test]
    fn torus_rule_arithmetic() {
        assert_eq!(required_sites(256, 3.0), 384);
        let tf = TestFunction::gaussian();
        assert!(SampledTestFunction::new(&tf, 256, 100, 0).is_err());
    }

    #[test]
    fn field_small_case_matches_direct_sum() {
        let tf = TestFunction::gaussian();
        let n = 4;
        let m = 32;
        let f = SampledTestFunction::new(&tf, n, m, 0).unwrap();
        let mut v = vec![0.0; m];
        for j in -2i64..=2 {
            v[wrap(j, m)] = 1.0;
        }
        let expected: f64 = (-2i64..=2).map(|j| (-(j as f64 / 2.0).powi(2)).exp()).sum::<f64>() / 4f64.powf(0.25);
        let got = fluctuation_field(&state(v), &f).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert_eq!(fluctuation_field(&LatticeState::zeros(m).unwrap(), &f).unwrap(), 0.0);
        assert!(fluctuation_field(&LatticeState::zeros(8).unwrap(), &f).is_err());
    }

    #[test]
    fn shift_covariance_of_field() {
        let tf = TestFunction::gaussian();
        let m = 128;
        let mut rng = NoiseStream::new(1, 0);
        let u = sample_invariant(&mut rng, m).unwrap();
        for k in [-7i64, 0, 5, 60] {
            let f0 = SampledTestFunction::new(&tf, 16, m, 0).unwrap();
            let fk = SampledTestFunction::new(&tf, 16, m, k).unwrap();
            let a = fluctuation_field(&u.shifted(k), &f0).unwrap();
            let b = fluctuation_field(&u, &fk).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn increments_vanish_on_constants() {
        let tf = TestFunction::gaussian();
        let f = SampledTestFunction::new(&tf, 16, 200, 0).unwrap();
        for c in [0.0, 2.0, -1.5] {
            let u = LatticeState::constant(200, c).unwrap();
            assert!(symmetric_increment(&u, &f).unwrap().abs() < 1e-12);
            assert!(antisymmetric_increment(&u, &f).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn increments_match_direct_sums() {
        let tf = TestFunction::gaussian();
        let n = 9;
        let m = 80;
        let f = SampledTestFunction::new(&tf, n, m, 3).unwrap();
        let mut rng = NoiseStream::new(2, 0);
        let u = sample_invariant(&mut rng, m).unwrap();
        let phi = |j: i64| f.phi()[wrap(j, m)];
        let (mut s, mut b, mut bg, mut ucp, mut a) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let l = 3;
        for j in 0..m as i64 {
            let lap = n as f64 * (phi(j + 1) + phi(j - 1) - 2.0 * phi(j));
            let grad = 3.0 * (phi(j + 1) - phi(j));
            s += u.at(j) * lap;
            let w = (u.at(j).powi(2) + u.at(j) * u.at(j + 1) + u.at(j + 1).powi(2)) / 3.0;
            b -= w * grad;
            let avg: f64 = (1..=l as i64).map(|k| u.at(j + k)).sum::<f64>() / l as f64;
            let q = avg * avg - 1.0 / l as f64;
            bg += (u.at(j) * u.at(j + 1) - q) * grad;
            a += q * grad;
            ucp += phi(j) * (u.at(j) * u.at(j + 1) - u.at(j).powi(2) + 1.0);
        }
        let nq = (n as f64).powf(0.25);
        assert!((symmetric_increment(&u, &f).unwrap() - 0.5 * s / nq).abs() < 1e-12);
        assert!((antisymmetric_increment(&u, &f).unwrap() - b).abs() < 1e-12);
        assert!((bg_residual_increment(&u, &f, l).unwrap() - bg).abs() < 1e-12);
        assert!((ucp_statistic_increment(&u, &f).unwrap() - ucp).abs() < 1e-12);
        // ε√n = 1.0·3 → l = 3
        assert!((a_epsilon_increment(&u, &f, 1.0).unwrap() - a).abs() < 1e-12);
        assert!(a_epsilon_increment(&u, &f, 0.2).is_err());
    }

    #[test]
    fn block_statistics() {
        let c = LatticeState::constant(10, 2.0).unwrap();
        assert!((block_average(&c, 3, 4).unwrap() - 2.0).abs() < 1e-15);
        let u = state((1..=10).map(f64::from).collect());
        assert_eq!(block_average(&u, 0, 1).unwrap(), 2.0);
        assert_eq!(block_average(&u, 1, 3).unwrap(), 4.0);
        // wraps: sites 9, 0, 1 → 10, 1, 2
        assert!((block_average(&u, 8, 3).unwrap() - 13.0 / 3.0).abs() < 1e-15);
        assert_eq!(q_statistic(&LatticeState::zeros(6).unwrap(), 0, 4).unwrap(), -0.25);
        assert_eq!(q_statistic(&LatticeState::constant(6, 1.0).unwrap(), 2, 2).unwrap(), 0.5);
        assert!(block_average(&u, 0, 0).is_err());
        let mut fast = vec![0.0; 10];
        block_averages(u.values(), 3, &mut fast);
        for j in 0..10 {
            assert!((fast[j] - block_average(&u, j as i64, 3).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn bg_residual_special_cases() {
        let tf = TestFunction::gaussian();
        let f = SampledTestFunction::new(&tf, 16, 200, 0).unwrap();
        let zero = LatticeState::zeros(200).unwrap();
        // u ≡ 0: (1/l)Σ∇φ telescopes to 0
        assert!(bg_residual_increment(&zero, &f, 4).unwrap().abs() < 1e-12);
        // l = 1: u_j u_{j+1} − u_{j+1}² + 1
        let mut rng = NoiseStream::new(5, 0);
        let u = sample_invariant(&mut rng, 200).unwrap();
        let direct: f64 = (0..200i64)
            .map(|j| (u.at(j) * u.at(j + 1) - u.at(j + 1).powi(2) + 1.0) * f.gradient()[j as usize])
            .sum();
        assert!((bg_residual_increment(&u, &f, 1).unwrap() - direct).abs() < 1e-12);
        let phi_sum: f64 = f.phi().iter().sum();
        assert!((ucp_statistic_increment(&zero, &f).unwrap() - phi_sum).abs() < 1e-12);
    }

    #[test]
    fn q_statistic_is_centered_under_invariant_measure() {
        let mut rng = NoiseStream::new(12, 0);
        let m = 200_000;
        let u = sample_invariant(&mut rng, m).unwrap();
        for l in [1usize, 3, 8] {
            let mut avg = vec![0.0; m];
            block_averages(u.values(), l, &mut avg);
            let mean = avg.iter().map(|a| a * a - 1.0 / l as f64).sum::<f64>() / m as f64;
            // sd of a single Q is √2/l; sites within l are correlated
            let se = 2f64.sqrt() / l as f64 * (l as f64 / m as f64).sqrt() * 2.0;
            assert!(mean.abs() < 4.0 * se, "l = {l}: {mean}");
        }
    }

    #[test]
    fn static_q_field_second_moment_matches_wick_oracle() {
        // E[(Σ_j Q_j ψ_j)²] = Σ_{j,k} ψ_j ψ_k · 2 (overlap(j,k)/l²)².
        let tf = TestFunction::gaussian();
        let n = 16;
        let m = 200;
        let l = 4;
        let f = SampledTestFunction::new(&tf, n, m, 0).unwrap();
        let psi = f.gradient();
        let mut exact = 0.0;
        for j in 0..m {
            for d in -(l as i64)..=(l as i64) {
                let k = wrap(j as i64 + d, m);
                let overlap = (l as i64 - d.abs()) as f64;
                exact += psi[j] * psi[k] * 2.0 * (overlap / (l * l) as f64).powi(2);
            }
        }
        let mut rng = NoiseStream::new(21, 0);
        let reps = 20_000;
        let mut avg = vec![0.0; m];
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..reps {
            let u = sample_invariant(&mut rng, m).unwrap();
            block_averages(u.values(), l, &mut avg);
            let v = q_field_rate(&avg, l, psi).powi(2);
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / reps as f64;
        let se = ((acc2 / reps as f64 - mean * mean) / reps as f64).sqrt();
        assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} ± {se}");
    }

    #[test]
    fn bg_static_moment_matches_monte_carlo() {
        let tf = TestFunction::gaussian();
        let (n, m, l) = (16, 120, 3);
        let f = SampledTestFunction::new(&tf, n, m, 0).unwrap();
        let exact = bg_static_second_moment(f.gradient(), l).unwrap();
        let mut rng = NoiseStream::new(33, 0);
        let reps = 20_000;
        let mut avg = vec![0.0; m];
        let (mut acc, mut acc2) = (0.0, 0.0);
        for _ in 0..reps {
            let u = sample_invariant(&mut rng, m).unwrap();
            block_averages(u.values(), l, &mut avg);
            let v = bg_residual_rate(u.values(), &avg, l, f.gradient()).powi(2);
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / reps as f64;
        let se = ((acc2 / reps as f64 - mean * mean) / reps as f64).sqrt();
        assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} ± {se}");
        // single weight, l = 1: V = u_0u_1 − u_1² + 1, Var = 1 + 2 = 3
        let mut w = vec![0.0; 8];
        w[0] = 1.0;
        assert!((bg_static_second_moment(&w, 1).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ucp_integrand_is_centered_by_wick() {
        use crate::gaussian::{CylinderPolynomial, Monomial};
        let mut p = CylinderPolynomial::<f64>::constant(1.0);
        p.add_term(Monomial::new(&[(0, 1), (1, 1)]), 1.0);
        p.add_term(Monomial::new(&[(0, 2)]), -1.0);
        assert_eq!(p.wick_expectation(), 0.0);
    }

    #[test]
    fn one_block_observable_norms() {
        assert_eq!(LocalObservable::CenteredSquare.l2_norm_sq(), 2.0);
        let mut rng = NoiseStream::new(4, 0);
        let u = sample_invariant(&mut rng, 400_000).unwrap();
        let (mut mean, mut sq) = (0.0, 0.0);
        for j in 0..u.sites() {
            let g = LocalObservable::CenteredSquare.eval(u.values(), j);
            mean += g;
            sq += g * g;
        }
        let n = u.sites() as f64;
        assert!((mean / n).abs() < 0.01);
        assert!((sq / n - 2.0).abs() < 0.03);
        let w = vec![1.0; 50];
        let zero = LatticeState::constant(50, 3.0).unwrap();
        assert_eq!(one_block_increment(&zero, &w, 4, LocalObservable::Zero).unwrap(), 0.0);
    }

    #[test]
    fn decomposition_closes_for_euler() {
        let tf = TestFunction::gaussian();
        let n = 16;
        let m = required_sites(n, tf.support());
        let p = ScalingParams::scaling(n, m).unwrap();
        let f = SampledTestFunction::new(&tf, n, m, 0).unwrap();
        let mut rec = FieldRecorder::new(f, p.gamma, &[0.5]).unwrap();
        let mut rng = NoiseStream::new(8, 0);
        let u0 = sample_invariant(&mut rng, m).unwrap();
        let cfg = IntegratorConfig { scheme: Scheme::Euler, dt: 0.01, t_end: 16.0, record_stride: 1 };
        simulate(&u0, &p, &cfg, Nonlinearity::SasamotoSpohn, &mut rng, &mut [&mut rec]).unwrap();
        let s = rec.into_series();
        assert_eq!(s.times.len(), 1601);
        assert!(s.max_closure_gap() < 1e-10, "{}", s.max_closure_gap());
        assert!((s.times.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn euler_martingale_increment_variance() {
        // One step: Var(ΔM) = dt·n^{-1/2}·Σ(φ_j − φ_{j+1})² (micro dt).
        let tf = TestFunction::gaussian();
        let n = 16;
        let m = required_sites(n, tf.support());
        let f = SampledTestFunction::new(&tf, n, m, 0).unwrap();
        let p = ScalingParams::scaling(n, m).unwrap();
        let dt = 0.05;
        let mut st = crate::integrator::Stepper::new(&p, Scheme::Euler, dt, Nonlinearity::SasamotoSpohn);
        st.add_probe(f.phi());
        let mut rng = NoiseStream::new(13, 0);
        let reps = 40_000;
        let mut u = vec![0.0; m];
        let mut acc = 0.0;
        for _ in 0..reps {
            st.step(&mut u, Some(&mut rng));
            acc += martingale_series(st.projections(), n)[0].powi(2);
        }
        let expected = dt / n as f64 * f.gradient_energy();
        let got = acc / reps as f64;
        assert!((got / expected - 1.0).abs() < 4.0 * (2.0 / reps as f64).sqrt(), "{got} vs {expected}");
        assert_eq!(martingale_series(&[0.0, 0.0], n), vec![0.0, 0.0]);
    }

    #[test]
    fn field_series_csv_header() {
        let s = FieldSeries {
            n: 4,
            times: vec![0.0],
            x: vec![1.0],
            symmetric: vec![0.0],
            antisymmetric: vec![0.0],
            martingale_residual: vec![0.0],
            martingale_direct: vec![0.0],
            epsilons: vec![0.5],
            a_epsilon: vec![vec![0.0]],
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,X,S,B,M_residual,M_direct,A_eps=0.5\n"));
    }
}
