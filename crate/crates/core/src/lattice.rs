//! Periodic lattice fields for the Sasamoto–Spohn discretization of the
//! stochastic Burgers equation.
//!
//! The state lives on the torus `Z_M`; every site index handed to the public
//! functions is reduced modulo `M`, so telescoping sums over one period are
//! exact up to floating rounding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible lattice.
pub const MIN_SITES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("lattice needs at least {MIN_SITES} sites, got {0}")]
    TooFewSites(usize),
    #[error("non-finite field value {value} at site {site}")]
    NonFinite { site: usize, value: f64 },
    #[error("coupling must be finite and non-negative, got {0}")]
    BadCoupling(f64),
    #[error("scaling parameter n must be positive")]
    ZeroScale,
}

/// Field configuration `u ∈ R^M` together with its microscopic time stamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeState {
    values: Vec<f64>,
    time: f64,
}

impl LatticeState {
    pub fn new(values: Vec<f64>, time: f64) -> Result<Self, LatticeError> {
        if values.len() < MIN_SITES {
            return Err(LatticeError::TooFewSites(values.len()));
        }
        if let Some((site, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(LatticeError::NonFinite { site, value });
        }
        Ok(Self { values, time })
    }

    pub fn zeros(sites: usize) -> Result<Self, LatticeError> {
        Self::new(vec![0.0; sites], 0.0)
    }

    pub fn constant(sites: usize, c: f64) -> Result<Self, LatticeError> {
        Self::new(vec![c; sites], 0.0)
    }

    /// Discrete Fourier mode `cos(2πkj/M)`.
    pub fn fourier_mode(sites: usize, k: usize) -> Result<Self, LatticeError> {
        let m = sites as f64;
        let values = (0..sites)
            .map(|j| (2.0 * std::f64::consts::PI * (k * j) as f64 / m).cos())
            .collect();
        Self::new(values, 0.0)
    }

    pub(crate) fn from_parts_unchecked(values: Vec<f64>, time: f64) -> Self {
        Self { values, time }
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.time
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at site `j`, reduced modulo `M`.
    #[inline]
    pub fn at(&self, j: i64) -> f64 {
        self.values[wrap(j, self.values.len())]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Cyclic shift `(τ_k u)_j = u_{j+k}`.
    pub fn shifted(&self, k: i64) -> Self {
        let m = self.sites();
        let values = (0..m as i64).map(|j| self.at(j + k)).collect();
        Self { values, time: self.time }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

#[inline]
pub fn wrap(j: i64, m: usize) -> usize {
    j.rem_euclid(m as i64) as usize
}

/// Scaling parameter `n`, coupling `γ` and lattice size `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub n: u64,
    pub gamma: f64,
    pub sites: usize,
}

impl ScalingParams {
    /// Weakly asymmetric scaling `γ = n^{-1/4}`.
    pub fn scaling(n: u64, sites: usize) -> Result<Self, LatticeError> {
        if n == 0 {
            return Err(LatticeError::ZeroScale);
        }
        Self::with_gamma(n, (n as f64).powf(-0.25), sites)
    }

    pub fn with_gamma(n: u64, gamma: f64, sites: usize) -> Result<Self, LatticeError> {
        if n == 0 {
            return Err(LatticeError::ZeroScale);
        }
        if sites < MIN_SITES {
            return Err(LatticeError::TooFewSites(sites));
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(LatticeError::BadCoupling(gamma));
        }
        Ok(Self { n, gamma, sites })
    }

    pub fn is_scaling(&self) -> bool {
        self.gamma == (self.n as f64).powf(-0.25)
    }

    #[inline]
    pub fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }
}

/// Choice of local current `w_j` in `B_j = w_j − w_{j−1}`.
///
/// `Naive` (`w_j = u_j²`) breaks invariance of the Gaussian product measure
/// and serves as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    #[default]
    SasamotoSpohn,
    Naive,
}

impl Nonlinearity {
    /// Current across the bond `(j, j+1)` from `a = u_j`, `b = u_{j+1}`.
    #[inline(always)]
    pub fn current(self, a: f64, b: f64) -> f64 {
        match self {
            Nonlinearity::SasamotoSpohn => (a * a + a * b + b * b) / 3.0,
            Nonlinearity::Naive => a * a,
        }
    }
}

/// `w_j = (u_j² + u_j u_{j+1} + u_{j+1}²)/3`.
pub fn local_current(u: &LatticeState, j: i64) -> f64 {
    Nonlinearity::SasamotoSpohn.current(u.at(j), u.at(j + 1))
}

/// `B_j = w_j − w_{j−1}`.
pub fn nonlinearity(u: &LatticeState, j: i64) -> f64 {
    local_current(u, j) - local_current(u, j - 1)
}

/// `Δu_j = u_{j+1} + u_{j−1} − 2u_j`.
pub fn discrete_laplacian(u: &LatticeState, j: i64) -> f64 {
    u.at(j + 1) + u.at(j - 1) - 2.0 * u.at(j)
}

/// Drift vector `½Δu_j + γB_j(u)`.
pub fn drift(u: &LatticeState, p: &ScalingParams) -> Vec<f64> {
    let mut out = vec![0.0; u.sites()];
    drift_into(u.values(), p.gamma, Nonlinearity::SasamotoSpohn, &mut out);
    out
}

/// Writes `γ·B_j(u)` into `out`, with `B` built from `kind`.
pub(crate) fn nonlinear_drift_into(u: &[f64], gamma: f64, kind: Nonlinearity, out: &mut [f64]) {
    let m = u.len();
    debug_assert_eq!(out.len(), m);
    // w_{M-1} closes the ring and feeds B_0.
    let w_last = kind.current(u[m - 1], u[0]);
    let mut w_prev = w_last;
    for j in 0..m - 1 {
        let w = kind.current(u[j], u[j + 1]);
        out[j] = gamma * (w - w_prev);
        w_prev = w;
    }
    out[m - 1] = gamma * (w_last - w_prev);
}

/// Full drift `½Δu + γB(u)` into `out`.
pub(crate) fn drift_into(u: &[f64], gamma: f64, kind: Nonlinearity, out: &mut [f64]) {
    let m = u.len();
    nonlinear_drift_into(u, gamma, kind, out);
    out[0] += 0.5 * (u[1] + u[m - 1] - 2.0 * u[0]);
    for j in 1..m - 1 {
        out[j] += 0.5 * (u[j + 1] + u[j - 1] - 2.0 * u[j]);
    }
    out[m - 1] += 0.5 * (u[0] + u[m - 2] - 2.0 * u[m - 1]);
}

/// Drift with an explicit nonlinearity choice.
pub fn drift_with(u: &LatticeState, p: &ScalingParams, kind: Nonlinearity) -> Vec<f64> {
    let mut out = vec![0.0; u.sites()];
    drift_into(u.values(), p.gamma, kind, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(v: &[f64]) -> LatticeState {
        LatticeState::new(v.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn current_examples() {
        assert_eq!(local_current(&LatticeState::zeros(4).unwrap(), 0), 0.0);
        assert_eq!(local_current(&LatticeState::constant(4, 1.0).unwrap(), 2), 1.0);
        let u = state(&[1.0, 2.0, 0.0, 0.0]);
        assert!((local_current(&u, 0) - 7.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nonlinearity_examples() {
        // u_{-1} = 0, u_0 = 1, u_1 = 2.
        let u = state(&[1.0, 2.0, 5.0, 0.0]);
        let w0 = (1.0 + 2.0 + 4.0) / 3.0;
        let wm1 = (0.0 + 0.0 + 1.0) / 3.0;
        assert!((nonlinearity(&u, 0) - (w0 - wm1)).abs() < 1e-15);
        assert!((nonlinearity(&u, 0) - 2.0).abs() < 1e-15);
        let c = LatticeState::constant(7, -3.5).unwrap();
        for j in 0..7 {
            assert_eq!(nonlinearity(&c, j), 0.0);
        }
    }

    #[test]
    fn laplacian_of_affine_data_vanishes() {
        let u = state(&[0.0, 1.0, 2.0, 9.0, -4.0]);
        assert_eq!(discrete_laplacian(&u, 1), 0.0);
        assert_eq!(discrete_laplacian(&u, 6), 0.0);
    }

    #[test]
    fn drift_on_constants_is_zero() {
        let p = ScalingParams::with_gamma(16, 0.7, 6).unwrap();
        assert!(drift(&LatticeState::zeros(6).unwrap(), &p).iter().all(|&d| d == 0.0));
        assert!(drift(&LatticeState::constant(6, 5.0).unwrap(), &p).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn drift_small_case_matches_scalar_formula() {
        // Scalar oracle written out by hand for M = 4, u = (1, 2, 0, -1), γ = 1.
        let u = [1.0, 2.0, 0.0, -1.0];
        let w = |a: f64, b: f64| (a * a + a * b + b * b) / 3.0;
        let expected = [
            0.5 * (2.0 + -1.0 - 2.0) + (w(1.0, 2.0) - w(-1.0, 1.0)),
            0.5 * (0.0 + 1.0 - 4.0) + (w(2.0, 0.0) - w(1.0, 2.0)),
            0.5 * (-1.0 + 2.0 - 0.0) + (w(0.0, -1.0) - w(2.0, 0.0)),
            0.5 * (1.0 + 0.0 + 2.0) + (w(-1.0, 1.0) - w(0.0, -1.0)),
        ];
        let p = ScalingParams::with_gamma(1, 1.0, 4).unwrap();
        let got = drift(&state(&u), &p);
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-14, "{g} vs {e}");
        }
    }

    #[test]
    fn scaling_mode_coupling() {
        let p = ScalingParams::scaling(256, 64).unwrap();
        assert_eq!(p.gamma, 0.25);
        assert!(p.is_scaling());
        assert!(ScalingParams::scaling(0, 64).is_err());
        assert!(ScalingParams::with_gamma(4, 0.1, 3).is_err());
    }

    #[test]
    fn rejects_bad_states() {
        assert_eq!(LatticeState::zeros(3), Err(LatticeError::TooFewSites(3)));
        assert!(matches!(
            LatticeState::new(vec![0.0, 1.0, f64::NAN, 0.0], 0.0),
            Err(LatticeError::NonFinite { site: 2, .. })
        ));
    }

    fn field() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0..5.0f64, 4..40)
    }

    proptest! {
        #[test]
        fn drift_conserves_momentum(v in field(), gamma in 0.0..2.0f64) {
            let u = state(&v);
            let p = ScalingParams::with_gamma(1, gamma, v.len()).unwrap();
            let total: f64 = drift(&u, &p).iter().sum();
            let tol = 1e-12 * v.len() as f64 * u.max_abs().max(1.0).powi(2);
            prop_assert!(total.abs() <= tol, "sum {total}");
        }

        #[test]
        fn telescoping_sums(v in field()) {
            let u = state(&v);
            let m = v.len() as i64;
            let tol = 1e-12 * v.len() as f64 * u.max_abs().max(1.0).powi(2);
            let b: f64 = (0..m).map(|j| nonlinearity(&u, j)).sum();
            let l: f64 = (0..m).map(|j| discrete_laplacian(&u, j)).sum();
            prop_assert!(b.abs() <= tol);
            prop_assert!(l.abs() <= tol);
        }

        #[test]
        fn shift_equivariance(v in field(), k in -50i64..50, j in -50i64..50) {
            let u = state(&v);
            prop_assert_eq!(nonlinearity(&u.shifted(k), j), nonlinearity(&u, j + k));
        }

        #[test]
        fn laplacian_mirror_symmetry(v in field(), j in 0i64..40) {
            let u = state(&v);
            let mut rev = v.clone();
            rev.reverse();
            let r = state(&rev);
            let m = v.len() as i64;
            let d = discrete_laplacian(&u, j) - discrete_laplacian(&r, m - 1 - j);
            prop_assert!(d.abs() < 1e-12);
        }
    }
}
