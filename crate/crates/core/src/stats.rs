//! Replicate-level summaries and log-log regression.

use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// Mean with sample standard deviation and a 95% confidence interval
/// `mean ± 1.96·sd/√R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sd: f64,
    pub replicates: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let r = xs.len();
        if r == 0 {
            return Self { mean: f64::NAN, sd: f64::NAN, replicates: 0 };
        }
        let mean = xs.iter().sum::<f64>() / r as f64;
        let sd = if r > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1) as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, sd, replicates: r }
    }

    /// Standard error `sd/√R`.
    pub fn se(&self) -> f64 {
        self.sd / (self.replicates as f64).sqrt()
    }

    pub fn half_width(&self) -> f64 {
        Z95 * self.se()
    }

    pub fn ci(&self) -> (f64, f64) {
        let h = self.half_width();
        (self.mean - h, self.mean + h)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { mean: self.mean * c, sd: self.sd * c.abs(), replicates: self.replicates }
    }
}

/// Ratio of means `ȳ/x̄` over paired replicates with a delta-method
/// standard error.
pub fn ratio_of_means(x: &[f64], y: &[f64]) -> (f64, f64) {
    let r = x.len().min(y.len());
    let ex = Estimate::from_samples(&x[..r]);
    let ey = Estimate::from_samples(&y[..r]);
    let ratio = ey.mean / ex.mean;
    let cov = x.iter().zip(y).map(|(a, b)| (a - ex.mean) * (b - ey.mean)).sum::<f64>() / (r as f64 - 1.0);
    let var = (ey.sd.powi(2) - 2.0 * ratio * cov + ratio * ratio * ex.sd.powi(2)) / (ex.mean * ex.mean);
    (ratio, (var.max(0.0) / r as f64).sqrt())
}

/// Sample kurtosis `m4/m2²` of centered data, with the Gaussian large-sample
/// standard error `√(24/N)`.
pub fn kurtosis(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (m4 / (m2 * m2), (24.0 / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Ok,
    /// `R² < MIN_R_SQUARED` or too few points; no exponent is reported.
    Inconclusive,
}

pub const MIN_R_SQUARED: f64 = 0.9;

/// Ordinary least squares fit of `ln y = a + b ln x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: Option<f64>,
    pub slope_se: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    pub status: FitStatus,
}

pub fn log_log_fit(x: &[f64], y: &[f64]) -> LogLogFit {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let k = pts.len();
    let inconclusive = LogLogFit {
        slope: None,
        slope_se: 0.0,
        intercept: 0.0,
        r_squared: 0.0,
        points: k,
        status: FitStatus::Inconclusive,
    };
    if k < 2 || k != x.len() {
        return inconclusive;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return inconclusive;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_se = if k > 2 { (sse / (k - 2) as f64 / sxx).sqrt() } else { 0.0 };
    let status = if r_squared >= MIN_R_SQUARED { FitStatus::Ok } else { FitStatus::Inconclusive };
    LogLogFit {
        slope: (status == FitStatus::Ok).then_some(slope),
        slope_se,
        intercept,
        r_squared,
        points: k,
        status,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn estimate_basics() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((e.half_width() - 1.96 * e.sd / 2.0).abs() < 1e-15);
        let (lo, hi) = e.ci();
        assert!(lo < e.mean && e.mean < hi);
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let x = [64.0, 128.0, 256.0, 512.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        let f = log_log_fit(&x, &y);
        assert!((f.slope.unwrap() + 0.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_fit_is_inconclusive() {
        let f = log_log_fit(&[1.0, 2.0, 3.0, 4.0], &[1.0, 5.0, 0.5, 4.0]);
        assert_eq!(f.status, FitStatus::Inconclusive);
        assert!(f.slope.is_none());
        assert_eq!(log_log_fit(&[1.0, 2.0], &[1.0, -1.0]).status, FitStatus::Inconclusive);
    }

    #[test]
    fn ratio_of_proportional_samples_is_exact() {
        let x = [1.0, 2.0, 3.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        let (r, se) = ratio_of_means(&x, &y);
        assert!((r - 0.5).abs() < 1e-15);
        assert!(se < 1e-9);
    }

    #[test]
    fn gaussian_kurtosis_is_three() {
        let mut rng = crate::rng::NoiseStream::new(3, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| rng.standard_normal()).collect();
        let (k, se) = kurtosis(&xs);
        assert!((k - 3.0).abs() < 4.0 * se);
    }

    proptest! {
        #[test]
        fn ci_contains_mean_and_scales(xs in prop::collection::vec(-1e3f64..1e3, 2..50), c in 0.1f64..10.0) {
            let e = Estimate::from_samples(&xs);
            let (lo, hi) = e.ci();
            prop_assert!(lo <= e.mean && e.mean <= hi);
            let s = e.scaled(c);
            prop_assert!((s.half_width() - c * e.half_width()).abs() <= 1e-9 * (1.0 + e.half_width()));
        }
    }
}
