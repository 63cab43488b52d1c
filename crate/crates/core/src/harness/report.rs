use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::stats::{Estimate, LogLogFit};

/// One cell of an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub mean: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replicates: usize,
    pub target: Option<f64>,
    /// Allowed `|mean − target|`.
    pub tolerance: Option<f64>,
    pub pass: Option<bool>,
}

impl GridPoint {
    pub fn new(name: &str, params: &[(&str, f64)], e: &Estimate) -> Self {
        let (ci_low, ci_high) = e.ci();
        Self {
            name: name.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            mean: e.mean,
            sd: e.sd,
            ci_low,
            ci_high,
            replicates: e.replicates,
            target: None,
            tolerance: None,
            pass: None,
        }
    }

    /// Marks the point as a check `|mean − target| ≤ tolerance`.
    pub fn against(mut self, target: f64, tolerance: f64) -> Self {
        self.target = Some(target);
        self.tolerance = Some(tolerance);
        self.pass = Some((self.mean - target).abs() <= tolerance);
        self
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }
}

/// A log-log regression and the exponent window it must land in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub name: String,
    /// Regressor, e.g. `n` or `l`.
    pub variable: String,
    pub fixed: BTreeMap<String, f64>,
    pub fit: LogLogFit,
    pub window: (f64, f64),
    pub pass: bool,
}

impl FitRecord {
    pub fn new(name: &str, variable: &str, fixed: &[(&str, f64)], fit: LogLogFit, window: (f64, f64)) -> Self {
        let pass = fit.slope.is_some_and(|s| s >= window.0 && s <= window.1);
        Self {
            name: name.to_string(),
            variable: variable.to_string(),
            fixed: fixed.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            fit,
            window,
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub value: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckRecord {
    pub fn new(name: &str, value: f64, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), value, pass, detail: detail.into() }
    }
}

/// Machine-readable outcome of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub suite: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub replicates: usize,
    /// How time integrals and suprema were discretized.
    pub quadrature: String,
    pub points: Vec<GridPoint>,
    pub fits: Vec<FitRecord>,
    pub checks: Vec<CheckRecord>,
    pub constants: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub pass: bool,
}

impl EstimateReport {
    pub fn new(suite: &str, config_hash: String, master_seed: u64, replicates: usize) -> Self {
        Self {
            suite: suite.to_string(),
            config_hash,
            master_seed,
            replicates,
            quadrature: String::new(),
            points: Vec::new(),
            fits: Vec::new(),
            checks: Vec::new(),
            constants: BTreeMap::new(),
            notes: Vec::new(),
            pass: false,
        }
    }

    /// Pass iff every check, fit and targeted point passes.
    pub fn finalize(mut self) -> Self {
        self.pass = self.checks.iter().all(|c| c.pass)
            && self.fits.iter().all(|f| f.pass)
            && self.points.iter().all(|p| p.pass != Some(false));
        self
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn fit(&self, name: &str) -> Option<&FitRecord> {
        self.fits.iter().find(|f| f.name == name)
    }

    pub fn points_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a GridPoint> + 'a {
        self.points.iter().filter(move |p| p.name == name)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
        out.extend(self.fits.iter().filter(|f| !f.pass).map(|f| f.name.clone()));
        out.extend(
            self.points
                .iter()
                .filter(|p| p.pass == Some(false))
                .map(|p| format!("{}[{}]", p.name, fmt_params(&p.params))),
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat CSV: one row per grid point, fit and check.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "suite", "kind", "name", "params", "mean", "sd", "ci_low", "ci_high", "replicates", "target", "tolerance",
            "pass",
        ])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let flag = |b: Option<bool>| b.map(|v| v.to_string()).unwrap_or_default();
        for p in &self.points {
            w.write_record([
                self.suite.clone(),
                "point".into(),
                p.name.clone(),
                fmt_params(&p.params),
                p.mean.to_string(),
                p.sd.to_string(),
                p.ci_low.to_string(),
                p.ci_high.to_string(),
                p.replicates.to_string(),
                opt(p.target),
                opt(p.tolerance),
                flag(p.pass),
            ])?;
        }
        for f in &self.fits {
            let mut params = f.fixed.clone();
            params.insert("r_squared".into(), f.fit.r_squared);
            let slope = f.fit.slope.map(|s| s.to_string()).unwrap_or_else(|| "inconclusive".into());
            w.write_record([
                self.suite.clone(),
                "fit".into(),
                format!("{}:{}", f.name, f.variable),
                fmt_params(&params),
                slope,
                f.fit.slope_se.to_string(),
                f.window.0.to_string(),
                f.window.1.to_string(),
                f.fit.points.to_string(),
                String::new(),
                String::new(),
                f.pass.to_string(),
            ])?;
        }
        for c in &self.checks {
            w.write_record([
                self.suite.clone(),
                "check".into(),
                c.name.clone(),
                c.detail.clone(),
                c.value.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                c.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_params(p: &BTreeMap<String, f64>) -> String {
    p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::log_log_fit;

    fn sample() -> EstimateReport {
        let mut r = EstimateReport::new("demo", "abc".into(), 1, 3);
        let e = Estimate::from_samples(&[1.0, 1.1, 0.9]);
        r.points.push(GridPoint::new("x", &[("n", 64.0)], &e).against(1.0, 0.2));
        r.fits.push(FitRecord::new("f", "n", &[], log_log_fit(&[1.0, 2.0, 4.0], &[1.0, 0.7, 0.5]), (-0.7, -0.3)));
        r.checks.push(CheckRecord::new("c", 0.0, true, "ok"));
        r.finalize()
    }

    #[test]
    fn pass_aggregates_components() {
        let r = sample();
        assert!(r.pass, "{:?}", r.failures());
        let mut bad = r.clone();
        bad.checks.push(CheckRecord::new("d", 1.0, false, ""));
        assert!(!bad.finalize().pass);
    }

    #[test]
    fn json_round_trip_and_csv_rows() {
        let r = sample();
        let back: EstimateReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("demo,point,x,n=64,"));
    }
}
