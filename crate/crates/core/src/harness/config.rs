use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fields::{epsilon_block, required_sites, TestFunction, TestFunctionSpec};
use crate::gaussian::ArithmeticMode;
use crate::fields::LocalObservable;
use crate::integrator::Scheme;
use crate::lattice::Nonlinearity;

/// Every verification suite the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Simulate,
    InvarianceExact,
    Stationarity,
    Qv,
    BgScaling,
    OneBlock,
    Ec,
    Ucp,
    BaselineOu,
    FixedTime,
}

impl Suite {
    pub const ALL: [Suite; 10] = [
        Suite::Simulate,
        Suite::InvarianceExact,
        Suite::Stationarity,
        Suite::Qv,
        Suite::BgScaling,
        Suite::OneBlock,
        Suite::Ec,
        Suite::Ucp,
        Suite::BaselineOu,
        Suite::FixedTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Simulate => "simulate",
            Suite::InvarianceExact => "invariance-exact",
            Suite::Stationarity => "stationarity",
            Suite::Qv => "qv",
            Suite::BgScaling => "bg-scaling",
            Suite::OneBlock => "one-block",
            Suite::Ec => "ec",
            Suite::Ucp => "ucp",
            Suite::BaselineOu => "baseline-ou",
            Suite::FixedTime => "fixed-time",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("unknown suite `{s}`"))
    }
}

/// Unit of `horizon` and `sample_times`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeUnit {
    /// Macroscopic time `t`, simulated for `t·n` microscopic units.
    #[default]
    Macro,
    Micro,
}

impl FromStr for TimeUnit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro" => Ok(TimeUnit::Macro),
            "micro" => Ok(TimeUnit::Micro),
            _ => Err(format!("unknown time unit `{s}` (expected macro or micro)")),
        }
    }
}

/// Declarative description of one experiment. Unknown keys are rejected
/// when loading from JSON; missing keys take the suite defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_values: Vec<u64>,
    pub l_values: Vec<usize>,
    pub eps_values: Vec<f64>,
    pub test_functions: Vec<TestFunctionSpec>,
    /// Independent replicates.
    pub ensemble: usize,
    pub horizon: f64,
    pub time_unit: TimeUnit,
    pub sample_times: Vec<f64>,
    /// Consecutive time blocks of length `horizon` per trajectory.
    pub blocks: usize,
    /// Disjoint translated copies of the test function; `None` packs as
    /// many as the torus holds.
    pub spatial_copies: Option<usize>,
    pub scheme: Scheme,
    /// Microscopic step.
    pub dt: f64,
    pub record_stride: usize,
    /// Torus size; `None` applies the `8·⌈√n⌉·R` rule.
    pub sites: Option<usize>,
    /// `None` is the scaling coupling `n^{−1/4}`.
    pub coupling: Option<f64>,
    pub nonlinearity: Nonlinearity,
    pub observable: LocalObservable,
    pub arithmetic: ArithmeticMode,
    /// Allowed discretization bias for stationarity moments; `None` picks
    /// 0 for the exact linear scheme and 0.02 otherwise.
    pub bias_budget: Option<f64>,
    /// Relative tolerance for ratio checks.
    pub tolerance: f64,
    pub master_seed: u64,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn defaults(suite: Suite) -> Self {
        let base = ExperimentConfig {
            n_values: vec![64],
            l_values: vec![],
            eps_values: vec![],
            test_functions: vec![TestFunctionSpec::gaussian()],
            ensemble: 16,
            horizon: 1.0,
            time_unit: TimeUnit::Macro,
            sample_times: vec![],
            blocks: 1,
            spatial_copies: None,
            scheme: Scheme::OuSplitting,
            dt: 0.01,
            record_stride: 1,
            sites: None,
            coupling: None,
            nonlinearity: Nonlinearity::SasamotoSpohn,
            observable: LocalObservable::CenteredSquare,
            arithmetic: ArithmeticMode::Rational,
            bias_budget: None,
            tolerance: 0.05,
            master_seed: 20240601,
            threads: 0,
        };
        match suite {
            Suite::Simulate => ExperimentConfig { ensemble: 1, record_stride: 100, ..base },
            Suite::InvarianceExact => ExperimentConfig { ensemble: 200, sites: Some(7), ..base },
            Suite::Stationarity => ExperimentConfig {
                n_values: vec![256],
                ensemble: 200,
                horizon: 10.0,
                time_unit: TimeUnit::Micro,
                sample_times: vec![0.0, 2.5, 5.0, 7.5, 10.0],
                sites: Some(256),
                ..base
            },
            Suite::Qv => ExperimentConfig {
                scheme: Scheme::Euler,
                ensemble: 16,
                sample_times: vec![0.5, 1.0],
                ..base
            },
            Suite::BgScaling | Suite::OneBlock | Suite::Ucp => ExperimentConfig {
                n_values: vec![64, 128, 256, 512],
                l_values: vec![2, 4, 8, 16, 32],
                ensemble: 48,
                blocks: 4,
                dt: 0.05,
                record_stride: 2,
                ..base
            },
            Suite::Ec => ExperimentConfig {
                n_values: vec![1600],
                eps_values: vec![0.4, 0.2, 0.1, 0.05],
                sample_times: vec![0.1, 0.2, 0.5, 1.0],
                ensemble: 48,
                blocks: 2,
                dt: 0.05,
                record_stride: 4,
                ..base
            },
            Suite::BaselineOu => ExperimentConfig {
                n_values: vec![1],
                ensemble: 2000,
                sample_times: vec![0.5, 1.0],
                sites: Some(64),
                coupling: Some(0.0),
                ..base
            },
            Suite::FixedTime => ExperimentConfig {
                n_values: vec![256],
                ensemble: 10000,
                horizon: 0.25,
                tolerance: 0.02,
                dt: 0.1,
                record_stride: 10,
                ..base
            },
        }
    }

    /// Loads a JSON config layered over the suite defaults.
    pub fn from_json(suite: Suite, text: &str) -> Result<Self, String> {
        let overlay: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
        let serde_json::Value::Object(map) = overlay else {
            return Err("config must be a JSON object".into());
        };
        let mut base = serde_json::to_value(Self::defaults(suite)).expect("defaults serialize");
        let obj = base.as_object_mut().expect("object");
        let mut unknown = Vec::new();
        for (k, v) in map {
            if obj.contains_key(&k) {
                obj.insert(k, v);
            } else {
                unknown.push(k);
            }
        }
        if !unknown.is_empty() {
            return Err(format!("unknown config keys: {}", unknown.join(", ")));
        }
        serde_json::from_value(base).map_err(|e| format!("invalid config: {e}"))
    }

    /// Scale factor from the configured time unit to microscopic time.
    pub fn micro_per_unit(&self, n: u64) -> f64 {
        match self.time_unit {
            TimeUnit::Macro => n as f64,
            TimeUnit::Micro => 1.0,
        }
    }

    pub fn coupling_for(&self, n: u64) -> f64 {
        self.coupling.unwrap_or_else(|| (n as f64).powf(-0.25))
    }

    pub fn test_function(&self, i: usize) -> Result<TestFunction, String> {
        let spec = self.test_functions.get(i).ok_or("no test function configured")?;
        TestFunction::new(spec.clone()).map_err(|e| e.to_string())
    }

    /// Torus size for `n`: the configured value, or the support rule rounded
    /// up to a 5-smooth length so the FFT avoids large prime factors.
    pub fn sites_for(&self, n: u64) -> usize {
        self.sites.unwrap_or_else(|| {
            let r = self
                .test_functions
                .iter()
                .filter_map(|s| TestFunction::new(s.clone()).ok())
                .map(|f| f.support())
                .fold(0.0, f64::max);
            smooth_size(required_sites(n, r).max(crate::lattice::MIN_SITES))
        })
    }

    /// Steps of length `dt` covering `t` configured time units at scale `n`.
    pub fn steps_for(&self, t: f64, n: u64) -> usize {
        (t * self.micro_per_unit(n) / self.dt).round() as usize
    }

    fn on_grid(&self, t: f64, n: u64) -> bool {
        let exact = t * self.micro_per_unit(n) / self.dt;
        let steps = exact.round();
        (exact - steps).abs() < 1e-6 * exact.max(1.0) && (steps as usize).is_multiple_of(self.record_stride.max(1))
    }

    /// Every violation, so a user can fix them in one pass.
    pub fn violations(&self, suite: Suite) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_values.is_empty() {
            v.push("n_values must not be empty".to_string());
        }
        if self.n_values.contains(&0) {
            v.push("n_values must be positive".into());
        }
        if self.test_functions.is_empty() {
            v.push("test_functions must not be empty".into());
        }
        for (i, spec) in self.test_functions.iter().enumerate() {
            if let Err(e) = TestFunction::new(spec.clone()) {
                v.push(format!("test_functions[{i}]: {e}"));
            }
        }
        let min_ensemble = match suite {
            Suite::Simulate | Suite::InvarianceExact => 1,
            _ => 2,
        };
        if self.ensemble < min_ensemble {
            v.push(format!("ensemble must be at least {min_ensemble}"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            v.push("dt must be positive".into());
        } else if self.scheme == Scheme::Euler && self.dt >= 1.0 {
            v.push("dt must be < 1 for the Euler scheme".into());
        }
        if self.record_stride == 0 {
            v.push("record_stride must be at least 1".into());
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            v.push("horizon must be non-negative".into());
        }
        let needs_positive_horizon =
            matches!(suite, Suite::Qv | Suite::BgScaling | Suite::OneBlock | Suite::Ucp | Suite::Ec);
        if needs_positive_horizon && !(self.horizon > 0.0) {
            v.push("horizon must be positive for this suite".into());
        }
        if self.blocks == 0 {
            v.push("blocks must be at least 1".into());
        }
        if self.spatial_copies == Some(0) {
            v.push("spatial_copies must be at least 1".into());
        }
        if let Some(g) = self.coupling {
            if !g.is_finite() {
                v.push("coupling must be finite".into());
            }
        }
        if !(self.tolerance > 0.0) {
            v.push("tolerance must be positive".into());
        }
        if self.bias_budget.is_some_and(|b| !(b >= 0.0)) {
            v.push("bias_budget must be non-negative".into());
        }
        for &t in &self.sample_times {
            if !(t >= 0.0 && t <= self.horizon + 1e-12) {
                v.push(format!("sample time {t} outside [0, horizon = {}]", self.horizon));
            }
        }
        if matches!(suite, Suite::BgScaling | Suite::OneBlock) && self.l_values.is_empty() {
            v.push("l_values must not be empty".into());
        }
        if self.l_values.contains(&0) {
            v.push("l_values must be at least 1".into());
        }
        if suite == Suite::Ec {
            if self.eps_values.len() < 2 {
                v.push("eps_values needs at least two entries".into());
            }
            for &e in &self.eps_values {
                for &n in &self.n_values {
                    if epsilon_block(e, n).is_err() {
                        v.push(format!("ε = {e} gives ⌊ε√n⌋ = 0 at n = {n}"));
                    }
                }
            }
        }
        if matches!(suite, Suite::BgScaling | Suite::OneBlock | Suite::Ucp | Suite::Ec) && self.n_values.len() < 2
            && suite != Suite::Ec
        {
            v.push("scaling suites need at least two n values".into());
        }
        if v.is_empty() {
            self.grid_violations(suite, &mut v);
        }
        v
    }

    fn grid_violations(&self, suite: Suite, v: &mut Vec<String>) {
        let max_r = self
            .test_functions
            .iter()
            .filter_map(|s| TestFunction::new(s.clone()).ok())
            .map(|f| f.support())
            .fold(0.0, f64::max);
        let torus_suite = !matches!(suite, Suite::InvarianceExact | Suite::Stationarity | Suite::BaselineOu);
        for &n in &self.n_values {
            let m = self.sites_for(n);
            if m < crate::lattice::MIN_SITES {
                v.push(format!("sites must be at least {}", crate::lattice::MIN_SITES));
            }
            if torus_suite && m < required_sites(n, max_r) {
                v.push(format!(
                    "sites = {m} violates the torus rule 8·⌈√n⌉·R = {} at n = {n}",
                    required_sites(n, max_r)
                ));
            }
            if suite == Suite::InvarianceExact {
                continue;
            }
            let mut times = self.sample_times.clone();
            if !matches!(suite, Suite::Stationarity | Suite::BaselineOu) {
                times.push(self.horizon);
            }
            for t in times {
                if !self.on_grid(t, n) {
                    v.push(format!(
                        "time {t} is not a multiple of record_stride·dt = {} at n = {n}",
                        self.record_stride as f64 * self.dt / self.micro_per_unit(n)
                    ));
                }
            }
        }
    }

    pub fn validate(&self, suite: Suite) -> Result<(), Vec<String>> {
        let v = self.violations(suite);
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// SHA-256 of the canonical JSON of `(suite, config)`. The thread count
    /// is left out: results do not depend on it.
    pub fn hash(&self, suite: Suite) -> String {
        let config = ExperimentConfig { threads: 0, ..self.clone() };
        let canonical = serde_json::json!({ "suite": suite, "config": config });
        // serde_json maps are ordered, so the encoding is canonical.
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Smallest integer `≥ m` whose prime factors are all in `{2, 3, 5}`.
pub fn smooth_size(m: usize) -> usize {
    (m.max(1)..)
        .find(|&k| {
            let mut r = k;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            r == 1
        })
        .expect("5-smooth numbers are unbounded")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for s in Suite::ALL {
            let c = ExperimentConfig::defaults(s);
            assert_eq!(c.violations(s), Vec::<String>::new(), "{s}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = ExperimentConfig::from_json(Suite::Qv, r#"{"ensemble": 3, "bogus": 1}"#).unwrap_err();
        assert!(e.contains("bogus"));
        let c = ExperimentConfig::from_json(Suite::Qv, r#"{"ensemble": 3}"#).unwrap();
        assert_eq!(c.ensemble, 3);
        assert_eq!(c.scheme, Scheme::Euler);
    }

    #[test]
    fn all_violations_reported_together() {
        let mut c = ExperimentConfig::defaults(Suite::Ec);
        c.dt = -1.0;
        c.ensemble = 0;
        c.eps_values = vec![0.001];
        let v = c.violations(Suite::Ec);
        assert!(v.len() >= 3, "{v:?}");
    }

    #[test]
    fn torus_rule_enforced() {
        let mut c = ExperimentConfig::defaults(Suite::Qv);
        c.sites = Some(40);
        assert!(c.violations(Suite::Qv).iter().any(|m| m.contains("torus rule")));
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(337), 360);
        assert_eq!(smooth_size(256), 256);
        assert_eq!(smooth_size(7), 8);
        let c = ExperimentConfig::defaults(Suite::Qv);
        assert_eq!(c.sites_for(64), 360);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let c = ExperimentConfig::defaults(Suite::Qv);
        assert_eq!(c.hash(Suite::Qv), c.clone().hash(Suite::Qv));
        let mut d = c.clone();
        d.master_seed += 1;
        assert_ne!(c.hash(Suite::Qv), d.hash(Suite::Qv));
        assert_eq!(c.hash(Suite::Qv).len(), 64);
        let threaded = ExperimentConfig { threads: 4, ..c.clone() };
        assert_eq!(c.hash(Suite::Qv), threaded.hash(Suite::Qv));
    }
}
