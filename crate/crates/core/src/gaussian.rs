//! Exact Gaussian calculus on polynomial cylinder functions.
//!
//! Polynomials in finitely many lattice coordinates are kept as sparse maps
//! from canonical multi-indices to coefficients. Expectations under the
//! standard Gaussian product measure are evaluated by Isserlis/Wick moments
//! (`E[u^k] = (k−1)!!` for even `k`, 0 otherwise), so invariance of the
//! product measure under the periodic generator and Gaussian integration by
//! parts can be certified without Monte Carlo error. Coefficients are either
//! `f64` or exact `BigRational`.

use std::collections::BTreeMap;
use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::Nonlinearity;
use crate::rng::NoiseStream;

pub trait Coefficient: Signed + Clone + Debug + PartialOrd + Send + Sync + 'static {
    fn from_ratio(num: i64, den: i64) -> Self;
    fn to_f64(&self) -> f64;
}

impl Coefficient for f64 {
    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Coefficient for BigRational {
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GaussianError {
    #[error("window [{lo}, {hi}] ({width} sites) needs a torus of at least {needed} sites, got {sites}")]
    WindowOverflow { lo: i64, hi: i64, width: usize, needed: usize, sites: usize },
}

/// Canonical multi-index: `(site, exponent)` pairs, sorted by site, with
/// positive exponents only.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial(Vec<(i64, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn new(factors: &[(i64, u32)]) -> Self {
        let mut map: BTreeMap<i64, u32> = BTreeMap::new();
        for &(s, e) in factors {
            *map.entry(s).or_default() += e;
        }
        Monomial(map.into_iter().filter(|&(_, e)| e > 0).collect())
    }

    pub fn factors(&self) -> &[(i64, u32)] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&(_, e)| e).sum()
    }

    pub fn exponent(&self, site: i64) -> u32 {
        self.0
            .binary_search_by_key(&site, |&(s, _)| s)
            .map(|i| self.0[i].1)
            .unwrap_or(0)
    }

    fn times(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            let (a, b) = (self.0[i], other.0[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => {
                    out.push(a);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((a.0, a.1 + b.1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Monomial(out)
    }

    /// `∂_site` of the monomial as `(multiplier, monomial)`.
    fn derivative(&self, site: i64) -> Option<(u32, Monomial)> {
        let idx = self.0.binary_search_by_key(&site, |&(s, _)| s).ok()?;
        let e = self.0[idx].1;
        let mut f = self.0.clone();
        if e == 1 {
            f.remove(idx);
        } else {
            f[idx].1 = e - 1;
        }
        Some((e, Monomial(f)))
    }

    /// `E[Π u_s^{e_s}]` under i.i.d. standard normals, as an integer.
    pub fn gaussian_moment(&self) -> u64 {
        self.0.iter().map(|&(_, e)| gaussian_moment(e)).product()
    }
}

/// `E[X^k]` for `X ~ N(0,1)`: `(k−1)!!` for even `k`, 0 for odd `k`.
pub fn gaussian_moment(k: u32) -> u64 {
    if k % 2 == 1 {
        return 0;
    }
    (1..k).step_by(2).map(u64::from).product()
}

/// Sparse polynomial in lattice coordinates `u_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderPolynomial<C> {
    terms: BTreeMap<Monomial, C>,
}

impl<C: Coefficient> Default for CylinderPolynomial<C> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<C: Coefficient> CylinderPolynomial<C> {
    pub fn zero() -> Self {
        Self { terms: BTreeMap::new() }
    }

    pub fn constant(c: C) -> Self {
        Self::term(Monomial::one(), c)
    }

    pub fn one() -> Self {
        Self::constant(C::one())
    }

    /// The coordinate `u_site`.
    pub fn var(site: i64) -> Self {
        Self::term(Monomial::new(&[(site, 1)]), C::one())
    }

    pub fn term(m: Monomial, c: C) -> Self {
        let mut p = Self::zero();
        p.add_term(m, c);
        p
    }

    pub fn monomial(factors: &[(i64, u32)], c: C) -> Self {
        Self::term(Monomial::new(factors), c)
    }

    pub fn add_term(&mut self, m: Monomial, c: C) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                let sum = o.get().clone() + c;
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &C)> {
        self.terms.iter()
    }

    /// Number of stored monomials.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Smallest and largest site carrying a nonzero exponent.
    pub fn window(&self) -> Option<(i64, i64)> {
        let mut sites = self.terms.keys().flat_map(|m| m.factors().iter().map(|&(s, _)| s));
        let first = sites.next()?;
        Some(sites.fold((first, first), |(lo, hi), s| (lo.min(s), hi.max(s))))
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&-C::one()))
    }

    pub fn scale(&self, c: &C) -> Self {
        let mut out = Self::zero();
        for (m, a) in &self.terms {
            out.add_term(m.clone(), a.clone() * c.clone());
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.times(mb), ca.clone() * cb.clone());
            }
        }
        out
    }

    /// Formal partial derivative `∂/∂u_site`.
    pub fn partial(&self, site: i64) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            if let Some((e, dm)) = m.derivative(site) {
                out.add_term(dm, c.clone() * C::from_ratio(e as i64, 1));
            }
        }
        out
    }

    /// `E_μ[p]` by Wick/Isserlis moments.
    pub fn wick_expectation(&self) -> C {
        self.terms.iter().fold(C::zero(), |acc, (m, c)| {
            acc + c.clone() * C::from_ratio(m.gaussian_moment() as i64, 1)
        })
    }

    /// Numerical evaluation at the point `u(site)`.
    pub fn eval(&self, u: impl Fn(i64) -> f64) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| c.to_f64() * m.factors().iter().map(|&(s, e)| u(s).powi(e as i32)).product::<f64>())
            .sum()
    }

    pub fn map_coefficients<D: Coefficient>(&self, f: impl Fn(&C) -> D) -> CylinderPolynomial<D> {
        let mut out = CylinderPolynomial::zero();
        for (m, c) in &self.terms {
            out.add_term(m.clone(), f(c));
        }
        out
    }
}

/// `w_j` as a polynomial.
fn current_poly<C: Coefficient>(j: i64, kind: Nonlinearity) -> CylinderPolynomial<C> {
    match kind {
        Nonlinearity::SasamotoSpohn => {
            let third = C::from_ratio(1, 3);
            let mut p = CylinderPolynomial::zero();
            p.add_term(Monomial::new(&[(j, 2)]), third.clone());
            p.add_term(Monomial::new(&[(j, 1), (j + 1, 1)]), third.clone());
            p.add_term(Monomial::new(&[(j + 1, 2)]), third);
            p
        }
        Nonlinearity::Naive => CylinderPolynomial::monomial(&[(j, 2)], C::one()),
    }
}

fn check_window<C: Coefficient>(p: &CylinderPolynomial<C>, sites: usize) -> Result<Option<(i64, i64)>, GaussianError> {
    let Some((lo, hi)) = p.window() else {
        return Ok(None);
    };
    let width = (hi - lo + 1) as usize;
    let needed = width + 2;
    if sites < needed {
        return Err(GaussianError::WindowOverflow { lo, hi, width, needed, sites });
    }
    Ok(Some((lo, hi)))
}

/// Symmetric part `S_M p = Σ_j ½(∂_{j+1}−∂_j)²p − ½(u_{j+1}−u_j)(∂_{j+1}−∂_j)p`.
///
/// With the window inside `Z_M` plus one margin site per side, sites
/// `lo−1..=hi+1` are distinct residues, so the torus sum can be taken over
/// integer sites without wrap-around.
pub fn apply_symmetric<C: Coefficient>(p: &CylinderPolynomial<C>, sites: usize) -> Result<CylinderPolynomial<C>, GaussianError> {
    let Some((lo, hi)) = check_window(p, sites)? else {
        return Ok(CylinderPolynomial::zero());
    };
    let half = C::from_ratio(1, 2);
    let mut out = CylinderPolynomial::zero();
    for j in (lo - 1)..=hi {
        let grad = p.partial(j + 1).sub(&p.partial(j));
        if grad.is_zero() {
            continue;
        }
        let second = grad.partial(j + 1).sub(&grad.partial(j));
        let slope = CylinderPolynomial::var(j + 1).sub(&CylinderPolynomial::var(j));
        out = out.add(&second.scale(&half)).sub(&slope.mul(&grad).scale(&half));
    }
    Ok(out)
}

/// Antisymmetric part `A_M p = γ Σ_j B_j(u) ∂_j p`.
pub fn apply_antisymmetric<C: Coefficient>(
    p: &CylinderPolynomial<C>,
    gamma: &C,
    sites: usize,
    kind: Nonlinearity,
) -> Result<CylinderPolynomial<C>, GaussianError> {
    let Some((lo, hi)) = check_window(p, sites)? else {
        return Ok(CylinderPolynomial::zero());
    };
    let mut out = CylinderPolynomial::zero();
    for j in lo..=hi {
        let d = p.partial(j);
        if d.is_zero() {
            continue;
        }
        let b = current_poly::<C>(j, kind).sub(&current_poly(j - 1, kind));
        out = out.add(&b.mul(&d));
    }
    Ok(out.scale(gamma))
}

/// `L_M p = S_M p + A_M p` for the Sasamoto–Spohn current.
pub fn apply_generator<C: Coefficient>(p: &CylinderPolynomial<C>, gamma: &C, sites: usize) -> Result<CylinderPolynomial<C>, GaussianError> {
    apply_generator_with(p, gamma, sites, Nonlinearity::SasamotoSpohn)
}

pub fn apply_generator_with<C: Coefficient>(
    p: &CylinderPolynomial<C>,
    gamma: &C,
    sites: usize,
    kind: Nonlinearity,
) -> Result<CylinderPolynomial<C>, GaussianError> {
    Ok(apply_symmetric(p, sites)?.add(&apply_antisymmetric(p, gamma, sites, kind)?))
}

/// `|E_μ[L_M p]|`; zero iff `p` does not detect a failure of invariance.
pub fn check_invariance<C: Coefficient>(p: &CylinderPolynomial<C>, gamma: &C, sites: usize) -> Result<C, GaussianError> {
    Ok(apply_generator(p, gamma, sites)?.wick_expectation().abs())
}

/// `|E_μ[u_j p] − E_μ[∂_j p]|`.
pub fn check_ibp<C: Coefficient>(p: &CylinderPolynomial<C>, j: i64) -> C {
    let lhs = CylinderPolynomial::var(j).mul(p).wick_expectation();
    let rhs = p.partial(j).wick_expectation();
    (lhs - rhs).abs()
}

/// A corpus polynomial with integer coefficients and a rational coupling,
/// so it can be instantiated exactly or in floating point.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub terms: Vec<(Vec<(i64, u32)>, i64)>,
    pub gamma: (i64, i64),
}

impl CorpusEntry {
    pub fn polynomial<C: Coefficient>(&self) -> CylinderPolynomial<C> {
        let mut p = CylinderPolynomial::zero();
        for (f, c) in &self.terms {
            p.add_term(Monomial::new(f), C::from_ratio(*c, 1));
        }
        p
    }

    pub fn gamma<C: Coefficient>(&self) -> C {
        C::from_ratio(self.gamma.0, self.gamma.1)
    }
}

/// Random polynomials of degree `≤ max_degree` on windows of `≤ max_window`
/// consecutive sites, with couplings `γ = k/64 ∈ (0, 1]`.
pub fn random_corpus(count: usize, seed: u64, max_degree: u32, max_window: usize) -> Vec<CorpusEntry> {
    let mut rng = NoiseStream::new(seed, 0);
    let mut pick = |k: u64| rng.next_u64() % k;
    (0..count)
        .map(|_| {
            let width = 1 + pick(max_window as u64) as i64;
            let offset = pick(7) as i64 - 3;
            let n_terms = 1 + pick(6) as usize;
            let mut terms = Vec::with_capacity(n_terms);
            for _ in 0..n_terms {
                let degree = pick(max_degree as u64 + 1) as u32;
                let factors: Vec<(i64, u32)> = (0..degree).map(|_| (offset + pick(width as u64) as i64, 1)).collect();
                let mut coeff = pick(19) as i64 - 9;
                if coeff == 0 {
                    coeff = 1;
                }
                terms.push((factors, coeff));
            }
            CorpusEntry { terms, gamma: (1 + pick(64) as i64, 64) }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArithmeticMode {
    Float,
    Rational,
}

/// Outcome of certifying a corpus in one arithmetic mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub mode: ArithmeticMode,
    pub corpus_size: usize,
    pub torus_sites: usize,
    pub max_invariance_residual: f64,
    pub max_symmetric_residual: f64,
    pub max_antisymmetric_residual: f64,
    pub max_ibp_residual: f64,
    /// Exact zero everywhere (meaningful in rational mode only).
    pub exact_zero: bool,
    pub tolerance: f64,
    pub pass: bool,
}

/// Floating-point tolerance for the invariance residual.
pub const FLOAT_TOLERANCE: f64 = 1e-9;

fn certify_generic<C: Coefficient>(
    corpus: &[CorpusEntry],
    sites: usize,
    mode: ArithmeticMode,
    kind: Nonlinearity,
) -> Result<CertificationReport, GaussianError> {
    let mut inv = C::zero();
    let mut sym = C::zero();
    let mut anti = C::zero();
    let mut ibp = C::zero();
    let max = |a: C, b: C| if b > a { b } else { a };
    for entry in corpus {
        let p: CylinderPolynomial<C> = entry.polynomial();
        let gamma: C = entry.gamma();
        let s = apply_symmetric(&p, sites)?;
        let a = apply_antisymmetric(&p, &gamma, sites, kind)?;
        sym = max(sym, s.wick_expectation().abs());
        anti = max(anti, a.wick_expectation().abs());
        inv = max(inv, s.add(&a).wick_expectation().abs());
        if let Some((lo, hi)) = p.window() {
            for j in (lo - 1)..=(hi + 1) {
                ibp = max(ibp, check_ibp(&p, j));
            }
        }
    }
    let exact_zero = inv.is_zero() && sym.is_zero() && anti.is_zero() && ibp.is_zero();
    let tolerance = match mode {
        ArithmeticMode::Float => FLOAT_TOLERANCE,
        ArithmeticMode::Rational => 0.0,
    };
    let (inv, sym, anti, ibp) = (inv.to_f64(), sym.to_f64(), anti.to_f64(), ibp.to_f64());
    let pass = match mode {
        ArithmeticMode::Float => inv <= tolerance && sym <= tolerance && anti <= tolerance && ibp <= tolerance,
        ArithmeticMode::Rational => exact_zero,
    };
    Ok(CertificationReport {
        mode,
        corpus_size: corpus.len(),
        torus_sites: sites,
        max_invariance_residual: inv,
        max_symmetric_residual: sym,
        max_antisymmetric_residual: anti,
        max_ibp_residual: ibp,
        exact_zero,
        tolerance,
        pass,
    })
}

/// Certifies `E_μ[L_M p] = 0` (and its symmetric/antisymmetric parts) and
/// Gaussian integration by parts over the whole corpus.
pub fn certify(corpus: &[CorpusEntry], sites: usize, mode: ArithmeticMode) -> Result<CertificationReport, GaussianError> {
    certify_with(corpus, sites, mode, Nonlinearity::SasamotoSpohn)
}

/// As [`certify`], for an arbitrary nonlinearity (the naive one must fail).
pub fn certify_with(
    corpus: &[CorpusEntry],
    sites: usize,
    mode: ArithmeticMode,
    kind: Nonlinearity,
) -> Result<CertificationReport, GaussianError> {
    match mode {
        ArithmeticMode::Float => certify_generic::<f64>(corpus, sites, mode, kind),
        ArithmeticMode::Rational => certify_generic::<BigRational>(corpus, sites, mode, kind),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type P = CylinderPolynomial<BigRational>;
    type F = CylinderPolynomial<f64>;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::from_ratio(n, d)
    }

    #[test]
    fn double_factorial_moments() {
        assert_eq!(gaussian_moment(0), 1);
        assert_eq!(gaussian_moment(2), 1);
        assert_eq!(gaussian_moment(4), 3);
        assert_eq!(gaussian_moment(6), 15);
        assert_eq!(gaussian_moment(8), 105);
        assert_eq!(gaussian_moment(3), 0);
    }

    #[test]
    fn wick_examples() {
        assert_eq!(P::monomial(&[(0, 2)], q(1, 1)).wick_expectation(), q(1, 1));
        assert_eq!(P::monomial(&[(0, 4)], q(1, 1)).wick_expectation(), q(3, 1));
        assert_eq!(P::monomial(&[(0, 1), (1, 1)], q(1, 1)).wick_expectation(), q(0, 1));
        assert_eq!(P::monomial(&[(0, 2), (3, 2)], q(2, 1)).wick_expectation(), q(2, 1));
    }

    #[test]
    fn derivative_examples() {
        let u0sq = P::monomial(&[(0, 2)], q(1, 1));
        assert_eq!(u0sq.partial(0), P::monomial(&[(0, 1)], q(2, 1)));
        assert!(u0sq.partial(1).is_zero());
        let p = P::monomial(&[(0, 3), (1, 1)], q(1, 1));
        assert_eq!(p.partial(0), P::monomial(&[(0, 2), (1, 1)], q(3, 1)));
    }

    #[test]
    fn generator_of_constants_and_linear_functions() {
        let g = q(3, 7);
        assert!(apply_generator(&P::one(), &g, 8).unwrap().is_zero());

        // L u_0 = ½(u_1 + u_{-1} − 2u_0) + γ(w_0 − w_{-1}), written out by hand.
        let got = apply_generator(&P::var(0), &g, 8).unwrap();
        let mut want = P::zero();
        want.add_term(Monomial::new(&[(1, 1)]), q(1, 2));
        want.add_term(Monomial::new(&[(-1, 1)]), q(1, 2));
        want.add_term(Monomial::new(&[(0, 1)]), q(-1, 1));
        let third = g.clone() * q(1, 3);
        want.add_term(Monomial::new(&[(0, 2)]), third.clone());
        want.add_term(Monomial::new(&[(0, 1), (1, 1)]), third.clone());
        want.add_term(Monomial::new(&[(1, 2)]), third.clone());
        want.add_term(Monomial::new(&[(-1, 2)]), -third.clone());
        want.add_term(Monomial::new(&[(-1, 1), (0, 1)]), -third.clone());
        want.add_term(Monomial::new(&[(0, 2)]), -third);
        assert_eq!(got, want);
    }

    #[test]
    fn generator_parts_on_square() {
        let p = P::monomial(&[(0, 2)], q(1, 1));
        let s = apply_symmetric(&p, 8).unwrap();
        // second-order part contributes +2 and the drift part −2 in expectation
        let second_order: P = {
            let mut acc = P::zero();
            for j in -1..=0 {
                let grad = p.partial(j + 1).sub(&p.partial(j));
                acc = acc.add(&grad.partial(j + 1).sub(&grad.partial(j)).scale(&q(1, 2)));
            }
            acc
        };
        assert_eq!(second_order.wick_expectation(), q(2, 1));
        assert_eq!(s.sub(&second_order).wick_expectation(), q(-2, 1));
        assert_eq!(s.wick_expectation(), q(0, 1));
        let a = apply_antisymmetric(&p, &q(1, 2), 8, Nonlinearity::SasamotoSpohn).unwrap();
        assert_eq!(a.wick_expectation(), q(0, 1));
    }

    #[test]
    fn invariance_examples() {
        let g = q(5, 9);
        for p in [P::monomial(&[(0, 2)], q(1, 1)), P::monomial(&[(0, 1), (1, 1), (2, 1)], q(1, 1))] {
            assert_eq!(check_invariance(&p, &g, 8).unwrap(), q(0, 1));
        }
        assert_eq!(check_invariance(&P::monomial(&[(0, 3)], q(1, 1)), &g, 8).unwrap(), q(0, 1));
    }

    #[test]
    fn naive_current_breaks_invariance() {
        // E[A u_0³] = 3γ E[u_0²(u_0² − u_{-1}²)] = 6γ for w_j = u_j².
        let g = q(1, 4);
        let p = P::monomial(&[(0, 3)], q(1, 1));
        let a = apply_antisymmetric(&p, &g, 8, Nonlinearity::Naive).unwrap();
        assert_eq!(a.wick_expectation(), q(6, 1) * g);
    }

    #[test]
    fn ibp_examples() {
        let p = P::monomial(&[(0, 3)], q(1, 1));
        assert_eq!(P::var(0).mul(&p).wick_expectation(), q(3, 1));
        assert_eq!(check_ibp(&p, 0), q(0, 1));
        assert_eq!(check_ibp(&P::one(), 4), q(0, 1));
        assert_eq!(check_ibp(&P::monomial(&[(1, 2)], q(1, 1)), 0), q(0, 1));
    }

    #[test]
    fn window_overflow_is_reported() {
        let p = P::monomial(&[(0, 1), (4, 1)], q(1, 1));
        let err = apply_generator(&p, &q(1, 2), 6).unwrap_err();
        assert_eq!(err, GaussianError::WindowOverflow { lo: 0, hi: 4, width: 5, needed: 7, sites: 6 });
        assert!(apply_generator(&p, &q(1, 2), 7).is_ok());
    }

    #[test]
    fn corpus_certifies_in_both_modes() {
        let corpus = random_corpus(60, 17, 4, 5);
        assert!(corpus.iter().all(|e| {
            let p: F = e.polynomial();
            let w = p.window().map(|(a, b)| b - a + 1).unwrap_or(0);
            p.degree() <= 4 && w <= 5
        }));
        let r = certify(&corpus, 7, ArithmeticMode::Rational).unwrap();
        assert!(r.pass && r.exact_zero, "{r:?}");
        let f = certify(&corpus, 7, ArithmeticMode::Float).unwrap();
        assert!(f.pass, "{f:?}");
    }

    #[test]
    fn carre_du_champ_identity() {
        // L(pq) − pLq − qLp = Σ_j ((∂_{j+1}−∂_j)p)((∂_{j+1}−∂_j)q); the first-order
        // and nonlinear parts are derivations and drop out.
        let corpus = random_corpus(12, 5, 3, 3);
        let g = q(2, 3);
        for pair in corpus.chunks(2) {
            let p: P = pair[0].polynomial();
            let r: P = pair[1].polynomial();
            let lhs = apply_generator(&p.mul(&r), &g, 12)
                .unwrap()
                .sub(&p.mul(&apply_generator(&r, &g, 12).unwrap()))
                .sub(&r.mul(&apply_generator(&p, &g, 12).unwrap()));
            let mut rhs = P::zero();
            for j in -6..6 {
                let dp = p.partial(j + 1).sub(&p.partial(j));
                let dr = r.partial(j + 1).sub(&r.partial(j));
                rhs = rhs.add(&dp.mul(&dr));
            }
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn generator_matches_finite_differences() {
        let corpus = random_corpus(10, 99, 4, 4);
        let gamma = 0.37;
        let h = 1e-3;
        let mut rng = NoiseStream::new(8, 0);
        for e in &corpus {
            let p: F = e.polynomial();
            let Some((lo, hi)) = p.window() else { continue };
            let point: Vec<f64> = (0..(hi - lo + 5)).map(|_| rng.standard_normal()).collect();
            let at = |v: &[f64], s: i64| v[(s - lo + 2) as usize];
            let f = |v: &[f64]| p.eval(|s| at(v, s));
            let bump = |v: &[f64], s: i64, d: f64| {
                let mut w = v.to_vec();
                w[(s - lo + 2) as usize] += d;
                w
            };
            // D_j f = (∂_{j+1} − ∂_j) f as a directional central difference.
            let dir = |v: &[f64], j: i64, d: f64| bump(&bump(v, j + 1, d), j, -d);
            let mut numeric = 0.0;
            for j in (lo - 1)..=hi {
                let second = (f(&dir(&point, j, h)) - 2.0 * f(&point) + f(&dir(&point, j, -h))) / (h * h);
                let first = (f(&dir(&point, j, h)) - f(&dir(&point, j, -h))) / (2.0 * h);
                numeric += 0.5 * second - 0.5 * (at(&point, j + 1) - at(&point, j)) * first;
            }
            let w = |j: i64| {
                let (a, b) = (at(&point, j), at(&point, j + 1));
                (a * a + a * b + b * b) / 3.0
            };
            for j in lo..=hi {
                let dj = (f(&bump(&point, j, h)) - f(&bump(&point, j, -h))) / (2.0 * h);
                numeric += gamma * (w(j) - w(j - 1)) * dj;
            }
            let symbolic = apply_generator(&p, &gamma, 16).unwrap().eval(|s| at(&point, s));
            let scale = 1.0 + symbolic.abs();
            assert!((numeric - symbolic).abs() < 1e-4 * scale, "{numeric} vs {symbolic}");
        }
    }
}
