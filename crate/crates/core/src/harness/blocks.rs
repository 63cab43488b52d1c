//! Time-block integrals of lattice statistics over disjoint spatial copies.

use crate::fields::{
    antisymmetric_rate, block_averages, bg_residual_rate, curvature_field, gradient_surrogate_rate, one_block_rate,
    q_field_rate, ucp_rate, LocalObservable, SampledTestFunction,
};
use crate::integrator::{Observer, Snapshot};

/// A lattice integrand `s ↦ F(u(s))`, paired with one test-function copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrand {
    /// `Σ_j {u_j u_{j+1} − τ_jQ(l)} ∇^nφ_j`.
    BgResidual(usize),
    /// `Σ_j g(τ_j u)[u_{j+1} − ū^l_j] ∇^nφ_j`.
    OneBlock(usize, LocalObservable),
    /// `Σ_j φ_j {(u_j u_{j+1} − u_j²) + 1}`.
    Ucp,
    /// `Σ_j τ_jQ(l) ∇^nφ_j`.
    QField(usize),
    /// `Σ_j u_j u_{j+1} ∇^nφ_j`.
    PairCurrent,
    /// `X^n(∂_x²φ)`.
    Curvature,
    /// `n^{1/4} Σ_j (u_{j+1} − u_j) ∇^nφ_j`.
    Surrogate,
    /// `−Σ_j w_j ∇^nφ_j`.
    Antisymmetric,
}

impl Integrand {
    fn block(self) -> Option<usize> {
        match self {
            Integrand::BgResidual(l) | Integrand::OneBlock(l, _) | Integrand::QField(l) => Some(l),
            _ => None,
        }
    }
}

/// Integrals recorded for one block: `values[c][k·copies + i]` is the
/// integral of integrand `k` on copy `i` from the block start to checkpoint
/// `c`; `sup[k·copies + i]` is the running maximum of its square over the
/// recorded grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRecord {
    pub values: Vec<Vec<f64>>,
    pub sup: Vec<f64>,
}

/// Left-endpoint quadrature of several integrands over consecutive time
/// blocks of equal length.
pub struct BlockIntegrals {
    copies: Vec<SampledTestFunction>,
    integrands: Vec<Integrand>,
    block_steps: usize,
    /// Step offsets inside a block, increasing, the last equal to
    /// `block_steps`.
    checkpoints: Vec<usize>,
    n: f64,
    ls: Vec<usize>,
    averages: Vec<Vec<f64>>,
    rates: Vec<f64>,
    current: Vec<f64>,
    sup: Vec<f64>,
    pending: Vec<Vec<f64>>,
    prev_time: Option<f64>,
    block_start: usize,
    pub blocks: Vec<BlockRecord>,
}

impl BlockIntegrals {
    pub fn new(
        copies: Vec<SampledTestFunction>,
        integrands: Vec<Integrand>,
        block_steps: usize,
        mut checkpoints: Vec<usize>,
    ) -> Self {
        assert!(!copies.is_empty() && block_steps > 0);
        checkpoints.retain(|&c| c > 0 && c < block_steps);
        checkpoints.sort_unstable();
        checkpoints.dedup();
        checkpoints.push(block_steps);
        let mut ls: Vec<usize> = integrands.iter().filter_map(|i| i.block()).collect();
        ls.sort_unstable();
        ls.dedup();
        let m = copies[0].sites();
        let width = integrands.len() * copies.len();
        Self {
            n: copies[0].n() as f64,
            averages: vec![vec![0.0; m]; ls.len()],
            ls,
            rates: vec![0.0; width],
            current: vec![0.0; width],
            sup: vec![0.0; width],
            pending: Vec::new(),
            prev_time: None,
            block_start: 0,
            blocks: Vec::new(),
            copies,
            integrands,
            block_steps,
            checkpoints,
        }
    }

    pub fn copies(&self) -> usize {
        self.copies.len()
    }

    pub fn checkpoints(&self) -> &[usize] {
        &self.checkpoints
    }

    fn compute_rates(&mut self, u: &[f64]) {
        for (l, avg) in self.ls.iter().zip(self.averages.iter_mut()) {
            block_averages(u, *l, avg);
        }
        let nc = self.copies.len();
        for (k, integrand) in self.integrands.iter().enumerate() {
            let avg = integrand.block().map(|l| &self.averages[self.ls.binary_search(&l).expect("registered")]);
            for (i, f) in self.copies.iter().enumerate() {
                let r = match *integrand {
                    Integrand::BgResidual(l) => bg_residual_rate(u, avg.expect("block"), l, f.gradient()),
                    Integrand::OneBlock(_, g) => one_block_rate(u, avg.expect("block"), f.gradient(), g),
                    Integrand::Ucp => ucp_rate(u, f.phi()),
                    Integrand::QField(l) => q_field_rate(avg.expect("block"), l, f.gradient()),
                    Integrand::PairCurrent => pair_current_rate(u, f.gradient()),
                    Integrand::Curvature => curvature_field(u, f),
                    Integrand::Surrogate => gradient_surrogate_rate(u, f),
                    Integrand::Antisymmetric => antisymmetric_rate(u, f),
                };
                self.rates[k * nc + i] = r;
            }
        }
    }
}

fn pair_current_rate(u: &[f64], weights: &[f64]) -> f64 {
    let m = u.len();
    (0..m).filter(|&j| weights[j] != 0.0).map(|j| u[j] * u[(j + 1) % m] * weights[j]).sum()
}

impl Observer for BlockIntegrals {
    fn observe(&mut self, snap: &Snapshot<'_>) {
        let t = snap.time / self.n;
        if let Some(tp) = self.prev_time {
            let h = t - tp;
            for ((c, r), s) in self.current.iter_mut().zip(&self.rates).zip(self.sup.iter_mut()) {
                *c += h * r;
                *s = s.max(*c * *c);
            }
        }
        self.prev_time = Some(t);
        let offset = snap.step - self.block_start;
        if self.checkpoints.binary_search(&offset).is_ok() {
            self.pending.push(self.current.clone());
        }
        if offset == self.block_steps {
            self.blocks.push(BlockRecord { values: std::mem::take(&mut self.pending), sup: self.sup.clone() });
            self.current.iter_mut().for_each(|x| *x = 0.0);
            self.sup.iter_mut().for_each(|x| *x = 0.0);
            self.block_start = snap.step;
        }
        self.compute_rates(snap.state);
    }
}

/// Evenly spaced copy offsets for `count` copies on `sites`.
pub fn copy_offsets(sites: usize, count: usize) -> Vec<i64> {
    (0..count).map(|c| (c * sites / count) as i64).collect()
}

/// Largest number of disjoint windows of `window` sites on the torus.
pub fn max_copies(sites: usize, window: usize) -> usize {
    (sites / window).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::TestFunction;

    #[test]
    fn constant_rate_integrates_linearly() {
        // u ≡ 0: the ucp integrand is Σφ_j at all times.
        let tf = TestFunction::gaussian();
        let n = 4;
        let m = 64;
        let f = SampledTestFunction::new(&tf, n, m, 0).unwrap();
        let sum: f64 = f.phi().iter().sum();
        let mut obs = BlockIntegrals::new(vec![f], vec![Integrand::Ucp], 10, vec![5]);
        let u = vec![0.0; m];
        for step in 0..=20 {
            obs.observe(&Snapshot { step, time: step as f64 * 0.4, state: &u, noise: &[] });
        }
        assert_eq!(obs.blocks.len(), 2);
        // 10 steps of micro 0.4 at n = 4 → macro 1.0
        let rec = &obs.blocks[1];
        assert!((rec.values[0][0] - 0.5 * sum).abs() < 1e-12);
        assert!((rec.values[1][0] - sum).abs() < 1e-12);
        assert!((rec.sup[0] - sum * sum).abs() < 1e-10);
    }

    #[test]
    fn offsets_are_disjoint() {
        assert_eq!(copy_offsets(100, 4), vec![0, 25, 50, 75]);
        assert_eq!(max_copies(968, 241), 4);
        assert_eq!(max_copies(10, 20), 1);
    }
}
