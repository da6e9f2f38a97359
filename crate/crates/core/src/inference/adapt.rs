//! Random-walk proposals whose scale (and, for vector blocks, covariance
//! shape) adapt during burn-in and are frozen afterwards.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Robbins-Monro gain for the log proposal scale.
fn gain(iteration: usize) -> f64 {
    (iteration as f64 + 1.0).powf(-0.6)
}

#[derive(Debug, Clone, Default)]
pub(crate) struct AcceptCounter {
    pub accepted: u64,
    pub proposed: u64,
}

impl AcceptCounter {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Isotropic Gaussian random walk with a single adapted scale.
#[derive(Debug, Clone)]
pub(crate) struct ScaleProposal {
    log_scale: f64,
}

impl ScaleProposal {
    pub fn new(scale: f64) -> Self {
        Self { log_scale: scale.ln() }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn draw<R: Rng>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        let s = self.scale();
        (0..dim).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    pub fn adapt(&mut self, accepted: bool, iteration: usize, target: f64) {
        let a = if accepted { 1.0 } else { 0.0 };
        self.log_scale = (self.log_scale + gain(iteration) * (a - target)).clamp(-12.0, 4.0);
    }
}

/// Gaussian random walk `x + s·L z` where `L L^T` tracks the empirical
/// covariance of the block collected during burn-in.
#[derive(Debug, Clone)]
pub(crate) struct CovarianceProposal {
    dim: usize,
    scale: ScaleProposal,
    chol: DMatrix<f64>,
    n: f64,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl CovarianceProposal {
    pub fn new(dim: usize, initial_sd: f64) -> Self {
        Self {
            dim,
            scale: ScaleProposal::new(1.0),
            chol: DMatrix::identity(dim, dim) * initial_sd,
            n: 0.0,
            mean: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &self.chol * z * self.scale.scale();
        step.iter().copied().collect()
    }

    pub fn adapt(&mut self, accepted: bool, iteration: usize, target: f64) {
        self.scale.adapt(accepted, iteration, target);
    }

    /// Adds the current block value to the running covariance estimate.
    pub fn observe(&mut self, x: &[f64]) {
        let x = DVector::from_column_slice(x);
        self.n += 1.0;
        let delta = &x - &self.mean;
        self.mean += &delta / self.n;
        let delta2 = &x - &self.mean;
        self.scatter += &delta * delta2.transpose();
    }

    /// Replaces the proposal shape with the scaled empirical covariance once
    /// enough points have been observed.
    pub fn refresh(&mut self) {
        if self.n < (2 * self.dim + 10) as f64 {
            return;
        }
        let d = self.dim as f64;
        let mut cov = &self.scatter / (self.n - 1.0) * (2.38 * 2.38 / d);
        let ridge = 1e-10 + 1e-6 * cov.diagonal().max();
        for j in 0..self.dim {
            cov[(j, j)] += ridge;
        }
        if let Some(chol) = cov.cholesky() {
            self.chol = chol.l();
        }
    }

    /// Reorders coordinates after the block's components are permuted.
    pub fn permute(&mut self, order: &[usize]) {
        let cov = &self.chol * self.chol.transpose();
        let permuted = DMatrix::from_fn(self.dim, self.dim, |a, b| cov[(order[a], order[b])]);
        if let Some(chol) = permuted.cholesky() {
            self.chol = chol.l();
        }
        let mean = DVector::from_fn(self.dim, |a, _| self.mean[order[a]]);
        let scatter = DMatrix::from_fn(self.dim, self.dim, |a, b| self.scatter[(order[a], order[b])]);
        self.mean = mean;
        self.scatter = scatter;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scale_moves_toward_target() {
        let mut p = ScaleProposal::new(1.0);
        for i in 0..100 {
            p.adapt(false, i, 0.3);
        }
        assert!(p.scale() < 1.0);
        let mut q = ScaleProposal::new(1.0);
        for i in 0..100 {
            q.adapt(true, i, 0.3);
        }
        assert!(q.scale() > 1.0);
    }

    #[test]
    fn covariance_estimate_follows_observations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = CovarianceProposal::new(2, 1.0);
        for _ in 0..5000 {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            p.observe(&[3.0 * a, 3.0 * a + 0.1 * b]);
        }
        p.refresh();
        let cov = &p.chol * p.chol.transpose() / (2.38 * 2.38 / 2.0);
        assert!((cov[(0, 0)] - 9.0).abs() < 0.6);
        assert!((cov[(0, 1)] - 9.0).abs() < 0.6);
        p.permute(&[1, 0]);
        let swapped = &p.chol * p.chol.transpose() / (2.38 * 2.38 / 2.0);
        assert!((swapped[(1, 1)] - cov[(0, 0)]).abs() < 1e-8);
    }
}
