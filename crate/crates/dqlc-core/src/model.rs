//! Symmetric multivariate Gaussian source model.
//!
//! The `M` sources follow `x_m = s + w_m` with a common component
//! `s ~ N(0, sigma_s^2)` and per-source components `w_m ~ N(0, sigma_w^2)`.
//! Every pair of sources then has variance `sigma_x^2 = sigma_s^2 + sigma_w^2`
//! and correlation `rho_x = sigma_s^2 / sigma_x^2`, so the covariance matrix
//! has `sigma_x^2` on the diagonal and `sigma_x^2 * rho_x` elsewhere, with
//! eigenvalues `lambda_1 = sigma_x^2 ((M-1) rho_x + 1)` and
//! `lambda_i = sigma_x^2 (1 - rho_x)` of multiplicity `M - 1`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::math::{normal_interval_prob, truncated_mean};

/// Identifier of the seedable generator used by [`SourceModel::sample`].
/// Recorded in run metadata so results are bit-reproducible.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("source count must be at least 2, got {0}")]
    TooFewSources(usize),
    #[error("variance components must be non-negative and not both zero")]
    InvalidVariance,
    #[error("correlation must lie in [0, 1], got {0}")]
    InvalidCorrelation(f64),
    #[error("covariance matrix must be symmetric")]
    NotSymmetric,
    #[error("covariance matrix must be positive semidefinite")]
    NotPsd,
    #[error("partition indices out of range or overlapping")]
    BadPartition,
}

/// Symmetric `M`-variate Gaussian source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceModel {
    m: usize,
    sigma_s2: f64,
    sigma_w2: f64,
}

impl SourceModel {
    /// Build from the generative components `s` and `w_m`.
    pub fn new(m: usize, sigma_s2: f64, sigma_w2: f64) -> Result<Self, ModelError> {
        if m < 2 {
            return Err(ModelError::TooFewSources(m));
        }
        if !(sigma_s2 >= 0.0) || !(sigma_w2 >= 0.0) || sigma_s2 + sigma_w2 == 0.0 {
            return Err(ModelError::InvalidVariance);
        }
        Ok(Self { m, sigma_s2, sigma_w2 })
    }

    /// Build from the per-source variance and pairwise correlation.
    pub fn from_correlation(m: usize, sigma_x2: f64, rho_x: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&rho_x) {
            return Err(ModelError::InvalidCorrelation(rho_x));
        }
        if !(sigma_x2 > 0.0) {
            return Err(ModelError::InvalidVariance);
        }
        Self::new(m, rho_x * sigma_x2, (1.0 - rho_x) * sigma_x2)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn sigma_s2(&self) -> f64 {
        self.sigma_s2
    }

    pub fn sigma_w2(&self) -> f64 {
        self.sigma_w2
    }

    pub fn sigma_x2(&self) -> f64 {
        self.sigma_s2 + self.sigma_w2
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x2().sqrt()
    }

    pub fn rho_x(&self) -> f64 {
        self.sigma_s2 / self.sigma_x2()
    }

    /// The `M x M` covariance matrix.
    pub fn covariance(&self) -> DMatrix<f64> {
        let sx2 = self.sigma_x2();
        let off = sx2 * self.rho_x();
        DMatrix::from_fn(self.m, self.m, |i, j| if i == j { sx2 } else { off })
    }

    /// Closed-form eigenvalues of the covariance matrix.
    pub fn spectrum(&self) -> Spectrum {
        let sx2 = self.sigma_x2();
        let rho = self.rho_x();
        Spectrum {
            m: self.m,
            lambda1: sx2 * ((self.m as f64 - 1.0) * rho + 1.0),
            lambda_rest: sx2 * (1.0 - rho),
        }
    }

    /// Draw `n` source vectors via the two-factor construction
    /// `x_m = s + w_m`, which is exact for this covariance. Deterministic
    /// for a fixed seed.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ss = self.sigma_s2.sqrt();
        let sw = self.sigma_w2.sqrt();
        (0..n)
            .map(|_| {
                let s: f64 = StandardNormal.sample(&mut rng);
                let s = ss * s;
                (0..self.m)
                    .map(|_| {
                        let w: f64 = StandardNormal.sample(&mut rng);
                        s + sw * w
                    })
                    .collect()
            })
            .collect()
    }

    /// Conditional mean and variance of the next source in the chain
    /// `p(x_k | x_1 = v_1, ..., x_{k-1} = v_{k-1})` for this symmetric
    /// model. `observed` holds the conditioning values.
    pub fn chain_conditional(&self, observed: &[f64]) -> (f64, f64) {
        let j = observed.len() as f64;
        if observed.is_empty() {
            return (0.0, self.sigma_x2());
        }
        let rho = self.rho_x();
        let denom = 1.0 + (j - 1.0) * rho;
        let sum: f64 = observed.iter().sum();
        let mean = rho * sum / denom;
        let var = self.sigma_x2() * (1.0 - j * rho * rho / denom);
        (mean, var.max(0.0))
    }

    /// Probability that `x_k` lands in `(a, b]` given the chain values in
    /// `observed`.
    pub fn chain_cell_prob(&self, observed: &[f64], a: f64, b: f64) -> f64 {
        let (mean, var) = self.chain_conditional(observed);
        let s = var.sqrt();
        if s == 0.0 {
            return if a < mean && mean <= b { 1.0 } else { 0.0 };
        }
        normal_interval_prob(a - mean, b - mean, s)
    }

    /// Conditional mean of `x_k` restricted to the cell `(a, b]`, given the
    /// chain values in `observed`.
    pub fn chain_cell_mean(&self, observed: &[f64], a: f64, b: f64) -> f64 {
        let (mean, var) = self.chain_conditional(observed);
        truncated_mean(a, b, mean, var.sqrt())
    }
}

/// Eigenvalues of the symmetric covariance: one large value plus a repeated
/// value of multiplicity `M - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectrum {
    pub m: usize,
    pub lambda1: f64,
    pub lambda_rest: f64,
}

impl Spectrum {
    /// All `M` eigenvalues, largest first.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v = vec![self.lambda_rest; self.m];
        v[0] = self.lambda1;
        v
    }
}

/// A Gaussian vector with its mean and covariance partitioned into an `a`
/// block and a `b` block, supporting the conditional law
/// `p(y_a | y_b) = N(m_a + S_ab S_bb^+ (y_b - m_b), S_aa - S_ab S_bb^+ S_ba)`.
#[derive(Debug, Clone)]
pub struct PartitionedGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    idx_a: Vec<usize>,
    idx_b: Vec<usize>,
}

impl PartitionedGaussian {
    /// `idx_a` and `idx_b` select the two blocks; they must be disjoint and
    /// in range. The covariance must be symmetric PSD.
    pub fn new(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        idx_a: Vec<usize>,
        idx_b: Vec<usize>,
    ) -> Result<Self, ModelError> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(ModelError::BadPartition);
        }
        let scale = cov.amax().max(1e-300);
        for i in 0..n {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * scale {
                    return Err(ModelError::NotSymmetric);
                }
            }
        }
        let eig = cov.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
            return Err(ModelError::NotPsd);
        }
        let mut seen = vec![false; n];
        for &i in idx_a.iter().chain(idx_b.iter()) {
            if i >= n || seen[i] {
                return Err(ModelError::BadPartition);
            }
            seen[i] = true;
        }
        if idx_a.is_empty() || idx_b.is_empty() {
            return Err(ModelError::BadPartition);
        }
        Ok(Self { mean, cov, idx_a, idx_b })
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.cov[(rows[i], cols[j])])
    }

    /// Conditional mean and covariance of the `a` block given `y_b`.
    ///
    /// Singular `S_bb` is handled by an eigenvalue-thresholded pseudoinverse
    /// (threshold `1e-12` times the largest eigenvalue), which satisfies
    /// `S_bb S_bb^+ S_bb = S_bb`.
    pub fn conditional_moments(&self, y_b: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let s_aa = self.block(&self.idx_a, &self.idx_a);
        let s_ab = self.block(&self.idx_a, &self.idx_b);
        let s_ba = s_ab.transpose();
        let s_bb = self.block(&self.idx_b, &self.idx_b);
        let s_bb_pinv = pseudoinverse(&s_bb);
        let m_a = DVector::from_fn(self.idx_a.len(), |i, _| self.mean[self.idx_a[i]]);
        let m_b = DVector::from_fn(self.idx_b.len(), |i, _| self.mean[self.idx_b[i]]);
        let gain = &s_ab * &s_bb_pinv;
        let mean = m_a + &gain * (y_b - m_b);
        let cov = s_aa - gain * s_ba;
        (mean, cov)
    }
}

fn pseudoinverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let thresh = 1e-12 * lmax.max(1e-300);
    let inv_vals = DVector::from_fn(eig.eigenvalues.len(), |i, _| {
        let l = eig.eigenvalues[i];
        if l.abs() > thresh {
            1.0 / l
        } else {
            0.0
        }
    });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose()
}
