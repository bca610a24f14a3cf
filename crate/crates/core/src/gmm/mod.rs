//! Gaussian mixture core: EM fitting, BIC model selection, Gaussian products and
//! Gaussian mixture regression.

mod em;
mod product;
mod regression;
mod selection;

pub use em::{em_fit, em_fit_joint, em_fit_with, FitOptions, JointInit};
pub use product::gaussian_product;
pub use regression::{gmr, Regressor};
pub use selection::{bic, free_parameters, select_k, select_k_with, CandidateFit, KSelection};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Ridge added to every covariance after each M-step.
pub const COV_REGULARIZATION: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_K_MIN: usize = 2;
pub const DEFAULT_K_MAX: usize = 8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    /// Builds a Gaussian, symmetrising `cov` and checking positive definiteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("gaussian must have dimension >= 1"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: cov.nrows() });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters"));
        }
        let cov = symmetrize(cov);
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Gaussian { mean, cov })
    }

    pub(crate) fn new_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Gaussian { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let chol = match Cholesky::new(self.cov.clone()) {
            Some(c) => c,
            None => return f64::NEG_INFINITY,
        };
        log_density(&chol, &self.mean, x)
    }

    pub fn pdf(&self, x: &DVector<f64>) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Image under the affine map `x -> a x + b`.
    pub fn transform(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Gaussian {
        let mean = a * &self.mean + b;
        let cov = symmetrize(a * &self.cov * a.transpose());
        Gaussian { mean, cov }
    }
}

pub(crate) fn log_density(chol: &Cholesky<f64, Dyn>, mean: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let diff = x - mean;
    let z = chol.l().solve_lower_triangular(&diff).expect("cholesky factor is invertible");
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (z.norm_squared() + log_det + mean.len() as f64 * LN_2PI)
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl MixtureModel {
    /// Weights are renormalised; they must all be positive and components must share a
    /// dimension.
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch { expected: components.len(), actual: weights.len() });
        }
        let d = components[0].dim();
        if let Some(g) = components.iter().find(|g| g.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, actual: g.dim() });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("mixture weights must be positive and finite"));
        }
        let total: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(MixtureModel { weights, components })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn log_likelihood(&self, data: &[DVector<f64>]) -> Result<f64> {
        let chols: Vec<_> = self
            .components
            .iter()
            .map(|g| Cholesky::new(g.cov.clone()).ok_or(Error::NotPositiveDefinite))
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        let mut terms = vec![0.0; self.k()];
        for x in data {
            if x.len() != self.dim() {
                return Err(Error::DimensionMismatch { expected: self.dim(), actual: x.len() });
            }
            for (k, (g, c)) in self.components.iter().zip(&chols).enumerate() {
                terms[k] = self.weights[k].ln() + log_density(c, &g.mean, x);
            }
            total += log_sum_exp(&terms);
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub bic: f64,
    /// Log-likelihood after initialisation followed by one entry per accepted EM iteration.
    pub trace: Vec<f64>,
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
