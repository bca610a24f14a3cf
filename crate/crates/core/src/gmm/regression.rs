use nalgebra::{Cholesky, DMatrix, DVector};

use super::{log_sum_exp, symmetrize, Gaussian, MixtureModel, LN_2PI};
use crate::error::{Error, Result};

/// Conditions a mixture on `in_dims` and moment-matches the result to one Gaussian
/// over `out_dims`.
pub fn gmr(model: &MixtureModel, in_dims: &[usize], out_dims: &[usize], x_in: &DVector<f64>) -> Result<Gaussian> {
    Regressor::new(model, in_dims, out_dims)?.predict(x_in)
}

struct Conditional {
    log_weight: f64,
    in_mean: DVector<f64>,
    out_mean: DVector<f64>,
    in_chol: Cholesky<f64, nalgebra::Dyn>,
    in_log_norm: f64,
    gain: DMatrix<f64>,
    cov: DMatrix<f64>,
}

/// Precomputed per-component conditioning terms for repeated GMR queries.
pub struct Regressor {
    parts: Vec<Conditional>,
    n_in: usize,
    n_out: usize,
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

impl Regressor {
    pub fn new(model: &MixtureModel, in_dims: &[usize], out_dims: &[usize]) -> Result<Self> {
        let d = model.dim();
        if in_dims.is_empty() || out_dims.is_empty() {
            return Err(Error::invalid("gmr needs non-empty input and output dimensions"));
        }
        let mut seen = vec![false; d];
        for &i in in_dims.iter().chain(out_dims) {
            if i >= d {
                return Err(Error::IndexOutOfRange { index: i, len: d });
            }
            if seen[i] {
                return Err(Error::invalid(format!("dimension {i} repeated across gmr index sets")));
            }
            seen[i] = true;
        }
        let mut parts = Vec::with_capacity(model.k());
        for (w, g) in model.weights().iter().zip(model.components()) {
            let s_ii = select(g.cov(), in_dims, in_dims);
            let s_oi = select(g.cov(), out_dims, in_dims);
            let s_oo = select(g.cov(), out_dims, out_dims);
            let in_chol = Cholesky::new(s_ii).ok_or(Error::NotPositiveDefinite)?;
            let gain = in_chol.solve(&s_oi.transpose()).transpose();
            let cov = symmetrize(&s_oo - &gain * s_oi.transpose());
            let log_det: f64 = in_chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            parts.push(Conditional {
                log_weight: w.ln(),
                in_mean: select_vec(g.mean(), in_dims),
                out_mean: select_vec(g.mean(), out_dims),
                in_log_norm: -0.5 * (log_det + in_dims.len() as f64 * LN_2PI),
                in_chol,
                gain,
                cov,
            });
        }
        Ok(Regressor { parts, n_in: in_dims.len(), n_out: out_dims.len() })
    }

    pub fn predict(&self, x_in: &DVector<f64>) -> Result<Gaussian> {
        if x_in.len() != self.n_in {
            return Err(Error::DimensionMismatch { expected: self.n_in, actual: x_in.len() });
        }
        if x_in.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gmr input"));
        }
        let mut log_h = Vec::with_capacity(self.parts.len());
        let mut means = Vec::with_capacity(self.parts.len());
        for p in &self.parts {
            let diff = x_in - &p.in_mean;
            let z = p.in_chol.l().solve_lower_triangular(&diff).expect("invertible factor");
            log_h.push(p.log_weight + p.in_log_norm - 0.5 * z.norm_squared());
            means.push(&p.out_mean + &p.gain * diff);
        }
        let lse = log_sum_exp(&log_h);
        let mut mean = DVector::zeros(self.n_out);
        let mut second = DMatrix::zeros(self.n_out, self.n_out);
        for ((lh, m), p) in log_h.iter().zip(&means).zip(&self.parts) {
            let h = (lh - lse).exp();
            mean += m * h;
            second += (&p.cov + m * m.transpose()) * h;
        }
        let cov = symmetrize(second - &mean * mean.transpose());
        Ok(Gaussian::new_unchecked(mean, cov))
    }
}
