use nalgebra::{Cholesky, DMatrix, DVector};

use super::{symmetrize, Gaussian};
use crate::error::{Error, Result};

/// Precision-weighted fusion of Gaussians over the same space.
pub fn gaussian_product(gs: &[Gaussian]) -> Result<Gaussian> {
    let first = gs.first().ok_or_else(|| Error::invalid("product of zero gaussians"))?;
    let d = first.dim();
    if gs.len() == 1 {
        return Ok(first.clone());
    }
    let mut precision = DMatrix::<f64>::zeros(d, d);
    let mut info = DVector::<f64>::zeros(d);
    for g in gs {
        if g.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: g.dim() });
        }
        let p = Cholesky::new(g.cov().clone()).ok_or(Error::NotPositiveDefinite)?.inverse();
        info += &p * g.mean();
        precision += p;
    }
    let chol = Cholesky::new(symmetrize(precision)).ok_or(Error::NotPositiveDefinite)?;
    let mean = chol.solve(&info);
    let cov = symmetrize(chol.inverse());
    Ok(Gaussian::new_unchecked(mean, cov))
}
