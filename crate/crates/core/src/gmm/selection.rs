use std::ops::RangeInclusive;

use nalgebra::DVector;

use super::{em_fit_with, FitOptions, FitReport, MixtureModel};
use crate::error::{Error, Result};

/// Free parameters of a `k`-component full-covariance mixture in `d` dimensions.
pub fn free_parameters(k: usize, d: usize) -> usize {
    (k - 1) + k * d + k * d * (d + 1) / 2
}

/// `-2 logL + P ln N`.
pub fn bic(model: &MixtureModel, data: &[DVector<f64>]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::NotEnoughData { needed: 1, got: 0 });
    }
    let ll = model.log_likelihood(data)?;
    let p = free_parameters(model.k(), model.dim()) as f64;
    Ok(-2.0 * ll + p * (data.len() as f64).ln())
}

#[derive(Debug, Clone)]
pub struct CandidateFit {
    pub k: usize,
    pub model: MixtureModel,
    pub report: FitReport,
}

#[derive(Debug, Clone)]
pub struct KSelection {
    pub best_k: usize,
    pub candidates: Vec<CandidateFit>,
}

impl KSelection {
    pub fn best(&self) -> &CandidateFit {
        self.candidates.iter().find(|c| c.k == self.best_k).expect("best_k is one of the candidates")
    }

    pub fn into_best(self) -> CandidateFit {
        let k = self.best_k;
        self.candidates.into_iter().find(|c| c.k == k).expect("best_k is one of the candidates")
    }
}

/// Picks the component count minimising BIC; candidate `k` is fitted with seed
/// `seed + k`.
pub fn select_k(data: &[DVector<f64>], k_range: RangeInclusive<usize>, seed: u64) -> Result<KSelection> {
    select_k_with(data, k_range, &FitOptions { seed, ..FitOptions::default() })
}

pub fn select_k_with(data: &[DVector<f64>], k_range: RangeInclusive<usize>, opts: &FitOptions) -> Result<KSelection> {
    if k_range.is_empty() {
        return Err(Error::invalid("empty component range"));
    }
    if *k_range.start() == 0 || *k_range.end() > data.len() {
        return Err(Error::invalid(format!(
            "component range {}..={} must lie within [1, {}]",
            k_range.start(),
            k_range.end(),
            data.len()
        )));
    }
    let mut candidates = Vec::with_capacity(k_range.clone().count());
    for k in k_range {
        let o = FitOptions { seed: opts.seed.wrapping_add(k as u64), ..opts.clone() };
        let (model, report) = em_fit_with(data, k, &o)?;
        candidates.push(CandidateFit { k, model, report });
    }
    let mut best = &candidates[0];
    for c in &candidates[1..] {
        // strict: ties keep the smaller k
        if c.report.bic < best.report.bic {
            best = c;
        }
    }
    Ok(KSelection { best_k: best.k, candidates })
}
