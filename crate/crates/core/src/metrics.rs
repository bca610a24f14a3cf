//! Teaching efficacy/efficiency and per-group aggregation with bootstrap
//! confidence intervals.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::EvaluationResult;
use crate::tpgmm::DemoSource;

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
pub const CONFIDENCE: f64 = 0.95;

/// Fraction of grid points with a successful reproduction.
pub fn efficacy(result: &EvaluationResult) -> Result<f64> {
    if result.outcomes.is_empty() {
        return Err(Error::invalid("efficacy of an empty grid"));
    }
    Ok(result.successes() as f64 / result.outcomes.len() as f64)
}

/// Efficacy per demonstration.
pub fn efficiency(eps: f64, demos: usize) -> Result<f64> {
    if demos == 0 {
        return Err(Error::invalid("efficiency needs at least one demonstration"));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::invalid(format!("efficacy {eps} outside [0, 1]")));
    }
    Ok(eps / demos as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub rule: String,
    pub source: DemoSource,
    pub initial_point: usize,
    pub demos: usize,
    pub efficacy: f64,
    pub efficiency: f64,
    pub converged: bool,
    /// Demonstrated grid points in order.
    pub points: Vec<usize>,
    /// Coverage after each demonstration.
    pub trace: Vec<f64>,
}

impl TrialRecord {
    pub fn new(
        rule: impl Into<String>,
        source: DemoSource,
        initial_point: usize,
        points: Vec<usize>,
        trace: Vec<f64>,
        converged: bool,
    ) -> Result<Self> {
        if points.len() != trace.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), actual: trace.len() });
        }
        let eps = *trace.last().ok_or_else(|| Error::invalid("trial without demonstrations"))?;
        let demos = points.len();
        Ok(TrialRecord {
            rule: rule.into(),
            source,
            initial_point,
            demos,
            efficacy: eps,
            efficiency: efficiency(eps, demos)?,
            converged,
            points,
            trace,
        })
    }

    /// `efficiency * demos == efficacy` up to the rounding of one division
    /// and one multiplication.
    pub fn is_consistent(&self) -> bool {
        self.demos > 0
            && (self.efficiency * self.demos as f64 - self.efficacy).abs() <= 2.0 * f64::EPSILON * self.efficacy
            && self.efficiency == self.efficacy / self.demos as f64
            && self.trace.len() == self.demos
            && self.points.len() == self.demos
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, confidence: f64, seed: u64) -> Result<Interval> {
    if values.is_empty() {
        return Err(Error::NotEnoughData { needed: 1, got: 0 });
    }
    if resamples == 0 || !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid("bootstrap needs resamples > 0 and confidence in (0, 1)"));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> =
        (0..resamples).map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    let lo = ((tail * resamples as f64).floor() as usize).min(resamples - 1);
    let hi = (((1.0 - tail) * resamples as f64).ceil() as usize).saturating_sub(1).min(resamples - 1);
    Ok(Interval { lo: means[lo], hi: means[hi] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub rule: String,
    pub source: DemoSource,
    pub trials: usize,
    pub mean_efficiency: f64,
    pub efficiency_ci: Interval,
    pub ci_half_width: f64,
    pub mean_demos: f64,
    pub mean_efficacy: f64,
    pub convergence_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub seed: u64,
    pub resamples: usize,
    pub groups: Vec<GroupSummary>,
}

impl SuiteSummary {
    pub fn group(&self, rule: &str, source: DemoSource) -> Result<&GroupSummary> {
        self.groups
            .iter()
            .find(|g| g.rule == rule && g.source == source)
            .ok_or_else(|| Error::MissingGroup(format!("{rule}/{source}")))
    }
}

/// Groups by (rule, source) in sorted order; group `i` bootstraps with seed `seed + i`.
pub fn summarize(records: &[TrialRecord], seed: u64) -> Result<SuiteSummary> {
    summarize_with(records, BOOTSTRAP_RESAMPLES, seed)
}

pub fn summarize_with(records: &[TrialRecord], resamples: usize, seed: u64) -> Result<SuiteSummary> {
    let mut groups: BTreeMap<(&str, DemoSource), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.rule.as_str(), r.source)).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(Error::MissingGroup("no records".into()));
    }
    let mut out = Vec::with_capacity(groups.len());
    for (gi, ((rule, source), rs)) in groups.into_iter().enumerate() {
        if rs.len() < 2 {
            return Err(Error::NotEnoughData { needed: 2, got: rs.len() });
        }
        let eta: Vec<f64> = rs.iter().map(|r| r.efficiency).collect();
        let ci = bootstrap_ci(&eta, resamples, CONFIDENCE, seed.wrapping_add(gi as u64))?;
        let n = rs.len() as f64;
        out.push(GroupSummary {
            rule: rule.to_string(),
            source,
            trials: rs.len(),
            mean_efficiency: mean(&eta),
            efficiency_ci: ci,
            ci_half_width: ci.half_width(),
            mean_demos: rs.iter().map(|r| r.demos as f64).sum::<f64>() / n,
            mean_efficacy: rs.iter().map(|r| r.efficacy).sum::<f64>() / n,
            convergence_rate: rs.iter().filter(|r| r.converged).count() as f64 / n,
        });
    }
    Ok(SuiteSummary { seed, resamples, groups: out })
}
