//! Selection of the next demonstration start point.
//!
//! Every rule sees the same [`GuidanceState`] (grid, latest evaluation,
//! demonstration history, per-region scores) and returns a grid index.
//! Rules are trait objects looked up by name in a [`RuleRegistry`].

mod heuristic;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::task::{EvaluationResult, GridSpec, Outcome, SuccessCriteria, TaskSpec};

pub use heuristic::{heuristic_next, HeuristicRule, HEURISTIC_RADIUS};

/// Lower clamp on region probabilities so that `-p ln p` stays defined.
pub const EPS_P: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightsRepr", into = "WeightsRepr")]
pub struct EntropyWeights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct WeightsRepr {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl TryFrom<WeightsRepr> for EntropyWeights {
    type Error = Error;
    fn try_from(r: WeightsRepr) -> Result<Self> {
        EntropyWeights::new(r.alpha, r.beta, r.gamma)
    }
}

impl From<EntropyWeights> for WeightsRepr {
    fn from(w: EntropyWeights) -> Self {
        WeightsRepr { alpha: w.alpha, beta: w.beta, gamma: w.gamma }
    }
}

impl EntropyWeights {
    /// Weights must be non-negative and sum to one.
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let ws = [alpha, beta, gamma];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("entropy weights must be finite and non-negative"));
        }
        if (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("entropy weights must sum to 1"));
        }
        Ok(EntropyWeights { alpha, beta, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for EntropyWeights {
    fn default() -> Self {
        let third = 1.0 / 3.0;
        EntropyWeights { alpha: third, beta: third, gamma: third }
    }
}

/// Raw failure features of one region and their max-normalized versions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionFeatures {
    pub d_goal: f64,
    pub n_collision: f64,
    pub n_outside: f64,
    pub d_hat: f64,
    pub n_c_hat: f64,
    pub n_o_hat: f64,
}

/// Normalizes each feature by its maximum over all regions (0 when that maximum is 0).
pub fn region_features(raw: &[[f64; 3]]) -> Vec<RegionFeatures> {
    let mut max = [0.0f64; 3];
    for r in raw {
        for (m, v) in max.iter_mut().zip(r) {
            *m = m.max(*v);
        }
    }
    let norm = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
    raw.iter()
        .map(|r| RegionFeatures {
            d_goal: r[0],
            n_collision: r[1],
            n_outside: r[2],
            d_hat: norm(r[0], max[0]),
            n_c_hat: norm(r[1], max[1]),
            n_o_hat: norm(r[2], max[2]),
        })
        .collect()
}

pub fn outcome_features(outcomes: &[Outcome]) -> Vec<RegionFeatures> {
    let raw: Vec<[f64; 3]> = outcomes.iter().map(|o| [o.d_goal, o.n_collision as f64, o.n_outside as f64]).collect();
    region_features(&raw)
}

pub fn region_probability(f: &RegionFeatures, w: &EntropyWeights) -> f64 {
    let p = w.alpha * f.d_hat + w.beta * f.n_c_hat + w.gamma * f.n_o_hat;
    p.clamp(EPS_P, 1.0)
}

/// `-p ln p` for one region.
pub fn region_entropy(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("probability {p} outside (0, 1]")));
    }
    Ok(-p * p.ln())
}

/// Grid geometry plus everything the rules are allowed to look at.
#[derive(Debug, Clone)]
pub struct GuidanceState {
    rows: usize,
    cols: usize,
    points: Vec<Point2>,
    weights: EntropyWeights,
    initial: usize,
    history: Vec<usize>,
    evaluation: Option<EvaluationResult>,
    features: Vec<RegionFeatures>,
    p: Vec<f64>,
    h: Vec<f64>,
}

impl GuidanceState {
    pub fn new(grid: &GridSpec, initial: usize, weights: EntropyWeights) -> Result<Self> {
        let points = crate::task::build_grid(grid);
        Self::from_points(grid.rows, grid.cols, points, initial, weights)
    }

    pub fn for_task(spec: &TaskSpec, initial: usize, weights: EntropyWeights) -> Result<Self> {
        Self::new(&spec.grid, initial, weights)
    }

    /// `points` are row-major over a `rows x cols` grid.
    pub fn from_points(
        rows: usize,
        cols: usize,
        points: Vec<Point2>,
        initial: usize,
        weights: EntropyWeights,
    ) -> Result<Self> {
        if rows * cols != points.len() || points.is_empty() {
            return Err(Error::invalid(format!("{} points do not form a {rows}x{cols} grid", points.len())));
        }
        if initial >= points.len() {
            return Err(Error::IndexOutOfRange { index: initial, len: points.len() });
        }
        Ok(GuidanceState {
            rows,
            cols,
            points,
            weights,
            initial,
            history: Vec::new(),
            evaluation: None,
            features: Vec::new(),
            p: Vec::new(),
            h: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn weights(&self) -> &EntropyWeights {
        &self.weights
    }

    pub fn history(&self) -> &[usize] {
        &self.history
    }

    pub fn in_history(&self, i: usize) -> bool {
        self.history.contains(&i)
    }

    pub fn evaluation(&self) -> Option<&EvaluationResult> {
        self.evaluation.as_ref()
    }

    pub fn features(&self) -> &[RegionFeatures] {
        &self.features
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn entropies(&self) -> &[f64] {
        &self.h
    }

    /// Sum of the per-region entropies; a diagnostic only.
    pub fn total_entropy(&self) -> f64 {
        self.h.iter().sum()
    }

    pub fn record_demo(&mut self, i: usize) -> Result<()> {
        if i >= self.points.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.points.len() });
        }
        if self.in_history(i) {
            return Err(Error::invalid(format!("grid point {i} already demonstrated")));
        }
        self.history.push(i);
        Ok(())
    }

    pub fn set_evaluation(&mut self, eval: EvaluationResult) -> Result<()> {
        if eval.outcomes.len() != self.points.len() {
            return Err(Error::DimensionMismatch { expected: self.points.len(), actual: eval.outcomes.len() });
        }
        self.features = outcome_features(&eval.outcomes);
        self.p = self.features.iter().map(|f| region_probability(f, &self.weights)).collect();
        self.h = self.p.iter().map(|&p| region_entropy(p)).collect::<Result<_>>()?;
        self.evaluation = Some(eval);
        Ok(())
    }

    /// Forget history and evaluation, keeping grid, weights and initial point.
    pub fn reset(&mut self) {
        self.history.clear();
        self.evaluation = None;
        self.features.clear();
        self.p.clear();
        self.h.clear();
    }

    pub fn succeeded(&self, i: usize) -> bool {
        self.evaluation.as_ref().is_some_and(|e| e.outcomes[i].success)
    }

    pub(crate) fn row_col(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }

    /// Existing 8-neighbours of a grid index.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let (r, c) = self.row_col(i);
        let mut out = Vec::with_capacity(8);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < self.rows && (cc as usize) < self.cols {
                    out.push(rr as usize * self.cols + cc as usize);
                }
            }
        }
        out
    }

    fn require_evaluation(&self) -> Result<&EvaluationResult> {
        self.evaluation.as_ref().ok_or(Error::Unfitted)
    }

    fn all_demonstrated(&self) -> bool {
        self.history.len() >= self.points.len()
    }
}

pub fn is_done(state: &GuidanceState, criteria: &SuccessCriteria) -> bool {
    state.evaluation().is_some_and(|e| e.coverage >= criteria.coverage_threshold)
}

/// Index of the best non-history point under `score`; ties prefer failed
/// points, then the lowest index.
fn argmax_open(state: &GuidanceState, score: &[f64]) -> Result<usize> {
    let eval = state.require_evaluation()?;
    let mut best: Option<usize> = None;
    for i in 0..state.len() {
        if state.in_history(i) {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let better = score[i] > score[b]
                    || (score[i] == score[b] && !eval.outcomes[i].success && eval.outcomes[b].success);
                Some(if better { i } else { b })
            }
        };
    }
    best.ok_or(Error::Exhausted)
}

/// Highest `-p ln p` among points not yet demonstrated.
pub fn entropy_next(state: &GuidanceState) -> Result<usize> {
    if state.history.is_empty() {
        return Ok(state.initial);
    }
    argmax_open(state, &state.h)
}

/// Highest failure probability among points not yet demonstrated.
pub fn max_p_next(state: &GuidanceState) -> Result<usize> {
    if state.history.is_empty() {
        return Ok(state.initial);
    }
    argmax_open(state, &state.p)
}

pub trait GuidanceRule: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Next grid index to demonstrate. With an empty history this is the
    /// state's initial point.
    fn next(&self, state: &GuidanceState) -> Result<usize>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EntropyRule;

impl GuidanceRule for EntropyRule {
    fn name(&self) -> &'static str {
        "entropy"
    }

    fn next(&self, state: &GuidanceState) -> Result<usize> {
        entropy_next(state)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MaxPRule;

impl GuidanceRule for MaxPRule {
    fn name(&self) -> &'static str {
        "max-p"
    }

    fn next(&self, state: &GuidanceState) -> Result<usize> {
        max_p_next(state)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RuleRegistry {
    rules: BTreeMap<&'static str, Arc<dyn GuidanceRule>>,
}

impl RuleRegistry {
    pub fn new() -> Self {
        RuleRegistry::default()
    }

    /// `entropy`, `heuristic` and `max-p`.
    pub fn with_builtin() -> Self {
        let mut r = RuleRegistry::new();
        r.register(Arc::new(EntropyRule));
        r.register(Arc::new(HeuristicRule));
        r.register(Arc::new(MaxPRule));
        r
    }

    /// Replaces any rule already registered under the same name.
    pub fn register(&mut self, rule: Arc<dyn GuidanceRule>) {
        self.rules.insert(rule.name(), rule);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn GuidanceRule>> {
        self.rules.get(name).cloned().ok_or_else(|| Error::UnknownRule(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.rules.keys().copied()
    }
}
