//! Task-parameterised GMM over time-augmented planar samples `[t, x, y]`.
//!
//! Each demonstration carries one frame per task landmark (start, goal). Samples are
//! projected into every frame and one mixture per frame is fitted with a shared latent
//! assignment. For a new task the local components are mapped back to the global frame
//! and fused by a product of Gaussians before regressing positions on time.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{resample, uniform_time, Point2, Sample, Trajectory, SAMPLE_COUNT};
use crate::gmm::{
    em_fit_joint, gaussian_product, select_k_with, FitOptions, FitReport, JointInit, MixtureModel, Regressor,
    DEFAULT_K_MAX, DEFAULT_K_MIN,
};

/// Dimension of the augmented state `[t, x, y]`.
pub const STATE_DIM: usize = 3;

/// Coordinate frame: orientation `a` and origin `b` in the augmented space.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Frame {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = b.len();
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: a.nrows() });
        }
        let err = (a.transpose() * &a - DMatrix::identity(d, d)).amax();
        if err > 1e-9 {
            return Err(Error::invalid(format!("frame orientation is not orthonormal (err {err:e})")));
        }
        Ok(Frame { a, b })
    }

    /// Identity orientation with the spatial origin at `origin`; time is untouched.
    pub fn at(origin: Point2) -> Self {
        Frame { a: DMatrix::identity(STATE_DIM, STATE_DIM), b: DVector::from_vec(vec![0.0, origin.x, origin.y]) }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Global to local: `A^T (x - b)` (`A` is orthonormal).
    pub fn to_local(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(&(x - &self.b))
    }

    pub fn to_global(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }
}

/// Start frame and goal frame for a point-to-point task.
pub fn make_frames(start: Point2, goal: Point2) -> Result<Vec<Frame>> {
    if !start.is_finite() || !goal.is_finite() {
        return Err(Error::NonFinite("frame origin"));
    }
    if start == goal {
        return Err(Error::invalid("start and goal coincide"));
    }
    Ok(vec![Frame::at(start), Frame::at(goal)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoSource {
    Planner,
    Noisy,
    Human,
}

impl DemoSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            DemoSource::Planner => "planner",
            DemoSource::Noisy => "noisy",
            DemoSource::Human => "human",
        }
    }
}

impl std::fmt::Display for DemoSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DemoSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planner" => Ok(DemoSource::Planner),
            "noisy" => Ok(DemoSource::Noisy),
            "human" => Ok(DemoSource::Human),
            other => Err(Error::invalid(format!("unknown demonstration source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub trajectory: Trajectory,
    /// Frame 0 is the start frame, frame 1 the goal frame.
    pub frames: Vec<Frame>,
    pub source: DemoSource,
}

impl Demonstration {
    /// Demonstration from `start` to `goal` with the standard two frames.
    pub fn new(trajectory: Trajectory, start: Point2, goal: Point2, source: DemoSource) -> Result<Self> {
        Ok(Demonstration { trajectory, frames: make_frames(start, goal)?, source })
    }
}

fn augmented(s: &Sample) -> DVector<f64> {
    DVector::from_vec(vec![s.t, s.p.x, s.p.y])
}

/// Maps every augmented sample of `demo` into frame `j`.
pub fn project(demo: &Demonstration, j: usize) -> Result<Vec<DVector<f64>>> {
    let frame = demo.frames.get(j).ok_or(Error::IndexOutOfRange { index: j, len: demo.frames.len() })?;
    Ok(demo.trajectory.samples().iter().map(|s| frame.to_local(&augmented(s))).collect())
}

#[derive(Debug, Clone)]
pub struct TpGmm {
    local_models: Vec<MixtureModel>,
    fit_report: FitReport,
    /// (k, BIC) per candidate when k was selected.
    bic_scores: Vec<(usize, f64)>,
    k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpGmmOptions {
    /// Fixed component count; `None` selects it by BIC on frame-0 data.
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub em: FitOptions,
}

impl Default for TpGmmOptions {
    fn default() -> Self {
        TpGmmOptions { k: None, k_min: DEFAULT_K_MIN, k_max: DEFAULT_K_MAX, em: FitOptions::default() }
    }
}

impl TpGmm {
    pub fn fit(demos: &[Demonstration], k: Option<usize>) -> Result<Self> {
        Self::fit_with(demos, &TpGmmOptions { k, ..TpGmmOptions::default() })
    }

    pub fn fit_with(demos: &[Demonstration], opts: &TpGmmOptions) -> Result<Self> {
        let first = demos.first().ok_or_else(|| Error::invalid("no demonstrations to fit"))?;
        let n_frames = first.frames.len();
        if n_frames == 0 {
            return Err(Error::invalid("demonstrations must carry at least one frame"));
        }
        if let Some(d) = demos.iter().find(|d| d.frames.len() != n_frames) {
            return Err(Error::invalid(format!("inconsistent frame counts: {} vs {}", n_frames, d.frames.len())));
        }
        let resampled: Vec<Demonstration> = demos
            .iter()
            .map(|d| {
                let trajectory = if d.trajectory.len() == SAMPLE_COUNT {
                    d.trajectory.clone()
                } else {
                    resample(&d.trajectory, SAMPLE_COUNT)?
                };
                Ok(Demonstration { trajectory, ..d.clone() })
            })
            .collect::<Result<_>>()?;

        let mut pooled: Vec<Vec<DVector<f64>>> = vec![Vec::new(); n_frames];
        for d in &resampled {
            for (j, pool) in pooled.iter_mut().enumerate() {
                pool.extend(project(d, j)?);
            }
        }

        let (k, bic_scores) = match opts.k {
            Some(k) => (k, Vec::new()),
            None => {
                let hi = opts.k_max.min(pooled[0].len());
                let lo = opts.k_min.min(hi);
                let sel = select_k_with(&pooled[0], lo..=hi, &opts.em)?;
                (sel.best_k, sel.candidates.iter().map(|c| (c.k, c.report.bic)).collect())
            }
        };
        // One latent assignment shared by all frames keeps component c the
        // same piece of motion in every frame; equal time bins seed it.
        let labels: Vec<usize> = pooled[0].iter().map(|x| ((x[0] * k as f64).floor() as usize).min(k - 1)).collect();
        let em = FitOptions { seed: opts.em.seed.wrapping_add(k as u64), ..opts.em.clone() };
        let (local_models, fit_report) = em_fit_joint(&pooled, k, &em, JointInit::Labels(&labels))?;
        Ok(TpGmm { local_models, fit_report, bic_scores, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_frames(&self) -> usize {
        self.local_models.len()
    }

    pub fn local_models(&self) -> &[MixtureModel] {
        &self.local_models
    }

    pub fn fit_report(&self) -> &FitReport {
        &self.fit_report
    }

    pub fn bic_scores(&self) -> &[(usize, f64)] {
        &self.bic_scores
    }

    /// Global mixture for the task described by `query_frames`.
    pub fn instantiate(&self, query_frames: &[Frame]) -> Result<MixtureModel> {
        if query_frames.len() != self.n_frames() {
            return Err(Error::DimensionMismatch { expected: self.n_frames(), actual: query_frames.len() });
        }
        let mut comps = Vec::with_capacity(self.k);
        for c in 0..self.k {
            let factors: Vec<_> = self
                .local_models
                .iter()
                .zip(query_frames)
                .map(|(m, f)| m.components()[c].transform(f.a(), f.b()))
                .collect();
            comps.push(gaussian_product(&factors)?);
        }
        MixtureModel::new(self.local_models[0].weights().to_vec(), comps)
    }

    /// Conditional mean trajectory at `n_steps` uniform times.
    pub fn reproduce(&self, query_frames: &[Frame], n_steps: usize) -> Result<Trajectory> {
        if n_steps < 2 {
            return Err(Error::invalid(format!("n_steps must be >= 2, got {n_steps}")));
        }
        let global = self.instantiate(query_frames)?;
        let reg = Regressor::new(&global, &[0], &[1, 2])?;
        let samples = (0..n_steps)
            .map(|i| {
                let t = uniform_time(i, n_steps);
                let out = reg.predict(&DVector::from_vec(vec![t]))?;
                Ok(Sample { t, p: Point2::new(out.mean()[0], out.mean()[1]) })
            })
            .collect::<Result<_>>()?;
        Trajectory::new(samples)
    }
}
