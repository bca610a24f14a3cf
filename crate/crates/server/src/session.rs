//! One teaching session: drawn demonstrations, the model refitted on all of
//! them, and the guidance state derived from its evaluation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use guidedemo::geometry::{resample, Point2, Sample, Trajectory, SAMPLE_COUNT};
use guidedemo::guidance::{entropy_next, is_done, EntropyWeights, GuidanceState};
use guidedemo::task::{evaluate_model, Direction, EvaluationResult, TaskSpec};
use guidedemo::tpgmm::{DemoSource, Demonstration, TpGmm, TpGmmOptions};

use crate::error::ApiError;

/// Drawn samples may leave the workspace by this much (cm); the evaluation
/// still counts them as outside.
pub const CANVAS_MARGIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Heatmap,
    SinglePoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Untested,
    Success,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellView {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub status: CellStatus,
    pub demonstrated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub task: TaskSpec,
    pub mode: Mode,
    pub demos: usize,
    pub has_model: bool,
    pub coverage: f64,
    pub done: bool,
    pub started_at_ms: u64,
    pub updated_at_ms: u64,
    /// Wall-clock teaching time from session start (or reset) to the latest
    /// accepted demonstration.
    pub elapsed_s: f64,
    /// Demonstrated cells in submission order.
    pub history: Vec<usize>,
    pub cells: Vec<CellView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<usize>,
}

/// A validated drawing: resampled trajectory plus the grid cell it demonstrates.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub demo: Demonstration,
    pub cell: usize,
}

/// Checks raw `[t_ms, x, y]` pointer samples, renormalises time to [0, 1] and
/// resamples to the standard count. The demonstrated cell is the grid cell
/// nearest the zone end of the drawing.
pub fn ingest(raw: &[[f64; 3]], spec: &TaskSpec) -> Result<Ingested, ApiError> {
    let bad = |m: String| Err(ApiError::BadRequest(m));
    if raw.len() < 2 {
        return bad(format!("a demonstration needs at least 2 samples, got {}", raw.len()));
    }
    if raw.iter().flatten().any(|v| !v.is_finite()) {
        return bad("samples must be finite".into());
    }
    if raw.windows(2).any(|w| w[1][0] < w[0][0]) {
        return bad("sample timestamps must be non-decreasing".into());
    }
    let (t0, t1) = (raw[0][0], raw[raw.len() - 1][0]);
    if t1 <= t0 {
        return bad("samples must span a positive time interval".into());
    }
    let canvas = spec.workspace.inflate(CANVAS_MARGIN);
    if let Some(s) = raw.iter().find(|s| !canvas.contains(&Point2::new(s[1], s[2]))) {
        return bad(format!("sample ({}, {}) lies outside the canvas", s[1], s[2]));
    }
    // equal timestamps carry no timing information: keep the latest position
    let mut samples: Vec<Sample> = Vec::with_capacity(raw.len());
    for s in raw {
        let t = if s[0] == t1 { 1.0 } else { (s[0] - t0) / (t1 - t0) };
        let sample = Sample { t, p: Point2::new(s[1], s[2]) };
        match samples.last_mut() {
            Some(last) if last.t == t => *last = sample,
            _ => samples.push(sample),
        }
    }
    let traj = Trajectory::new(samples)
        .and_then(|t| resample(&t, SAMPLE_COUNT))
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let demo = Demonstration::new(traj.clone(), traj.first(), traj.last(), DemoSource::Human)
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let zone_end = match spec.direction {
        Direction::ZoneToPoint => traj.first(),
        Direction::PointToZone => traj.last(),
    };
    let cell = spec
        .grid_points()
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.distance(&zone_end).total_cmp(&b.1.distance(&zone_end)))
        .map(|(i, _)| i)
        .expect("task grids are non-empty");
    Ok(Ingested { demo, cell })
}

/// Refits on every demonstration and evaluates the whole grid. CPU bound.
pub fn refit(
    demos: &[Demonstration],
    spec: &TaskSpec,
    opts: &TpGmmOptions,
) -> guidedemo::Result<(TpGmm, EvaluationResult)> {
    let model = TpGmm::fit_with(demos, opts)?;
    let eval = evaluate_model(&model, spec)?;
    Ok((model, eval))
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    task: Arc<TaskSpec>,
    mode: Mode,
    guidance: GuidanceState,
    demos: Vec<Demonstration>,
    raw: Vec<Vec<[f64; 3]>>,
    model: Option<TpGmm>,
    started_at_ms: u64,
    updated_at_ms: u64,
}

impl Session {
    pub fn new(id: String, task: Arc<TaskSpec>, mode: Mode, now_ms: u64) -> guidedemo::Result<Self> {
        let guidance = GuidanceState::for_task(&task, 0, EntropyWeights::default())?;
        Ok(Session {
            id,
            task,
            mode,
            guidance,
            demos: Vec::new(),
            raw: Vec::new(),
            model: None,
            started_at_ms: now_ms,
            updated_at_ms: now_ms,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn task(&self) -> &Arc<TaskSpec> {
        &self.task
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    /// Raw samples of every accepted demonstration since the last reset.
    pub fn raw_demos(&self) -> &[Vec<[f64; 3]>] {
        &self.raw
    }

    /// Records an accepted demonstration together with the refit it produced.
    pub fn accept(
        &mut self,
        raw: Vec<[f64; 3]>,
        ingested: Ingested,
        model: TpGmm,
        eval: EvaluationResult,
        now_ms: u64,
    ) -> guidedemo::Result<()> {
        // redrawing an already demonstrated cell adds data but not history
        if !self.guidance.in_history(ingested.cell) {
            self.guidance.record_demo(ingested.cell)?;
        }
        self.guidance.set_evaluation(eval)?;
        self.demos.push(ingested.demo);
        self.raw.push(raw);
        self.model = Some(model);
        self.updated_at_ms = self.updated_at_ms.max(now_ms);
        Ok(())
    }

    pub fn reset(&mut self, now_ms: u64) {
        self.guidance.reset();
        self.demos.clear();
        self.raw.clear();
        self.model = None;
        self.started_at_ms = now_ms;
        self.updated_at_ms = now_ms;
    }

    pub fn view(&self) -> SessionView {
        let eval = self.guidance.evaluation();
        let heatmap = self.mode == Mode::Heatmap && eval.is_some();
        let cells = self
            .guidance
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| CellView {
                index: i,
                x: p.x,
                y: p.y,
                status: match eval {
                    None => CellStatus::Untested,
                    Some(_) if self.guidance.succeeded(i) => CellStatus::Success,
                    Some(_) => CellStatus::Fail,
                },
                demonstrated: self.guidance.in_history(i),
                entropy: heatmap.then(|| self.guidance.entropies()[i]),
            })
            .collect();
        let suggestion = match (self.mode, eval) {
            (Mode::SinglePoint, Some(_)) => entropy_next(&self.guidance).ok(),
            _ => None,
        };
        SessionView {
            id: self.id.clone(),
            task: (*self.task).clone(),
            mode: self.mode,
            demos: self.demos.len(),
            has_model: self.model.is_some(),
            coverage: eval.map_or(0.0, |e| e.coverage),
            done: eval.is_some() && is_done(&self.guidance, &self.task.criteria),
            started_at_ms: self.started_at_ms,
            updated_at_ms: self.updated_at_ms,
            elapsed_s: (self.updated_at_ms - self.started_at_ms) as f64 / 1000.0,
            history: self.guidance.history().to_vec(),
            cells,
            suggestion,
        }
    }
}
