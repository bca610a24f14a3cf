//! Maze task definitions, the test grid, and trajectory/model success evaluation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    count_collisions, count_outside, endpoint_distance, resample, ObstacleSet, Point2, Rect, Trajectory, SAMPLE_COUNT,
};
use crate::tpgmm::{make_frames, Frame, TpGmm};

/// Which end of the task the test grid covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Grid is the start zone; every trajectory ends at the anchor point.
    ZoneToPoint,
    /// Every trajectory starts at the anchor point; the grid is the goal zone.
    PointToZone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Centre-to-centre spacing in cm.
    pub pitch: f64,
    /// Centre of the row-0, column-0 cell.
    pub origin: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessCriteria {
    pub goal_tolerance: f64,
    pub max_collision_samples: usize,
    pub max_outside_samples: usize,
    pub coverage_threshold: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        SuccessCriteria {
            goal_tolerance: 1.5,
            max_collision_samples: 0,
            max_outside_samples: 0,
            coverage_threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub direction: Direction,
    pub workspace: Rect,
    #[serde(default)]
    pub obstacles: ObstacleSet,
    /// Start zone (zone-to-point) or goal zone (point-to-zone).
    pub zone: Rect,
    /// Goal point (zone-to-point) or start point (point-to-zone).
    pub anchor: Point2,
    pub grid: GridSpec,
    #[serde(default)]
    pub criteria: SuccessCriteria,
}

impl TaskSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: TaskSpec = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read task file {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.obstacles.validate_against(&self.workspace)?;
        if !self.workspace.contains_rect(&self.zone) {
            return Err(Error::Config("zone must lie inside the workspace".into()));
        }
        if !self.workspace.contains(&self.anchor) || self.obstacles.contains(&self.anchor) {
            return Err(Error::Config("anchor must be inside the workspace and clear of obstacles".into()));
        }
        let c = &self.criteria;
        if c.goal_tolerance.is_nan() || c.goal_tolerance <= 0.0 {
            return Err(Error::Config("goal_tolerance must be positive".into()));
        }
        if !(c.coverage_threshold > 0.0 && c.coverage_threshold <= 1.0) {
            return Err(Error::Config("coverage_threshold must be in (0, 1]".into()));
        }
        let pts = build_grid_in(&self.grid, &self.zone)?;
        if let Some(p) = pts.iter().find(|p| self.obstacles.contains(p)) {
            return Err(Error::Config(format!("grid point ({}, {}) lies in an obstacle", p.x, p.y)));
        }
        Ok(())
    }

    pub fn grid_points(&self) -> Vec<Point2> {
        build_grid(&self.grid)
    }

    pub fn grid_len(&self) -> usize {
        self.grid.rows * self.grid.cols
    }

    /// Start and goal of the trajectory associated with grid point `p`.
    pub fn endpoints(&self, p: Point2) -> (Point2, Point2) {
        match self.direction {
            Direction::ZoneToPoint => (p, self.anchor),
            Direction::PointToZone => (self.anchor, p),
        }
    }

    pub fn query_frames(&self, p: Point2) -> Result<Vec<Frame>> {
        let (s, g) = self.endpoints(p);
        make_frames(s, g)
    }
}

fn grid_point(spec: &GridSpec, i: usize) -> Point2 {
    let (row, col) = (i / spec.cols, i % spec.cols);
    spec.origin.translate(col as f64 * spec.pitch, row as f64 * spec.pitch)
}

/// Row-major cell centres.
pub fn build_grid(spec: &GridSpec) -> Vec<Point2> {
    (0..spec.rows * spec.cols).map(|i| grid_point(spec, i)).collect()
}

/// As [`build_grid`], failing if any centre falls outside `region`.
pub fn build_grid_in(spec: &GridSpec, region: &Rect) -> Result<Vec<Point2>> {
    if spec.rows == 0 || spec.cols == 0 {
        return Err(Error::Config("grid needs at least one row and one column".into()));
    }
    if spec.pitch.is_nan() || spec.pitch <= 0.0 || !spec.origin.is_finite() {
        return Err(Error::Config("grid pitch must be positive and origin finite".into()));
    }
    let pts = build_grid(spec);
    if let Some(p) = pts.iter().find(|p| !region.contains(p)) {
        return Err(Error::Config(format!("grid point ({}, {}) escapes its region", p.x, p.y)));
    }
    Ok(pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    pub d_goal: f64,
    pub n_collision: usize,
    pub n_outside: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub outcomes: Vec<Outcome>,
    pub coverage: f64,
}

impl EvaluationResult {
    pub fn from_outcomes(outcomes: Vec<Outcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::invalid("evaluation over an empty grid"));
        }
        let successes = outcomes.iter().filter(|o| o.success).count();
        let coverage = successes as f64 / outcomes.len() as f64;
        Ok(EvaluationResult { outcomes, coverage })
    }

    pub fn successes(&self) -> usize {
        self.outcomes.iter().filter(|o| o.success).count()
    }
}

/// Scores one trajectory against the success criteria after resampling it to the
/// standard sample count.
pub fn evaluate_trajectory(traj: &Trajectory, spec: &TaskSpec, goal: Point2) -> Outcome {
    let resampled;
    let t = if traj.len() == SAMPLE_COUNT {
        traj
    } else {
        match resample(traj, SAMPLE_COUNT) {
            Ok(r) => {
                resampled = r;
                &resampled
            }
            Err(_) => traj,
        }
    };
    let d_goal = endpoint_distance(t, &goal);
    let n_collision = count_collisions(t, &spec.obstacles);
    let n_outside = count_outside(t, &spec.workspace);
    let c = &spec.criteria;
    let success =
        d_goal <= c.goal_tolerance && n_collision <= c.max_collision_samples && n_outside <= c.max_outside_samples;
    Outcome { success, d_goal, n_collision, n_outside }
}

/// Reproduces the model from every grid point and scores the results.
pub fn evaluate_model(model: &TpGmm, spec: &TaskSpec) -> Result<EvaluationResult> {
    let outcomes = spec
        .grid_points()
        .into_par_iter()
        .map(|p| {
            let frames = spec.query_frames(p)?;
            let traj = model.reproduce(&frames, SAMPLE_COUNT)?;
            let (_, goal) = spec.endpoints(p);
            Ok(evaluate_trajectory(&traj, spec, goal))
        })
        .collect::<Result<Vec<_>>>()?;
    EvaluationResult::from_outcomes(outcomes)
}
