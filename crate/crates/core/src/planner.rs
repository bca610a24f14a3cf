//! Demonstration synthesis: RRT-Connect with shortcut smoothing, a noise model that
//! degrades planner paths, and the persisted per-task demonstration bank.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{resample, ObstacleSet, Point2, Rect, Sample, Trajectory, SAMPLE_COUNT};
use crate::task::TaskSpec;
use crate::tpgmm::{DemoSource, Demonstration};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    /// Extend distance in cm.
    pub step: f64,
    pub max_iters: usize,
    /// Start/goal closer than this produce a two-sample trajectory.
    pub goal_tolerance: f64,
    pub seed: u64,
    pub shortcut_iters: usize,
    /// Obstacles are grown by this margin while planning.
    pub clearance: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams { step: 2.0, max_iters: 5000, goal_tolerance: 0.1, seed: 7, shortcut_iters: 200, clearance: 2.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub waypoint_jitter_sd: f64,
    pub endpoint_offset_sd: f64,
    /// 0 keeps the jitter maximally smooth, 1 leaves it white.
    pub smoothing_reduction: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams { waypoint_jitter_sd: 0.8, endpoint_offset_sd: 0.8, smoothing_reduction: 0.5, seed: 1007 }
    }
}

struct Collision<'a> {
    workspace: &'a Rect,
    obstacles: ObstacleSet,
}

impl Collision<'_> {
    fn point_free(&self, p: &Point2) -> bool {
        self.workspace.contains(p) && !self.obstacles.contains(p)
    }

    fn segment_free(&self, a: &Point2, b: &Point2) -> bool {
        // the workspace is convex, so endpoint containment covers the segment
        self.workspace.contains(a) && self.workspace.contains(b) && !self.obstacles.intersects_segment(a, b)
    }
}

struct Tree {
    nodes: Vec<Point2>,
    parent: Vec<usize>,
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

impl Tree {
    fn new(root: Point2) -> Self {
        Tree { nodes: vec![root], parent: vec![usize::MAX] }
    }

    fn nearest(&self, q: &Point2) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n.x - q.x).powi(2) + (n.y - q.y).powi(2);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn extend(&mut self, q: &Point2, step: f64, cc: &Collision) -> Extend {
        let near = self.nearest(q);
        let from = self.nodes[near];
        let d = from.distance(q);
        let (target, reached) = if d <= step { (*q, true) } else { (from.lerp(q, step / d), false) };
        if !cc.segment_free(&from, &target) {
            return Extend::Trapped;
        }
        self.nodes.push(target);
        self.parent.push(near);
        let id = self.nodes.len() - 1;
        if reached {
            Extend::Reached(id)
        } else {
            Extend::Advanced(id)
        }
    }

    fn connect(&mut self, q: &Point2, step: f64, cc: &Collision) -> Extend {
        loop {
            match self.extend(q, step, cc) {
                Extend::Advanced(_) => continue,
                other => return other,
            }
        }
    }

    /// Root-to-node path.
    fn path_to(&self, mut id: usize) -> Vec<Point2> {
        let mut out = Vec::new();
        while id != usize::MAX {
            out.push(self.nodes[id]);
            id = self.parent[id];
        }
        out.reverse();
        out
    }
}

/// Plans a collision-free polyline from `start` to `goal` and returns it shortcut,
/// resampled to the standard sample count with arc-length time.
pub fn plan(start: Point2, goal: Point2, spec: &TaskSpec, params: &PlannerParams) -> Result<Trajectory> {
    let path = plan_polyline(start, goal, spec, params)?;
    if path.len() == 2 && path[0].distance(&path[1]) <= params.goal_tolerance {
        return Trajectory::uniform(&path);
    }
    resample(&Trajectory::from_points(&path)?, SAMPLE_COUNT)
}

/// Raw shortcut polyline behind [`plan`].
pub fn plan_polyline(start: Point2, goal: Point2, spec: &TaskSpec, params: &PlannerParams) -> Result<Vec<Point2>> {
    if params.step.is_nan() || params.step <= 0.0 {
        return Err(Error::invalid("planner step must be positive"));
    }
    let cc = Collision { workspace: &spec.workspace, obstacles: spec.obstacles.inflated(params.clearance) };
    for p in [start, goal] {
        if !spec.workspace.contains(&p) || spec.obstacles.contains(&p) {
            return Err(Error::invalid(format!("endpoint ({}, {}) is not free", p.x, p.y)));
        }
    }
    if start.distance(&goal) <= params.goal_tolerance {
        return Ok(vec![start, goal]);
    }
    if cc.segment_free(&start, &goal) {
        return Ok(vec![start, goal]);
    }
    if !cc.point_free(&start) || !cc.point_free(&goal) {
        return Err(Error::invalid("endpoint lies within the obstacle clearance margin"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut a = Tree::new(start);
    let mut b = Tree::new(goal);
    let mut a_is_start = true;
    let (lo, hi) = (spec.workspace.min(), spec.workspace.max());
    let mut found = None;
    for _ in 0..params.max_iters {
        let q = Point2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
        let new = match a.extend(&q, params.step, &cc) {
            Extend::Trapped => None,
            Extend::Advanced(id) | Extend::Reached(id) => Some(id),
        };
        if let Some(id) = new {
            let target = a.nodes[id];
            if let Extend::Reached(bid) = b.connect(&target, params.step, &cc) {
                found = Some((id, bid));
                break;
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    let (ia, ib) = found.ok_or(Error::PlanningFailed { x: start.x, y: start.y, iterations: params.max_iters })?;
    let (start_tree, start_id, goal_tree, goal_id) = if a_is_start { (&a, ia, &b, ib) } else { (&b, ib, &a, ia) };
    let mut path = start_tree.path_to(start_id);
    let mut tail = goal_tree.path_to(goal_id);
    tail.reverse();
    // both halves contain the meeting point
    path.extend(tail.into_iter().skip(1));

    Ok(shortcut(&path, params.shortcut_iters, &mut rng, |p, q| cc.segment_free(p, q)))
}

/// Random pair shortcutting: replaces the stretch between two waypoints with a straight
/// segment whenever `free` accepts it.
pub fn shortcut<R: Rng, F: Fn(&Point2, &Point2) -> bool>(
    path: &[Point2],
    iters: usize,
    rng: &mut R,
    free: F,
) -> Vec<Point2> {
    let mut path = path.to_vec();
    for _ in 0..iters {
        if path.len() < 3 {
            break;
        }
        let i = rng.random_range(0..path.len() - 2);
        let j = rng.random_range(i + 2..path.len());
        if free(&path[i], &path[j]) {
            path.drain(i + 1..j);
        }
    }
    path
}

/// Adds smooth waypoint jitter and a growing endpoint offset. The start point stays
/// fixed; nothing is clamped, so the result may clip obstacles.
pub fn perturb(demo: &Trajectory, noise: &NoiseParams) -> Trajectory {
    let n = demo.len();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let window =
        ((1.0 - noise.smoothing_reduction.clamp(0.0, 1.0)) * MAX_SMOOTHING_WINDOW as f64).round().max(1.0) as usize;
    let jitter_x = smooth_noise(n, window, &mut rng, &normal);
    let jitter_y = smooth_noise(n, window, &mut rng, &normal);
    let off_x = noise.endpoint_offset_sd * normal.sample(&mut rng);
    let off_y = noise.endpoint_offset_sd * normal.sample(&mut rng);
    let samples = demo
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let env = (s.t / JITTER_RAMP).min(1.0);
            let dx = noise.waypoint_jitter_sd * env * jitter_x[i] + s.t * off_x;
            let dy = noise.waypoint_jitter_sd * env * jitter_y[i] + s.t * off_y;
            Sample { t: s.t, p: s.p.translate(dx, dy) }
        })
        .collect();
    Trajectory::new(samples).expect("times are unchanged")
}

const MAX_SMOOTHING_WINDOW: usize = 20;
/// Fraction of the trajectory over which jitter fades in from the start point.
const JITTER_RAMP: f64 = 0.1;

/// Unit-variance moving average of white noise.
fn smooth_noise(n: usize, window: usize, rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> Vec<f64> {
    let white: Vec<f64> = (0..n + window - 1).map(|_| normal.sample(rng)).collect();
    let scale = 1.0 / (window as f64).sqrt();
    (0..n).map(|i| white[i..i + window].iter().sum::<f64>() * scale).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankRecord {
    pub point_index: usize,
    pub source: DemoSource,
    pub samples: Trajectory,
}

/// Demonstrations keyed by grid point and source, persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoBank {
    pub task: String,
    pub planner: PlannerParams,
    pub noise: Option<NoiseParams>,
    pub records: Vec<BankRecord>,
}

impl DemoBank {
    pub fn get(&self, point_index: usize, source: DemoSource) -> Option<&Trajectory> {
        self.records.iter().find(|r| r.point_index == point_index && r.source == source).map(|r| &r.samples)
    }

    pub fn demonstration(&self, spec: &TaskSpec, point_index: usize, source: DemoSource) -> Result<Demonstration> {
        let traj = self
            .get(point_index, source)
            .ok_or_else(|| Error::MissingDemonstration(point_index, source.to_string()))?;
        let p = *spec
            .grid_points()
            .get(point_index)
            .ok_or(Error::IndexOutOfRange { index: point_index, len: spec.grid_len() })?;
        let (s, g) = spec.endpoints(p);
        Demonstration::new(traj.clone(), s, g, source)
    }

    /// Lookup table for repeated access during trials.
    pub fn index(&self, spec: &TaskSpec, source: DemoSource) -> Result<BTreeMap<usize, Demonstration>> {
        self.records
            .iter()
            .filter(|r| r.source == source)
            .map(|r| Ok((r.point_index, self.demonstration(spec, r.point_index, source)?)))
            .collect()
    }

    pub fn count(&self, source: DemoSource) -> usize {
        self.records.iter().filter(|r| r.source == source).count()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One planner demonstration per grid point (seed `params.seed + index`), plus a
/// perturbed copy per point when `noise` is given.
pub fn build_demo_bank(spec: &TaskSpec, params: &PlannerParams, noise: Option<&NoiseParams>) -> Result<DemoBank> {
    let planned: Vec<(usize, Trajectory)> = spec
        .grid_points()
        .into_par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (s, g) = spec.endpoints(p);
            let pp = PlannerParams { seed: params.seed.wrapping_add(i as u64), ..*params };
            plan(s, g, spec, &pp).map(|t| (i, t)).map_err(|e| Error::BankPointFailed { index: i, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<BankRecord> = planned
        .iter()
        .map(|(i, t)| BankRecord { point_index: *i, source: DemoSource::Planner, samples: t.clone() })
        .collect();
    if let Some(noise) = noise {
        records.extend(planned.iter().map(|(i, t)| {
            let np = NoiseParams { seed: noise.seed.wrapping_add(*i as u64), ..*noise };
            BankRecord { point_index: *i, source: DemoSource::Noisy, samples: perturb(t, &np) }
        }));
    }
    Ok(DemoBank { task: spec.name.clone(), planner: *params, noise: noise.copied(), records })
}
