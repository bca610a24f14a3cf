//! Planar primitives shared by the planner, the task evaluator and the learner.
//!
//! All coordinates are centimetres in the workspace frame, origin at the lower-left
//! corner of the workspace rectangle. Containment tests treat boundaries as inside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample count every trajectory is brought to before features are counted.
pub const SAMPLE_COUNT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(&self, other: &Point2, s: f64) -> Point2 {
        Point2::new(self.x + s * (other.x - self.x), self.y + s * (other.y - self.y))
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Point2 {
        Point2::new(self.x + dx, self.y + dy)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RectRepr", into = "RectRepr")]
pub struct Rect {
    min: Point2,
    max: Point2,
}

#[derive(Serialize, Deserialize)]
struct RectRepr {
    min: Point2,
    max: Point2,
}

impl TryFrom<RectRepr> for Rect {
    type Error = Error;

    fn try_from(r: RectRepr) -> Result<Self> {
        Rect::new(r.min, r.max)
    }
}

impl From<Rect> for RectRepr {
    fn from(r: Rect) -> Self {
        RectRepr { min: r.min, max: r.max }
    }
}

impl Rect {
    pub fn new(min: Point2, max: Point2) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() {
            return Err(Error::NonFinite("rectangle corner"));
        }
        if !(min.x < max.x && min.y < max.y) {
            return Err(Error::invalid(format!(
                "rectangle min ({}, {}) must be strictly below max ({}, {})",
                min.x, min.y, max.x, max.y
            )));
        }
        Ok(Rect { min, max })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Rect::new(Point2::new(x0, y0), Point2::new(x1, y1))
    }

    pub fn min(&self) -> Point2 {
        self.min
    }

    pub fn max(&self) -> Point2 {
        self.max
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: &Point2) -> bool {
        point_in_rect(p, self)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.min.x <= other.max.x && other.min.x <= self.max.x && self.min.y <= other.max.y && other.min.y <= self.max.y
    }

    /// Grows the rectangle by `margin` on every side.
    pub fn inflate(&self, margin: f64) -> Rect {
        Rect { min: self.min.translate(-margin, -margin), max: self.max.translate(margin, margin) }
    }

    /// Distance from `p` to the rectangle, zero when inside.
    pub fn distance_to(&self, p: &Point2) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        dx.hypot(dy)
    }

    /// Slab test for the closed segment `a`–`b` against the closed rectangle.
    pub fn intersects_segment(&self, a: &Point2, b: &Point2) -> bool {
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        let d = [b.x - a.x, b.y - a.y];
        let o = [a.x, a.y];
        let lo = [self.min.x, self.min.y];
        let hi = [self.max.x, self.max.y];
        for axis in 0..2 {
            if d[axis] == 0.0 {
                if o[axis] < lo[axis] || o[axis] > hi[axis] {
                    return false;
                }
            } else {
                let inv = 1.0 / d[axis];
                let mut ta = (lo[axis] - o[axis]) * inv;
                let mut tb = (hi[axis] - o[axis]) * inv;
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObstacleSet {
    pub obstacles: Vec<Rect>,
}

impl ObstacleSet {
    pub fn new(obstacles: Vec<Rect>) -> Self {
        ObstacleSet { obstacles }
    }

    /// Fails if any obstacle lies entirely outside `workspace`.
    pub fn validate_against(&self, workspace: &Rect) -> Result<()> {
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.intersects(workspace) {
                return Err(Error::invalid(format!("obstacle {i} does not intersect the workspace")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point2) -> bool {
        self.obstacles.iter().any(|o| o.contains(p))
    }

    pub fn intersects_segment(&self, a: &Point2, b: &Point2) -> bool {
        self.obstacles.iter().any(|o| o.intersects_segment(a, b))
    }

    pub fn inflated(&self, margin: f64) -> ObstacleSet {
        ObstacleSet::new(self.obstacles.iter().map(|o| o.inflate(margin)).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }
}

/// One trajectory sample at normalised time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub p: Point2,
}

impl Serialize for Sample {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.t, self.p.x, self.p.y].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Sample {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [t, x, y] = <[f64; 3]>::deserialize(d)?;
        Ok(Sample { t, p: Point2::new(x, y) })
    }
}

/// Time-stamped planar path with normalised time: at least two samples, `t` strictly
/// increasing from exactly 0 to exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Sample>", into = "Vec<Sample>")]
pub struct Trajectory {
    samples: Vec<Sample>,
}

impl TryFrom<Vec<Sample>> for Trajectory {
    type Error = Error;

    fn try_from(samples: Vec<Sample>) -> Result<Self> {
        Trajectory::new(samples)
    }
}

impl From<Trajectory> for Vec<Sample> {
    fn from(t: Trajectory) -> Self {
        t.samples
    }
}

impl Trajectory {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid(format!("trajectory needs at least 2 samples, got {}", samples.len())));
        }
        if samples.iter().any(|s| !s.t.is_finite() || !s.p.is_finite()) {
            return Err(Error::NonFinite("trajectory sample"));
        }
        if samples[0].t != 0.0 || samples[samples.len() - 1].t != 1.0 {
            return Err(Error::invalid("trajectory time must start at 0 and end at 1"));
        }
        if samples.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::invalid("trajectory time must be strictly increasing"));
        }
        Ok(Trajectory { samples })
    }

    /// Polyline with times proportional to cumulative arc length.
    pub fn from_points(points: &[Point2]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!("trajectory needs at least 2 points, got {}", points.len())));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("trajectory point"));
        }
        // Repeated consecutive points would produce equal times.
        let mut pts: Vec<Point2> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().is_none_or(|q| q != p) {
                pts.push(*p);
            }
        }
        if pts.len() < 2 {
            return Err(Error::ZeroLengthPath);
        }
        let mut cum = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in pts.windows(2) {
            acc += w[0].distance(&w[1]);
            cum.push(acc);
        }
        let n = pts.len();
        let samples = pts
            .iter()
            .zip(&cum)
            .enumerate()
            .map(|(i, (p, c))| {
                let t = if i == n - 1 { 1.0 } else { c / acc };
                Sample { t, p: *p }
            })
            .collect();
        Trajectory::new(samples)
    }

    /// Points with uniform normalised times `i / (n - 1)`.
    pub fn uniform(points: &[Point2]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("trajectory needs at least 2 points"));
        }
        let n = points.len();
        Trajectory::new(points.iter().enumerate().map(|(i, p)| Sample { t: uniform_time(i, n), p: *p }).collect())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> impl Iterator<Item = Point2> + '_ {
        self.samples.iter().map(|s| s.p)
    }

    pub fn first(&self) -> Point2 {
        self.samples[0].p
    }

    pub fn last(&self) -> Point2 {
        self.samples[self.samples.len() - 1].p
    }

    pub fn path_length(&self) -> f64 {
        self.samples.windows(2).map(|w| w[0].p.distance(&w[1].p)).sum()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Trajectory {
        Trajectory { samples: self.samples.iter().map(|s| Sample { t: s.t, p: s.p.translate(dx, dy) }).collect() }
    }

    /// Position at normalised time `t` by linear interpolation.
    pub fn at(&self, t: f64) -> Point2 {
        let s = &self.samples;
        if t <= 0.0 {
            return s[0].p;
        }
        if t >= 1.0 {
            return s[s.len() - 1].p;
        }
        // first index with sample time > t
        let j = s.partition_point(|x| x.t <= t);
        let a = &s[j - 1];
        let b = &s[j];
        let frac = (t - a.t) / (b.t - a.t);
        a.p.lerp(&b.p, frac)
    }
}

pub fn uniform_time(i: usize, n: usize) -> f64 {
    if i + 1 == n {
        1.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

pub fn point_in_rect(p: &Point2, r: &Rect) -> bool {
    r.min.x <= p.x && p.x <= r.max.x && r.min.y <= p.y && p.y <= r.max.y
}

pub fn count_collisions(traj: &Trajectory, obs: &ObstacleSet) -> usize {
    traj.points().filter(|p| obs.contains(p)).count()
}

pub fn count_outside(traj: &Trajectory, workspace: &Rect) -> usize {
    traj.points().filter(|p| !point_in_rect(p, workspace)).count()
}

pub fn endpoint_distance(traj: &Trajectory, goal: &Point2) -> f64 {
    traj.last().distance(goal)
}

/// Resamples to `n` samples at uniform times by linear interpolation in time.
pub fn resample(traj: &Trajectory, n: usize) -> Result<Trajectory> {
    if n < 2 {
        return Err(Error::invalid(format!("resample count must be at least 2, got {n}")));
    }
    let first = traj.first();
    if traj.points().all(|p| p == first) {
        return Err(Error::ZeroLengthPath);
    }
    let samples = (0..n)
        .map(|i| {
            let t = uniform_time(i, n);
            Sample { t, p: traj.at(t) }
        })
        .collect();
    Trajectory::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws() -> Rect {
        Rect::from_corners(0.0, 0.0, 45.0, 72.0).unwrap()
    }

    fn line(n: usize, a: Point2, b: Point2) -> Trajectory {
        let pts: Vec<_> = (0..n).map(|i| a.lerp(&b, uniform_time(i, n))).collect();
        Trajectory::uniform(&pts).unwrap()
    }

    #[test]
    fn point_in_rect_examples() {
        assert!(point_in_rect(&Point2::new(0.0, 0.0), &ws()));
        assert!(!point_in_rect(&Point2::new(46.0, 10.0), &ws()));
        assert!(point_in_rect(&Point2::new(22.5, 36.0), &ws()));
    }

    #[test]
    fn rect_rejects_inverted_corners() {
        assert!(Rect::from_corners(1.0, 0.0, 1.0, 5.0).is_err());
        assert!(Rect::from_corners(0.0, 5.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn collision_counts() {
        let obs = ObstacleSet::new(vec![Rect::from_corners(20.0, 30.0, 25.0, 40.0).unwrap()]);
        let clear = line(100, Point2::new(5.0, 0.0), Point2::new(5.0, 70.0));
        assert_eq!(count_collisions(&clear, &obs), 0);

        // samples at integer x; the obstacle spans x in [20, 22]
        let obs3 = ObstacleSet::new(vec![Rect::from_corners(20.0, 30.0, 22.0, 40.0).unwrap()]);
        let pts: Vec<_> = (0..100).map(|i| Point2::new(i as f64, 35.0)).collect();
        let traj = Trajectory::uniform(&pts).unwrap();
        let brute = pts
            .iter()
            .filter(|p| {
                obs3.obstacles
                    .iter()
                    .any(|o| p.x >= o.min().x && p.x <= o.max().x && p.y >= o.min().y && p.y <= o.max().y)
            })
            .count();
        assert_eq!(brute, 3);
        assert_eq!(count_collisions(&traj, &obs3), 3);

        let all = ObstacleSet::new(vec![ws()]);
        assert_eq!(count_collisions(&clear, &all), 100);
    }

    #[test]
    fn outside_counts() {
        let inside = line(100, Point2::new(5.0, 1.0), Point2::new(40.0, 70.0));
        assert_eq!(count_outside(&inside, &ws()), 0);
        let shifted = inside.translated(100.0, 0.0);
        assert_eq!(count_outside(&shifted, &ws()), 100);

        // y = 0.75 i - 5: samples 0..=6 fall below the workspace
        let pts: Vec<_> = (0..100).map(|i| Point2::new(20.0, 0.75 * i as f64 - 5.0)).collect();
        let traj = Trajectory::uniform(&pts).unwrap();
        let brute = pts.iter().filter(|p| p.x < 0.0 || p.x > 45.0 || p.y < 0.0 || p.y > 72.0).count();
        assert_eq!(brute, 7);
        assert_eq!(count_outside(&traj, &ws()), 7);
    }

    #[test]
    fn endpoint_distance_examples() {
        let t = line(10, Point2::new(1.0, 1.0), Point2::new(3.0, 4.0));
        assert_eq!(endpoint_distance(&t, &Point2::new(3.0, 4.0)), 0.0);
        assert_eq!(endpoint_distance(&t, &Point2::new(0.0, 0.0)), 5.0);
        let goal = Point2::new(22.5, 64.0);
        let expected = ((3.0f64 - 22.5).powi(2) + (4.0f64 - 64.0).powi(2)).sqrt();
        assert!((endpoint_distance(&t, &goal) - expected).abs() < 1e-12);
    }

    #[test]
    fn resample_straight_segment() {
        let t = Trajectory::from_points(&[Point2::new(0.0, 0.0), Point2::new(8.0, 0.0)]).unwrap();
        let r = resample(&t, 5).unwrap();
        let xs: Vec<f64> = r.points().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        assert!(r.points().all(|p| p.y == 0.0));
    }

    #[test]
    fn resample_same_count_is_identity() {
        let t = line(17, Point2::new(2.0, 3.0), Point2::new(30.0, 50.0));
        assert_eq!(resample(&t, 17).unwrap(), t);
    }

    #[test]
    fn resample_preserves_corner() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(10.0, 0.0), Point2::new(10.0, 30.0)];
        let t = Trajectory::from_points(&pts).unwrap();
        let r = resample(&t, 101).unwrap();
        // brute-force dense interpolation of the same polyline
        let dense = resample(&t, 100_001).unwrap();
        let corner = pts[1];
        let dense_best = dense.points().map(|p| p.distance(&corner)).fold(f64::INFINITY, f64::min);
        assert!(dense_best < 1e-3);
        let spacing = t.path_length() / 100.0;
        let best = r.points().map(|p| p.distance(&corner)).fold(f64::INFINITY, f64::min);
        assert!(best <= spacing, "corner off by {best}, spacing {spacing}");
        assert_eq!(r.first(), pts[0]);
        assert_eq!(r.last(), pts[2]);
    }

    #[test]
    fn resample_rejects_degenerate() {
        let p = Point2::new(1.0, 1.0);
        let t = Trajectory::uniform(&[p, p, p]).unwrap();
        assert!(matches!(resample(&t, 10), Err(Error::ZeroLengthPath)));
        assert!(Trajectory::from_points(&[p, p]).is_err());
        let ok = line(3, Point2::new(0.0, 0.0), Point2::new(1.0, 1.0));
        assert!(resample(&ok, 1).is_err());
    }

    #[test]
    fn trajectory_validation() {
        let p = Point2::new(0.0, 0.0);
        assert!(Trajectory::new(vec![Sample { t: 0.0, p }]).is_err());
        assert!(Trajectory::new(vec![Sample { t: 0.0, p }, Sample { t: 0.5, p }]).is_err());
        assert!(Trajectory::new(vec![Sample { t: 0.1, p }, Sample { t: 1.0, p }]).is_err());
        assert!(Trajectory::new(vec![
            Sample { t: 0.0, p },
            Sample { t: 0.5, p },
            Sample { t: 0.5, p },
            Sample { t: 1.0, p }
        ])
        .is_err());
    }

    #[test]
    fn segment_slab_test() {
        let r = Rect::from_corners(10.0, 10.0, 20.0, 20.0).unwrap();
        assert!(r.intersects_segment(&Point2::new(0.0, 15.0), &Point2::new(30.0, 15.0)));
        assert!(!r.intersects_segment(&Point2::new(0.0, 25.0), &Point2::new(30.0, 25.0)));
        assert!(r.intersects_segment(&Point2::new(0.0, 0.0), &Point2::new(10.0, 10.0)));
        assert!(!r.intersects_segment(&Point2::new(0.0, 0.0), &Point2::new(9.0, 30.0)));
        assert!(r.intersects_segment(&Point2::new(15.0, 0.0), &Point2::new(15.0, 12.0)));
        assert!(r.intersects_segment(&Point2::new(12.0, 12.0), &Point2::new(13.0, 13.0)));
    }

    #[test]
    fn serde_shapes() {
        let t = line(3, Point2::new(0.0, 0.0), Point2::new(2.0, 2.0));
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, "[[0.0,0.0,0.0],[0.5,1.0,1.0],[1.0,2.0,2.0]]");
        let back: Trajectory = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<Trajectory>("[[0.0,0,0]]").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_traj() -> impl Strategy<Value = Trajectory> {
            prop::collection::vec((-20.0..80.0f64, -20.0..90.0f64), 2..40).prop_filter_map("non-degenerate", |v| {
                let pts: Vec<_> = v.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
                Trajectory::from_points(&pts).ok()
            })
        }

        proptest! {
            #[test]
            fn collisions_partition_samples(t in arb_traj(), x0 in 0.0..40.0f64, y0 in 0.0..60.0f64) {
                let obs = ObstacleSet::new(vec![Rect::from_corners(x0, y0, x0 + 5.0, y0 + 10.0).unwrap()]);
                let hits = count_collisions(&t, &obs);
                let misses = t.points().filter(|p| !obs.contains(p)).count();
                prop_assert_eq!(hits + misses, t.len());
            }

            #[test]
            fn resample_idempotent(t in arb_traj(), n in 2usize..150) {
                let once = resample(&t, n).unwrap();
                let twice = resample(&once, n).unwrap();
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn endpoint_distance_translation_invariant(t in arb_traj(), gx in 0.0..45.0f64, gy in 0.0..72.0f64,
                                                       dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
                let g = Point2::new(gx, gy);
                let d0 = endpoint_distance(&t, &g);
                let d1 = endpoint_distance(&t.translated(dx, dy), &g.translate(dx, dy));
                prop_assert!(d0 >= 0.0);
                prop_assert!((d0 - d1).abs() < 1e-9);
                prop_assert_eq!(endpoint_distance(&t, &t.last()), 0.0);
            }
        }
    }
}
