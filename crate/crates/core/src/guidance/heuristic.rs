//! Locality baseline: (i) start anywhere, (ii) demonstrate next to the first
//! demonstration until it is surrounded by successes, (iii) demonstrate next
//! to successes where failures are densest.

use super::{GuidanceRule, GuidanceState};
use crate::error::{Error, Result};

/// Neighbourhood radius (cm) used by every phase.
pub const HEURISTIC_RADIUS: f64 = 4.0;

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicRule;

impl GuidanceRule for HeuristicRule {
    fn name(&self) -> &'static str {
        "heuristic"
    }

    fn next(&self, state: &GuidanceState) -> Result<usize> {
        heuristic_next(state)
    }
}

pub fn heuristic_next(state: &GuidanceState) -> Result<usize> {
    let Some(&first) = state.history().first() else {
        return Ok(state.initial());
    };
    state.require_evaluation()?;
    if state.all_demonstrated() {
        return Err(Error::Exhausted);
    }
    let pts = state.points();
    let open_failed: Vec<usize> = (0..state.len()).filter(|&i| !state.in_history(i) && !state.succeeded(i)).collect();

    let surrounded = state.neighbors(first).iter().all(|&n| state.succeeded(n));
    if !surrounded {
        let near_first = open_failed
            .iter()
            .copied()
            .filter(|&i| pts[i].distance(&pts[first]) <= HEURISTIC_RADIUS)
            .min_by(|&a, &b| pts[a].distance(&pts[first]).total_cmp(&pts[b].distance(&pts[first])).then(a.cmp(&b)));
        if let Some(i) = near_first {
            return Ok(i);
        }
    }

    let successes: Vec<usize> = (0..state.len()).filter(|&i| state.succeeded(i)).collect();
    let failed_count = |i: usize| {
        (0..state.len()).filter(|&j| !state.succeeded(j) && pts[j].distance(&pts[i]) <= HEURISTIC_RADIUS).count()
    };
    let mut best: Option<(usize, usize)> = None;
    for &i in &open_failed {
        if !successes.iter().any(|&s| pts[s].distance(&pts[i]) <= HEURISTIC_RADIUS) {
            continue;
        }
        let n = failed_count(i);
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((i, n));
        }
    }
    if let Some((i, _)) = best {
        return Ok(i);
    }

    // nothing next to a success: the open failure closest to one (or to the
    // first demonstration when nothing succeeds yet)
    let anchors = if successes.is_empty() { vec![first] } else { successes };
    let dist_to = |i: usize, set: &[usize]| set.iter().map(|&s| pts[s].distance(&pts[i])).fold(f64::INFINITY, f64::min);
    if let Some(i) = open_failed
        .iter()
        .copied()
        .min_by(|&a, &b| dist_to(a, &anchors).total_cmp(&dist_to(b, &anchors)).then(a.cmp(&b)))
    {
        return Ok(i);
    }

    // every remaining failure has been demonstrated already: move to the open
    // point closest to one of them
    let failed: Vec<usize> = (0..state.len()).filter(|&i| !state.succeeded(i)).collect();
    let anchors = if failed.is_empty() { vec![first] } else { failed };
    (0..state.len())
        .filter(|&i| !state.in_history(i))
        .min_by(|&a, &b| dist_to(a, &anchors).total_cmp(&dist_to(b, &anchors)).then(a.cmp(&b)))
        .ok_or(Error::Exhausted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use crate::guidance::tests::{eval, outcome};
    use crate::guidance::EntropyWeights;
    use crate::task::{GridSpec, Outcome};

    // 4 rows x 5 cols at the training pitch, so the 4 cm ball holds the
    // four axis neighbours but not the diagonals.
    fn state(initial: usize) -> GuidanceState {
        let grid = GridSpec { rows: 4, cols: 5, pitch: 3.25, origin: Point2::new(0.0, 0.0) };
        GuidanceState::new(&grid, initial, EntropyWeights::default()).unwrap()
    }

    /// `map` is drawn top row first; `#` success, `.` failure.
    fn outcomes(map: [&str; 4]) -> Vec<Outcome> {
        let mut out = vec![outcome(false, 1.0, 0, 0); 20];
        for (k, line) in map.iter().enumerate() {
            let r = 3 - k;
            for (c, ch) in line.chars().enumerate() {
                out[r * 5 + c] = if ch == '#' { outcome(true, 0.0, 0, 0) } else { outcome(false, 3.0, 1, 0) };
            }
        }
        out
    }

    fn brute_force_densest(s: &GuidanceState) -> usize {
        let pts = s.points();
        let ok: Vec<bool> = (0..20).map(|i| s.succeeded(i)).collect();
        let mut best = (usize::MAX, 0usize);
        for i in 0..20 {
            if ok[i] || s.in_history(i) {
                continue;
            }
            let near_success = (0..20).any(|j| ok[j] && (pts[i].x - pts[j].x).hypot(pts[i].y - pts[j].y) <= 4.0);
            if !near_success {
                continue;
            }
            let count = (0..20).filter(|&j| !ok[j] && (pts[i].x - pts[j].x).hypot(pts[i].y - pts[j].y) <= 4.0).count();
            if best.0 == usize::MAX || count > best.1 {
                best = (i, count);
            }
        }
        best.0
    }

    #[test]
    fn phase_one_returns_the_chosen_start() {
        assert_eq!(heuristic_next(&state(13)).unwrap(), 13);
    }

    #[test]
    fn phase_two_stays_next_to_first_demo() {
        // first demo at index 7 (row 1, col 2); its axis neighbours 2 and 8 fail
        let mut s = state(7);
        s.record_demo(7).unwrap();
        s.set_evaluation(eval(outcomes([".....", "#####", "##...", "##.##"]))).unwrap();
        // both one pitch away, lower index first
        assert_eq!(heuristic_next(&s).unwrap(), 2);
        s.record_demo(2).unwrap();
        assert_eq!(heuristic_next(&s).unwrap(), 8);
        s.record_demo(8).unwrap();
        // only the diagonal 13 still fails around 7 and it lies outside the
        // 4 cm ball, so the rule moves on. Failures in each candidate's ball:
        // 13 {13,18}, 15 {15,16}, 16 {15,16,17}, 17 {16,17,18}, 19 {18,19};
        // 18 touches no success.
        s.set_evaluation(eval(outcomes([".....", "###.#", "#####", "##.##"]))).unwrap();
        assert!(s.neighbors(7).iter().any(|&n| !s.succeeded(n)));
        let pick = heuristic_next(&s).unwrap();
        assert_eq!(pick, brute_force_densest(&s));
        assert_eq!(pick, 16);
    }

    #[test]
    fn phase_three_targets_densest_failures() {
        // first demo (index 6) surrounded; failures in the top-right corner.
        // Candidates next to a success: 13 {13,14,18}, 14 {13,14,19}, 17 {17,18}.
        let mut s = state(6);
        s.record_demo(6).unwrap();
        s.set_evaluation(eval(outcomes(["##...", "###..", "#####", "#####"]))).unwrap();
        assert!(s.neighbors(6).iter().all(|&n| s.succeeded(n)));
        let pick = heuristic_next(&s).unwrap();
        assert_eq!(pick, brute_force_densest(&s));
        assert_eq!(pick, 13);
    }

    #[test]
    fn fallback_when_no_failure_touches_a_success() {
        // the only success (6) has all its axis neighbours demonstrated, as
        // do the failing neighbours of the first demo (0)
        let mut s = state(0);
        for i in [0, 1, 5, 11, 7, 15] {
            s.record_demo(i).unwrap();
        }
        s.set_evaluation(eval(outcomes([".....", ".....", ".#...", "....."]))).unwrap();
        // nearest open failures to 6 are the diagonals 2, 10 and 12
        assert_eq!(heuristic_next(&s).unwrap(), 2);
    }

    #[test]
    fn requires_evaluation_after_first_demo() {
        let mut s = state(0);
        s.record_demo(0).unwrap();
        assert!(matches!(heuristic_next(&s), Err(Error::Unfitted)));
    }
}
