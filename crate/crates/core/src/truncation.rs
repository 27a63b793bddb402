//! Exact truncation region: solve each quadratic inequality in closed form
//! and intersect the resulting interval unions.

use crate::events::QuadIneq;
use thiserror::Error;

/// Absolute tolerance for coefficient degeneracy and interval merging.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Error, Debug)]
pub enum TruncationError {
    #[error("observed statistic {z_obs} lies outside the computed region (event-generation bug)")]
    ObservedOutsideRegion { z_obs: f64 },
}

/// Sorted disjoint closed intervals of the real line; endpoints may be
/// infinite. An empty list is the empty set.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalUnion {
    intervals: Vec<(f64, f64)>,
}

impl IntervalUnion {
    pub fn empty() -> Self {
        Self { intervals: vec![] }
    }

    pub fn full() -> Self {
        Self {
            intervals: vec![(f64::NEG_INFINITY, f64::INFINITY)],
        }
    }

    /// From raw intervals; sorts, drops empties, merges overlaps and gaps
    /// below `tol`.
    pub fn from_intervals(mut intervals: Vec<(f64, f64)>, tol: f64) -> Self {
        intervals.retain(|&(lo, hi)| lo < hi || (hi - lo).abs() <= tol && lo.is_finite());
        intervals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
        for (lo, hi) in intervals {
            match merged.last_mut() {
                Some(last) if lo <= last.1 + tol => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        Self { intervals: merged }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, z: f64, tol: f64) -> bool {
        self.intervals
            .iter()
            .any(|&(lo, hi)| z >= lo - tol && z <= hi + tol)
    }

    /// Pairwise set intersection.
    pub fn intersect(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.intervals.len() && j < other.intervals.len() {
            let (a_lo, a_hi) = self.intervals[i];
            let (b_lo, b_hi) = other.intervals[j];
            let lo = a_lo.max(b_lo);
            let hi = a_hi.min(b_hi);
            if lo <= hi {
                out.push((lo, hi));
            }
            if a_hi < b_hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { intervals: out }
    }

    /// Total Lebesgue measure (may be infinite).
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|&(lo, hi)| hi - lo).sum()
    }

    /// The maximal interval containing `z_obs`.
    pub fn single_interval(&self, z_obs: f64) -> Result<Self, TruncationError> {
        for &(lo, hi) in &self.intervals {
            if z_obs >= lo - DEFAULT_TOL && z_obs <= hi + DEFAULT_TOL {
                return Ok(Self {
                    intervals: vec![(lo, hi)],
                });
            }
        }
        Err(TruncationError::ObservedOutsideRegion { z_obs })
    }
}

/// Solution set of alpha z^2 + beta z + gamma <= 0.
///
/// Roots use the cancellation-free pairing q = -(beta + sign(beta) sqrt(disc))/2,
/// giving roots q/alpha and gamma/q.
pub fn solve_quad(q: &QuadIneq, tol: f64) -> IntervalUnion {
    let (alpha, beta, gamma) = (q.alpha, q.beta, q.gamma);
    if alpha.abs() <= tol {
        if beta.abs() <= tol {
            return if gamma <= tol {
                IntervalUnion::full()
            } else {
                IntervalUnion::empty()
            };
        }
        let root = -gamma / beta;
        return if beta > 0.0 {
            IntervalUnion::from_intervals(vec![(f64::NEG_INFINITY, root)], tol)
        } else {
            IntervalUnion::from_intervals(vec![(root, f64::INFINITY)], tol)
        };
    }
    let disc = beta * beta - 4.0 * alpha * gamma;
    if disc < 0.0 {
        return if alpha > 0.0 {
            IntervalUnion::empty()
        } else {
            IntervalUnion::full()
        };
    }
    let sq = disc.sqrt();
    let qq = -0.5 * (beta + beta.signum() * sq);
    let (mut r1, mut r2) = if qq == 0.0 {
        (0.0, 0.0)
    } else {
        (qq / alpha, gamma / qq)
    };
    if r1 > r2 {
        std::mem::swap(&mut r1, &mut r2);
    }
    if alpha > 0.0 {
        IntervalUnion::from_intervals(vec![(r1, r2)], tol)
    } else {
        IntervalUnion::from_intervals(
            vec![(f64::NEG_INFINITY, r1), (r2, f64::INFINITY)],
            tol,
        )
    }
}

/// Intersection of a list of interval unions. An empty list is the full line.
pub fn intersect_all(unions: &[IntervalUnion]) -> IntervalUnion {
    unions
        .iter()
        .fold(IntervalUnion::full(), |acc, u| acc.intersect(u))
}

/// The truncation region: intersection of the solution sets of all
/// inequalities. Fails if the observed statistic falls outside, which can
/// only mean the caller emitted an inequality its own data violates.
pub fn compute_z(
    inequalities: &[QuadIneq],
    z_obs: f64,
    tol: f64,
) -> Result<IntervalUnion, TruncationError> {
    let solved: Vec<IntervalUnion> = inequalities.iter().map(|q| solve_quad(q, tol)).collect();
    let region = intersect_all(&solved);
    if !region.contains(z_obs, tol) {
        return Err(TruncationError::ObservedOutsideRegion { z_obs });
    }
    Ok(region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::EventTag;

    fn q(alpha: f64, beta: f64, gamma: f64) -> QuadIneq {
        QuadIneq::new(alpha, beta, gamma, EventTag::Se1)
    }

    fn iv(v: Vec<(f64, f64)>) -> IntervalUnion {
        IntervalUnion::from_intervals(v, DEFAULT_TOL)
    }

    #[test]
    fn solve_quad_cases() {
        assert_eq!(
            solve_quad(&q(1.0, 0.0, -1.0), DEFAULT_TOL).intervals(),
            &[(-1.0, 1.0)]
        );
        assert_eq!(
            solve_quad(&q(0.0, 2.0, -2.0), DEFAULT_TOL).intervals(),
            &[(f64::NEG_INFINITY, 1.0)]
        );
        assert_eq!(
            solve_quad(&q(-1.0, 0.0, 1.0), DEFAULT_TOL).intervals(),
            &[(f64::NEG_INFINITY, -1.0), (1.0, f64::INFINITY)]
        );
        assert!(solve_quad(&q(1.0, 0.0, 1.0), DEFAULT_TOL).is_empty());
        // constant cases
        assert!(!solve_quad(&q(0.0, 0.0, -1.0), DEFAULT_TOL).is_empty());
        assert!(solve_quad(&q(0.0, 0.0, 1.0), DEFAULT_TOL).is_empty());
    }

    #[test]
    fn solve_quad_membership_matches_direct_evaluation() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..10_000 {
            let qq = q(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let z = rng.gen_range(-5.0..5.0);
            let sol = solve_quad(&qq, DEFAULT_TOL);
            let val = qq.eval(z);
            if val < -1e-6 {
                assert!(sol.contains(z, DEFAULT_TOL), "{qq:?} at {z}: {val}");
            }
            if val > 1e-6 {
                assert!(!sol.contains(z, -1e-7), "{qq:?} at {z}: {val}");
            }
        }
    }

    #[test]
    fn intersect_hand_cases() {
        let a = iv(vec![(-1.0, 1.0)]);
        let b = iv(vec![(0.0, 2.0)]);
        assert_eq!(a.intersect(&b).intervals(), &[(0.0, 1.0)]);
        let c = iv(vec![(f64::NEG_INFINITY, -1.0), (1.0, f64::INFINITY)]);
        let d = iv(vec![(-3.0, 3.0)]);
        assert_eq!(c.intersect(&d).intervals(), &[(-3.0, -1.0), (1.0, 3.0)]);
        assert_eq!(a.intersect(&IntervalUnion::full()), a);
    }

    #[test]
    fn intersect_commutative_associative_under_shuffle() {
        use rand::seq::SliceRandom;
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..50 {
            let mut unions: Vec<IntervalUnion> = (0..4)
                .map(|_| {
                    let lo = rng.gen_range(-3.0..0.0);
                    let hi = rng.gen_range(0.0..3.0);
                    let lo2 = rng.gen_range(3.0..4.0);
                    iv(vec![(lo, hi), (lo2, lo2 + rng.gen_range(0.1..2.0))])
                })
                .collect();
            let base = intersect_all(&unions);
            unions.shuffle(&mut rng);
            let shuffled = intersect_all(&unions);
            assert_eq!(base.intervals().len(), shuffled.intervals().len());
            for (x, y) in base.intervals().iter().zip(shuffled.intervals()) {
                assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn compute_z_basics() {
        let region = compute_z(&[q(1.0, 0.0, -1.0)], 0.0, DEFAULT_TOL).unwrap();
        assert_eq!(region.intervals(), &[(-1.0, 1.0)]);
        let region = compute_z(&[], 0.3, DEFAULT_TOL).unwrap();
        assert_eq!(region.intervals(), &[(f64::NEG_INFINITY, f64::INFINITY)]);
        assert!(matches!(
            compute_z(&[q(1.0, 0.0, -1.0)], 5.0, DEFAULT_TOL),
            Err(TruncationError::ObservedOutsideRegion { .. })
        ));
    }

    #[test]
    fn adding_inequality_never_enlarges() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..100 {
            let qs: Vec<QuadIneq> = (0..5)
                .map(|_| {
                    q(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..0.0),
                    )
                })
                .collect();
            // all satisfied at z=0 because gamma < 0
            let smaller = compute_z(&qs, 0.0, DEFAULT_TOL).unwrap();
            let bigger = compute_z(&qs[..4], 0.0, DEFAULT_TOL).unwrap();
            // subset check on a grid
            for i in -200..200 {
                let z = i as f64 * 0.05;
                if smaller.contains(z, 0.0) {
                    assert!(bigger.contains(z, 1e-12));
                }
            }
        }
    }

    #[test]
    fn single_interval_selection() {
        let u = iv(vec![(-1.0, 1.0), (2.0, 3.0)]);
        let s = u.single_interval(2.5).unwrap();
        assert_eq!(s.intervals(), &[(2.0, 3.0)]);
        let one = iv(vec![(-1.0, 1.0)]);
        assert_eq!(one.single_interval(0.0).unwrap(), one);
        assert!(u.single_interval(1.5).is_err());
        // subset by construction
        for &(lo, hi) in s.intervals() {
            assert!(u.contains(lo, 1e-12) && u.contains(hi, 1e-12));
        }
    }
}
