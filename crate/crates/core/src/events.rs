//! Translation of each selection event into quadratic inequalities in the
//! scalar line parameter z.
//!
//! Along the line Y = a + b z every squared distance between the test block
//! and a training block is an exact quadratic in z, so the neighbor set, the
//! k-th-neighbor identity, the screening threshold, the statistic signs, the
//! data-driven k, and the network activation patterns all reduce to finite
//! lists of constraints alpha z^2 + beta z + gamma <= 0.

use crate::model::{LineParam, SelectionOutcome};
use nalgebra::DVector;
use serde::Serialize;

/// Which selection-event family a constraint came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EventTag {
    Se1,
    Se2Order,
    Se2Threshold,
    Se3Sign,
    KSelect,
    DnnPolytope,
}

/// One constraint alpha z^2 + beta z + gamma <= 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadIneq {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tag: EventTag,
}

impl QuadIneq {
    pub fn new(alpha: f64, beta: f64, gamma: f64, tag: EventTag) -> Self {
        debug_assert!(alpha.is_finite() && beta.is_finite() && gamma.is_finite());
        Self {
            alpha,
            beta,
            gamma,
            tag,
        }
    }

    /// Left-hand side at z.
    pub fn eval(&self, z: f64) -> f64 {
        (self.alpha * z + self.beta) * z + self.gamma
    }
}

/// Per-training-index coefficients of D_i(z) = ||test_block(z) - block_i(z)||^2.
#[derive(Debug, Clone)]
pub struct DistanceQuadratic {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl DistanceQuadratic {
    /// Build from per-block affine trajectories x_i(z) = offset_i + slope_i z,
    /// index 0 being the test instance. This covers both the input space
    /// (blocks of the line parameterization) and a latent space (blocks
    /// pushed through per-instance affine maps).
    pub fn from_blocks(offsets: &[DVector<f64>], slopes: &[DVector<f64>]) -> Self {
        assert_eq!(offsets.len(), slopes.len());
        assert!(offsets.len() >= 2, "need a test block and >= 1 training block");
        let n = offsets.len() - 1;
        let mut alpha = Vec::with_capacity(n);
        let mut beta = Vec::with_capacity(n);
        let mut gamma = Vec::with_capacity(n);
        for i in 1..=n {
            let da = &offsets[0] - &offsets[i];
            let db = &slopes[0] - &slopes[i];
            alpha.push(db.norm_squared());
            beta.push(2.0 * da.dot(&db));
            gamma.push(da.norm_squared());
        }
        Self { alpha, beta, gamma }
    }

    pub fn from_line(line: &LineParam) -> Self {
        let offsets: Vec<DVector<f64>> = (0..=line.n()).map(|i| line.a_block(i)).collect();
        let slopes: Vec<DVector<f64>> = (0..=line.n()).map(|i| line.b_block(i)).collect();
        Self::from_blocks(&offsets, &slopes)
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// D_i evaluated at z.
    pub fn eval(&self, i: usize, z: f64) -> f64 {
        (self.alpha[i] * z + self.beta[i]) * z + self.gamma[i]
    }

    /// Constraint D_i(z) - D_j(z) <= 0.
    fn closer_than(&self, i: usize, j: usize, tag: EventTag) -> QuadIneq {
        QuadIneq::new(
            self.alpha[i] - self.alpha[j],
            self.beta[i] - self.beta[j],
            self.gamma[i] - self.gamma[j],
            tag,
        )
    }
}

/// Neighbor-set event: every selected neighbor stays closer than every
/// non-neighbor. k(n-k) inequalities.
pub fn se1_events(dq: &DistanceQuadratic, outcome: &SelectionOutcome) -> Vec<QuadIneq> {
    let n = dq.len();
    let inside: Vec<usize> = outcome.neighbors.clone();
    let mut member = vec![false; n];
    for &i in &inside {
        member[i] = true;
    }
    let mut out = Vec::with_capacity(inside.len() * (n - inside.len()));
    for &i in &inside {
        for j in 0..n {
            if !member[j] {
                out.push(dq.closer_than(i, j, EventTag::Se1));
            }
        }
    }
    out
}

/// Screening event: the observed k-th neighbor stays k-th (ordering within
/// and outside the neighbor set) and its distance stays above the score
/// threshold. The threshold `log sqrt(D) - log(k)/score_dim >= theta`
/// rearranges to `-D + exp(2 theta) k^(2/score_dim) <= 0`.
pub fn se2_events(
    dq: &DistanceQuadratic,
    outcome: &SelectionOutcome,
    theta: f64,
    score_dim: usize,
) -> Vec<QuadIneq> {
    let n = dq.len();
    let k = outcome.neighbors.len();
    let m = outcome.kth_index;
    let mut member = vec![false; n];
    for &i in &outcome.neighbors {
        member[i] = true;
    }
    let mut out = Vec::new();
    // other neighbors are at most as far as the k-th
    for &i in &outcome.neighbors[..k - 1] {
        out.push(dq.closer_than(i, m, EventTag::Se2Order));
    }
    // non-neighbors are at least as far (overlaps SE1; kept for fidelity)
    for j in 0..n {
        if !member[j] {
            out.push(dq.closer_than(m, j, EventTag::Se2Order));
        }
    }
    let c = (2.0 * theta).exp() * (k as f64).powf(2.0 / score_dim as f64);
    out.push(QuadIneq::new(
        -dq.alpha[m],
        -dq.beta[m],
        c - dq.gamma[m],
        EventTag::Se2Threshold,
    ));
    out
}

/// Sign event for the L1 statistic: each coordinate of
/// test_block(z) - neighbor_mean(z) keeps its observed sign. Linear in z.
/// Not emitted for the mean statistic (no absolute values there).
pub fn se3_events(line: &LineParam, outcome: &SelectionOutcome) -> Vec<QuadIneq> {
    let d = line.d();
    let k = outcome.neighbors.len() as f64;
    let a0 = line.a_block(0);
    let b0 = line.b_block(0);
    let mut da = a0;
    let mut db = b0;
    for &i in &outcome.neighbors {
        da -= line.a_block(1 + i) / k;
        db -= line.b_block(1 + i) / k;
    }
    (0..d)
        .map(|j| {
            let s = outcome.signs[j] as f64;
            // s_j (da_j + db_j z) >= 0  <=>  -s_j db_j z - s_j da_j <= 0
            QuadIneq::new(0.0, -s * db[j], -s * da[j], EventTag::Se3Sign)
        })
        .collect()
}

/// Data-driven-k event.
///
/// Emits (i) the score-argmax comparisons against every losing candidate
/// (squared: D_{m*} >= (k*/k_t)^(2/score_dim) D_{m_t}) and (ii) ordering
/// constraints fixing the identity of every candidate's k_t-th neighbor:
/// the observed ranking of the first max-candidate positions, plus the
/// separation of that prefix from the rest. The identity constraints
/// over-condition relative to the bare argmax event; validity is
/// unaffected, only power.
pub fn kselect_events(
    dq: &DistanceQuadratic,
    ranking: &[(f64, usize)],
    outcome: &SelectionOutcome,
    score_dim: usize,
) -> Vec<QuadIneq> {
    let candidates = &outcome.candidates;
    if candidates.len() <= 1 {
        return Vec::new();
    }
    let k_star = outcome.k_star;
    let k_max = *candidates.last().unwrap();
    let m_star = ranking[k_star - 1].1;
    let mut out = Vec::new();
    // consecutive ordering of the first k_max positions
    for w in ranking[..k_max].windows(2) {
        out.push(dq.closer_than(w[0].1, w[1].1, EventTag::KSelect));
    }
    // prefix separated from everything beyond it
    let boundary = ranking[k_max - 1].1;
    for &(_, j) in &ranking[k_max..] {
        out.push(dq.closer_than(boundary, j, EventTag::KSelect));
    }
    // argmax comparisons
    for &kt in candidates {
        if kt == k_star {
            continue;
        }
        let mt = ranking[kt - 1].1;
        let c = (k_star as f64 / kt as f64).powf(2.0 / score_dim as f64);
        out.push(QuadIneq::new(
            c * dq.alpha[mt] - dq.alpha[m_star],
            c * dq.beta[mt] - dq.beta[m_star],
            c * dq.gamma[mt] - dq.gamma[m_star],
            EventTag::KSelect,
        ));
    }
    out
}

/// Concatenate event families, dropping exact-duplicate coefficient triples
/// (first occurrence keeps its tag).
pub fn assemble(families: Vec<Vec<QuadIneq>>) -> Vec<QuadIneq> {
    let mut out: Vec<QuadIneq> = Vec::new();
    let mut seen: std::collections::HashSet<(u64, u64, u64)> = std::collections::HashSet::new();
    for family in families {
        for q in family {
            let key = (q.alpha.to_bits(), q.beta.to_bits(), q.gamma.to_bits());
            if seen.insert(key) {
                out.push(q);
            }
        }
    }
    out
}
