//! Stage-1 anomaly screening: neighbor ranking, the log-distance anomaly
//! score, threshold decision, and the data-driven choice of k.

use crate::model::SelectionOutcome;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ScreeningError {
    #[error("k = {k} exceeds training size n = {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("candidate list must be nonempty and strictly increasing")]
    BadCandidates,
    #[error("degenerate training set: all leave-one-out scores are -inf")]
    DegenerateTraining,
}

/// Neighbor-search metric. Distances are *stored* squared; the anomaly
/// score applies the square root at score time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Metric {
    SquaredL2,
}

/// Fixed k or a candidate list for the data-driven choice.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum KSpec {
    Fixed(usize),
    Candidates(Vec<usize>),
}

impl KSpec {
    pub fn max_k(&self) -> usize {
        match self {
            KSpec::Fixed(k) => *k,
            KSpec::Candidates(c) => *c.last().unwrap_or(&0),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), ScreeningError> {
        match self {
            KSpec::Fixed(k) => {
                if *k == 0 || *k > n {
                    return Err(ScreeningError::KTooLarge { k: *k, n });
                }
            }
            KSpec::Candidates(c) => {
                if c.is_empty() || c.windows(2).any(|w| w[0] >= w[1]) || c[0] == 0 {
                    return Err(ScreeningError::BadCandidates);
                }
                if c[c.len() - 1] > n {
                    return Err(ScreeningError::KTooLarge {
                        k: c[c.len() - 1],
                        n,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScreeningConfig {
    pub k: KSpec,
    pub theta: f64,
    pub metric: Metric,
}

/// Screening verdict plus the full sorted distance list (needed later for
/// the selection-event inequalities).
#[derive(Debug, Clone)]
pub struct ScreeningResult {
    pub outcome: SelectionOutcome,
    pub score: f64,
    pub selected: bool,
    /// All n (squared distance, training index) pairs, ascending.
    pub distances: Vec<(f64, usize)>,
}

/// Squared L2 distances to every training row, ascending, ties broken by
/// ascending training index.
pub fn rank_neighbors(test: &DVector<f64>, train: &DMatrix<f64>) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = (0..train.nrows())
        .map(|i| {
            let mut s = 0.0;
            for j in 0..train.ncols() {
                let diff = test[j] - train[(i, j)];
                s += diff * diff;
            }
            (s, i)
        })
        .collect();
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    out
}

/// Anomaly score log dist_k - log(k)/d. `dist_k` is the metric distance
/// (take the square root of a stored squared distance first). A zero
/// distance yields -inf, which never passes a finite threshold.
pub fn anomaly_score(dist_k: f64, k: usize, d: usize) -> f64 {
    if dist_k <= 0.0 {
        return f64::NEG_INFINITY;
    }
    dist_k.ln() - (k as f64).ln() / d as f64
}

/// Score for candidate k given the ascending squared-distance list.
fn score_at(distances: &[(f64, usize)], k: usize, d: usize) -> f64 {
    anomaly_score(distances[k - 1].0.sqrt(), k, d)
}

fn signs_of(test: &DVector<f64>, train: &DMatrix<f64>, neighbors: &[usize]) -> Vec<i8> {
    let d = train.ncols();
    let k = neighbors.len() as f64;
    (0..d)
        .map(|j| {
            let mean: f64 = neighbors.iter().map(|&i| train[(i, j)]).sum::<f64>() / k;
            // zero difference pinned to +1: measure-zero under the model
            if test[j] - mean < 0.0 {
                -1
            } else {
                1
            }
        })
        .collect()
}

/// Run the screening stage. In the data-driven mode the candidate with the
/// highest score wins; exact ties go to the smallest k.
pub fn screen(
    test: &DVector<f64>,
    train: &DMatrix<f64>,
    config: &ScreeningConfig,
) -> Result<ScreeningResult, ScreeningError> {
    let n = train.nrows();
    let d = train.ncols();
    config.k.validate(n)?;
    let distances = rank_neighbors(test, train);
    let (k_star, score, candidates) = match &config.k {
        KSpec::Fixed(k) => (*k, score_at(&distances, *k, d), vec![]),
        KSpec::Candidates(cands) => {
            let mut best = (cands[0], score_at(&distances, cands[0], d));
            for &k in &cands[1..] {
                let s = score_at(&distances, k, d);
                if s > best.1 {
                    best = (k, s);
                }
            }
            (best.0, best.1, cands.clone())
        }
    };
    let neighbors: Vec<usize> = distances[..k_star].iter().map(|&(_, i)| i).collect();
    let outcome = SelectionOutcome {
        kth_index: neighbors[k_star - 1],
        signs: signs_of(test, train, &neighbors),
        k_star,
        neighbors,
        candidates,
    };
    Ok(ScreeningResult {
        outcome,
        score,
        selected: score >= config.theta,
        distances,
    })
}

/// Leave-one-out threshold calibration: score every training instance
/// against the remaining n-1 and return the requested empirical quantile
/// (linear interpolation between order statistics).
pub fn choose_theta(
    train: &DMatrix<f64>,
    config: &ScreeningConfig,
    quantile: f64,
) -> Result<f64, ScreeningError> {
    let n = train.nrows();
    let d = train.ncols();
    config.k.validate(n - 1)?;
    assert!((0.0..=1.0).contains(&quantile), "quantile out of [0,1]");
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let x = train.row(i).transpose();
        let mut dists: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let mut s = 0.0;
                for c in 0..d {
                    let diff = x[c] - train[(j, c)];
                    s += diff * diff;
                }
                s
            })
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let score = match &config.k {
            KSpec::Fixed(k) => anomaly_score(dists[*k - 1].sqrt(), *k, d),
            KSpec::Candidates(cands) => cands
                .iter()
                .map(|&k| anomaly_score(dists[k - 1].sqrt(), k, d))
                .fold(f64::NEG_INFINITY, f64::max),
        };
        scores.push(score);
    }
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if scores[scores.len() - 1] == f64::NEG_INFINITY {
        return Err(ScreeningError::DegenerateTraining);
    }
    let pos = quantile * (scores.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || scores[lo] == f64::NEG_INFINITY {
        // no interpolation out of -inf
        return Ok(scores[hi]);
    }
    let frac = pos - lo as f64;
    Ok(scores[lo] + frac * (scores[hi] - scores[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn rank_hand_case() {
        let r = rank_neighbors(
            &dv(&[0.0]),
            &DMatrix::from_row_slice(3, 1, &[1.0, 3.0, -2.0]),
        );
        let idx: Vec<usize> = r.iter().map(|&(_, i)| i).collect();
        let d2: Vec<f64> = r.iter().map(|&(s, _)| s).collect();
        assert_eq!(idx, vec![0, 2, 1]);
        assert_eq!(d2, vec![1.0, 4.0, 9.0]);
    }

    #[test]
    fn rank_exact_match_first() {
        let train = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 5.0, 5.0, 2.0, 2.0]);
        let r = rank_neighbors(&dv(&[2.0, 2.0]), &train);
        assert_eq!(r[0], (0.0, 2));
    }

    #[test]
    fn rank_permutation_equivariance() {
        let mut rng = StdRng::seed_from_u64(3);
        let train = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let test = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let order = [3usize, 0, 5, 1, 4, 2];
        let permuted = DMatrix::from_fn(6, 3, |i, j| train[(order[i], j)]);
        let r1 = rank_neighbors(&test, &train);
        let r2 = rank_neighbors(&test, &permuted);
        for (a, b) in r1.iter().zip(r2.iter()) {
            assert!((a.0 - b.0).abs() < 1e-15);
            assert_eq!(order[b.1], a.1);
        }
    }

    #[test]
    fn score_hand_values() {
        assert_eq!(anomaly_score(1.0, 1, 2), 0.0);
        assert!((anomaly_score(std::f64::consts::E, 1, 5) - 1.0).abs() < 1e-15);
        // log 2 - (log 4)/2 = 0
        assert!(anomaly_score(2.0, 4, 2).abs() < 1e-15);
        assert_eq!(anomaly_score(0.0, 1, 2), f64::NEG_INFINITY);
    }

    #[test]
    fn score_monotonicity() {
        for k in 2..6 {
            assert!(anomaly_score(2.0, k, 3) < anomaly_score(2.0, k - 1, 3));
        }
        assert!(anomaly_score(2.0, 2, 3) < anomaly_score(2.5, 2, 3));
    }

    fn cfg(k: KSpec, theta: f64) -> ScreeningConfig {
        ScreeningConfig {
            k,
            theta,
            metric: Metric::SquaredL2,
        }
    }

    #[test]
    fn screen_threshold_decision() {
        let train = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        let r = screen(&dv(&[0.0]), &train, &cfg(KSpec::Fixed(1), 0.5)).unwrap();
        assert!((r.score - 0.0).abs() < 1e-15);
        assert!(!r.selected);
        let r = screen(&dv(&[0.0]), &train, &cfg(KSpec::Fixed(1), -1.0)).unwrap();
        assert!(r.selected);
        assert_eq!(r.outcome.neighbors, vec![0]);
    }

    #[test]
    fn screen_data_driven_argmax() {
        let train = DMatrix::from_row_slice(2, 1, &[1.0, 10.0]);
        let r = screen(
            &dv(&[0.0]),
            &train,
            &cfg(KSpec::Candidates(vec![1, 2]), 0.0),
        )
        .unwrap();
        assert_eq!(r.outcome.k_star, 2);
        assert!((r.score - (10.0f64.ln() - 2.0f64.ln())).abs() < 1e-12);
        // reported score is the max over candidates
        assert!(r.score >= 0.0);
    }

    #[test]
    fn screen_k_too_large() {
        let train = DMatrix::from_row_slice(2, 1, &[1.0, 10.0]);
        assert!(matches!(
            screen(&dv(&[0.0]), &train, &cfg(KSpec::Fixed(3), 0.0)),
            Err(ScreeningError::KTooLarge { .. })
        ));
    }

    #[test]
    fn rank_matches_bruteforce_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(2..30);
            let d = rng.gen_range(1..6);
            let train = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-3.0..3.0));
            let test = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
            let ranked = rank_neighbors(&test, &train);
            // oracle: recompute each squared distance independently, check sortedness
            for w in ranked.windows(2) {
                assert!(w[0].0 <= w[1].0);
            }
            let mut seen: Vec<usize> = ranked.iter().map(|&(_, i)| i).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            for &(s, i) in &ranked {
                let want: f64 = (0..d).map(|j| (test[j] - train[(i, j)]).powi(2)).sum();
                assert!((s - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn theta_quantile_endpoints_and_monotonicity() {
        // two tight clusters far apart
        let mut rows = vec![];
        for i in 0..5 {
            rows.push(0.0 + i as f64 * 0.01);
        }
        for i in 0..5 {
            rows.push(100.0 + i as f64 * 0.01);
        }
        let train = DMatrix::from_row_slice(10, 1, &rows);
        let c = cfg(KSpec::Fixed(1), 0.0);
        let t_max = choose_theta(&train, &c, 1.0).unwrap();
        let t_min = choose_theta(&train, &c, 0.0).unwrap();
        // brute-force LOO enumeration
        let mut loo = vec![];
        for i in 0..10 {
            let mut best = f64::INFINITY;
            for j in 0..10 {
                if j != i {
                    best = best.min((rows[i] - rows[j]).powi(2));
                }
            }
            loo.push(anomaly_score(best.sqrt(), 1, 1));
        }
        loo.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((t_max - loo[9]).abs() < 1e-12);
        assert!((t_min - loo[0]).abs() < 1e-12);
        let mut prev = t_min;
        for q in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let t = choose_theta(&train, &c, q).unwrap();
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn theta_degenerate_training() {
        let train = DMatrix::from_row_slice(3, 1, &[2.0, 2.0, 2.0]);
        assert!(matches!(
            choose_theta(&train, &cfg(KSpec::Fixed(1), 0.0), 0.9),
            Err(ScreeningError::DegenerateTraining)
        ));
    }
}
