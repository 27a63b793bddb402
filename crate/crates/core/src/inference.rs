//! p-value computation: the selective p-value from the truncated normal on
//! the computed region, plus the naive, Bonferroni, and single-interval
//! baselines.

use crate::events::{self, DistanceQuadratic, QuadIneq};
use crate::knnad::{self, ScreeningConfig, ScreeningError, ScreeningResult};
use crate::model::{
    ConcatVector, Dataset, LineParam, ModelError, StatisticDirection, StatisticKind,
};
use crate::plnet::{PLNetError, PLNetwork};
use crate::truncation::{self, IntervalUnion, TruncationError, DEFAULT_TOL};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use std::collections::BTreeMap;

#[derive(thiserror::Error, Debug)]
pub enum InferenceError {
    #[error("not a candidate: the instance did not pass the anomaly screen")]
    NotACandidate,
    #[error(transparent)]
    Screening(#[from] ScreeningError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Truncation(#[from] TruncationError),
    #[error(transparent)]
    Network(#[from] PLNetError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unsupported combination: {0}")]
    Unsupported(String),
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;

/// Standard normal upper tail P(N(0,1) >= x).
pub fn phibar(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// log of the upper tail, stable far into the right tail.
///
/// Below 8 the complementary error function is evaluated directly; beyond
/// that the asymptotic expansion phi(x)/x (1 - 1/x^2 + 3/x^4 - 15/x^6) is
/// accurate to well under 1e-6 relative.
pub fn ln_phibar(x: f64) -> f64 {
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    // erfc stays representable (and accurate in relative terms) well past
    // this point; the asymptotic series only takes over where the direct
    // path would start to underflow, and by then its truncation error is
    // below 1e-9 in log space.
    if x <= 30.0 {
        (0.5 * erfc(x / SQRT_2)).ln()
    } else {
        let inv2 = 1.0 / (x * x);
        let series = 1.0 - inv2 + 3.0 * inv2 * inv2 - 15.0 * inv2 * inv2 * inv2;
        -0.5 * x * x - LN_SQRT_2PI - x.ln() + series.ln()
    }
}

/// log of P(l <= N(0,1) <= u) for l <= u (either endpoint may be infinite).
fn ln_interval_mass(l: f64, u: f64) -> f64 {
    if u <= l {
        return f64::NEG_INFINITY;
    }
    if l >= 0.0 {
        let la = ln_phibar(l);
        let lb = ln_phibar(u);
        // la >= lb; mass = exp(la) - exp(lb)
        la + (-((lb - la).exp())).ln_1p()
    } else if u <= 0.0 {
        ln_interval_mass(-u, -l)
    } else {
        (phibar(l) - phibar(u)).ln()
    }
}

fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Survival function of a zero-mean truncated normal:
/// P(W >= z_obs | W in region), W ~ N(0, sigma2).
pub fn tn_survival(
    z_obs: f64,
    sigma2: f64,
    region: &IntervalUnion,
) -> Result<f64, InferenceError> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(InferenceError::Numerical(format!(
            "nonpositive variance {sigma2}"
        )));
    }
    if region.is_empty() {
        return Err(InferenceError::Numerical(
            "empty truncation region".to_string(),
        ));
    }
    let sigma = sigma2.sqrt();
    let mut num = Vec::new();
    let mut den = Vec::new();
    for &(lo, hi) in region.intervals() {
        den.push(ln_interval_mass(lo / sigma, hi / sigma));
        if hi > z_obs {
            num.push(ln_interval_mass(lo.max(z_obs) / sigma, hi / sigma));
        }
    }
    let ln_den = log_sum_exp(&den);
    if ln_den == f64::NEG_INFINITY {
        return Err(InferenceError::Numerical(
            "truncation region mass underflows even in log space".to_string(),
        ));
    }
    let ln_num = log_sum_exp(&num);
    Ok((ln_num - ln_den).exp().clamp(0.0, 1.0))
}

/// Two-sided z-test without any conditioning.
pub fn naive_p(z_obs: f64, sigma2: f64) -> f64 {
    (2.0 * phibar(z_obs.abs() / sigma2.sqrt())).min(1.0)
}

/// Bonferroni correction over the C(n, k) possible neighbor sets,
/// computed in log space.
pub fn bonferroni_p(p_naive: f64, n: usize, k: usize) -> f64 {
    assert!(k >= 1 && k <= n);
    if p_naive <= 0.0 {
        return 0.0;
    }
    let ln_choose = ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0)
        - ln_gamma((n - k) as f64 + 1.0);
    (ln_choose + p_naive.ln()).exp().min(1.0)
}

/// Baseline restricted to the single interval of the region containing the
/// observation. Valid but conservative.
pub fn wopp_p(z_obs: f64, sigma2: f64, region: &IntervalUnion) -> Result<f64, InferenceError> {
    let single = region.single_interval(z_obs)?;
    tn_survival(z_obs, sigma2, &single)
}

/// Ablation switches for the conditioning set.
#[derive(Debug, Clone, Copy, Default)]
pub struct InferenceOptions {
    /// Drop the neighbor/screening/sign event families (OpA1-style).
    pub omit_knnad_events: bool,
    /// Drop the network polytope events (OpA2-style).
    pub omit_dnn_events: bool,
}

/// Everything the conditioning computed, exposed for diagnostics and for
/// independent verification of the region.
#[derive(Debug, Clone)]
pub struct SelectionAnalysis {
    pub screening: ScreeningResult,
    pub line: LineParam,
    pub inequalities: Vec<QuadIneq>,
    pub region: IntervalUnion,
    /// Dimension used in the anomaly score (latent dimension when a network
    /// feature map is in play, input dimension otherwise).
    pub score_dim: usize,
    /// Activation patterns of (test, train_0, ..) when a feature map is in
    /// play.
    pub patterns: Option<Vec<crate::plnet::ActivationPattern>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PValueReport {
    pub p_selective: Option<f64>,
    pub p_naive: Option<f64>,
    pub p_bonferroni: Option<f64>,
    pub p_wopp: Option<f64>,
    pub z_obs: f64,
    pub sigma2: f64,
    /// Truncation region; `null` endpoints are unbounded.
    pub z_region: Vec<(Option<f64>, Option<f64>)>,
    pub n_inequalities: BTreeMap<String, usize>,
}

fn region_to_json(region: &IntervalUnion) -> Vec<(Option<f64>, Option<f64>)> {
    region
        .intervals()
        .iter()
        .map(|&(lo, hi)| {
            (
                lo.is_finite().then_some(lo),
                hi.is_finite().then_some(hi),
            )
        })
        .collect()
}

/// Run screening and, for a screened instance, derive the full conditioned
/// line, inequality set, and truncation region.
pub fn analyze(
    test: &DVector<f64>,
    data: &Dataset,
    config: &ScreeningConfig,
    kind: StatisticKind,
    net: Option<&PLNetwork>,
    opts: &InferenceOptions,
) -> Result<SelectionAnalysis, InferenceError> {
    let (n, d) = (data.n(), data.d());
    if test.len() != d {
        return Err(InferenceError::Model(ModelError::DimensionMismatch(
            format!("test has length {}, training d = {}", test.len(), d),
        )));
    }
    if net.is_some() && kind == StatisticKind::L1Norm {
        return Err(InferenceError::Unsupported(
            "L1 statistic with a latent-space feature map; use the mean statistic".to_string(),
        ));
    }

    // Screening happens in whichever space neighbors live in.
    let (screening, score_dim, patterns) = match net {
        None => {
            let res = knnad::screen(test, data.train(), config)?;
            (res, d, None)
        }
        Some(net) => {
            let mut patterns = Vec::with_capacity(1 + n);
            let (latent_test, pat) = net.forward(test)?;
            patterns.push(pat);
            let dt = net.output_dim();
            let mut latents = DMatrix::zeros(n, dt);
            for i in 0..n {
                let (lat, pat) = net.forward(&data.instance(i))?;
                latents.row_mut(i).copy_from(&lat.transpose());
                patterns.push(pat);
            }
            let res = knnad::screen(&latent_test, &latents, config)?;
            (res, dt, Some(patterns))
        }
    };
    if !screening.selected {
        return Err(InferenceError::NotACandidate);
    }

    let mut eta = StatisticDirection::build_eta(&screening.outcome, n, d, kind)?;
    let y = ConcatVector::concat(test, data.train())?;
    if kind == StatisticKind::ImageMean && eta.eta().dot(y.data()) < 0.0 {
        // one-sided by conditioning on the observed sign of the statistic
        eta = eta.negated();
    }
    let line = LineParam::line_params(&y, &eta, data.sigma())?;

    // Distance quadratics in the neighbor space.
    let (dq, dnn) = match (net, &patterns) {
        (Some(net), Some(patterns)) => {
            let offsets: Vec<DVector<f64>> = (0..=n).map(|i| line.a_block(i)).collect();
            let slopes: Vec<DVector<f64>> = (0..=n).map(|i| line.b_block(i)).collect();
            let mut lat_off = Vec::with_capacity(1 + n);
            let mut lat_slope = Vec::with_capacity(1 + n);
            for i in 0..=n {
                let (w, b) = net.affine_map(&patterns[i])?;
                lat_off.push(&w * &offsets[i] + &b);
                lat_slope.push(&w * &slopes[i]);
            }
            let dq = DistanceQuadratic::from_blocks(&lat_off, &lat_slope);
            let dnn = if opts.omit_dnn_events {
                Vec::new()
            } else {
                crate::plnet::dnn_events(net, patterns, &offsets, &slopes)?
            };
            (dq, dnn)
        }
        _ => (DistanceQuadratic::from_line(&line), Vec::new()),
    };

    let mut families = Vec::new();
    if kind == StatisticKind::ImageMean {
        // The direction was picked from the observed sign of the mean
        // statistic, so that choice is itself conditioned on: z >= 0 in the
        // (possibly negated) parametrization.
        families.push(vec![QuadIneq::new(0.0, -1.0, 0.0, events::EventTag::Se3Sign)]);
    }
    if !opts.omit_knnad_events {
        families.push(events::se1_events(&dq, &screening.outcome));
        families.push(events::se2_events(
            &dq,
            &screening.outcome,
            config.theta,
            score_dim,
        ));
        if kind == StatisticKind::L1Norm {
            families.push(events::se3_events(&line, &screening.outcome));
        }
        families.push(events::kselect_events(
            &dq,
            &screening.distances,
            &screening.outcome,
            score_dim,
        ));
    }
    families.push(dnn);
    let inequalities = events::assemble(families);
    let region = truncation::compute_z(&inequalities, line.z_obs, DEFAULT_TOL)?;
    Ok(SelectionAnalysis {
        screening,
        line,
        inequalities,
        region,
        score_dim,
        patterns,
    })
}

/// Full pipeline: screen, condition, and compute every p-value variant for
/// one screened test instance.
pub fn selective_p(
    test: &DVector<f64>,
    data: &Dataset,
    config: &ScreeningConfig,
    kind: StatisticKind,
    net: Option<&PLNetwork>,
    opts: &InferenceOptions,
) -> Result<PValueReport, InferenceError> {
    let analysis = analyze(test, data, config, kind, net, opts)?;
    let z_obs = analysis.line.z_obs;
    let sigma2 = analysis.line.var;
    let p_sel = tn_survival(z_obs, sigma2, &analysis.region)?;
    let p_nv = naive_p(z_obs, sigma2);
    let p_bf = bonferroni_p(p_nv, data.n(), analysis.screening.outcome.k_star);
    let p_wopp = wopp_p(z_obs, sigma2, &analysis.region)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for q in &analysis.inequalities {
        *counts.entry(format!("{:?}", q.tag)).or_insert(0) += 1;
    }
    Ok(PValueReport {
        p_selective: Some(p_sel),
        p_naive: Some(p_nv),
        p_bonferroni: Some(p_bf),
        p_wopp: Some(p_wopp),
        z_obs,
        sigma2,
        z_region: region_to_json(&analysis.region),
        n_inequalities: counts,
    })
}
