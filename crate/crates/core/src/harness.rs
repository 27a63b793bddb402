//! Experiment harness: synthetic generation under the null and under a
//! shifted alternative, conditional type-I-error / power estimation, CSV
//! ingestion, and image patch extraction.

use crate::inference::{self, InferenceError, InferenceOptions};
use crate::knnad::{self, KSpec, Metric, ScreeningConfig, ScreeningError};
use crate::model::{Dataset, ModelError, StatisticKind};
use crate::plnet::PLNetwork;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error(transparent)]
    Screening(#[from] ScreeningError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("csv error at {path}: {message}")]
    Csv { path: String, message: String },
    #[error("non-numeric cell at row {row}, column {column}")]
    NonNumericCell { row: usize, column: String },
    #[error("zero-variance column {0}")]
    ZeroVarianceColumn(String),
    #[error("patch out of bounds: position ({row}, {col}), patch {patch}, image {h}x{w}")]
    PatchOutOfBounds {
        row: usize,
        col: usize,
        patch: usize,
        h: usize,
        w: usize,
    },
}

/// One synthetic experiment configuration.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub k: KSpec,
    /// Signal strength of the anomalous test draw (0 under the null).
    pub delta: f64,
    pub trials: u64,
    pub seed: u64,
    pub theta_quantile: f64,
    pub kind: StatisticKind,
    pub net: Option<PLNetwork>,
    pub options: InferenceOptions,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.trials < 1 {
            return Err(HarnessError::InvalidSpec("trials must be >= 1".to_string()));
        }
        if self.delta < 0.0 {
            return Err(HarnessError::InvalidSpec("delta must be >= 0".to_string()));
        }
        if !(0.0..=1.0).contains(&self.theta_quantile) {
            return Err(HarnessError::InvalidSpec(
                "theta_quantile must be in [0, 1]".to_string(),
            ));
        }
        Ok(())
    }
}

/// Per-trial log row. Unscreened trials carry no p-values.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub screened: bool,
    pub z_obs: Option<f64>,
    pub p_selective: Option<f64>,
    pub p_naive: Option<f64>,
    pub p_bonferroni: Option<f64>,
    pub p_wopp: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodStats {
    pub rejections: u64,
    pub screened: u64,
    /// Conditional rejection rate among screened trials; NaN when nothing
    /// screened.
    pub rate: f64,
    /// Binomial normal-approximation half width (1.96 SE).
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub trials: u64,
    pub screened: u64,
    /// False when no trial screened and the rates are undefined.
    pub rates_defined: bool,
    pub alpha: f64,
    pub methods: BTreeMap<String, MethodStats>,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Counter-based per-trial substream: reproducible regardless of execution
/// order or parallelism.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(trial)))
}

fn normal_matrix<R: Rng>(rng: &mut R, n: usize, d: usize, mean: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| mean + rng.sample::<f64, _>(StandardNormal))
}

fn run_trial(spec: &SyntheticSpec, trial: u64) -> Result<TrialRecord, HarnessError> {
    let mut rng = trial_rng(spec.seed, trial);
    let train = normal_matrix(&mut rng, spec.n, spec.d, 0.0);
    let test: DVector<f64> =
        DVector::from_fn(spec.d, |_, _| spec.delta + rng.sample::<f64, _>(StandardNormal));
    let data = Dataset::with_identity_sigma(train)?;

    // Threshold from the leave-one-out score distribution of a calibration
    // sample drawn independently of (train, test). Calibrating on the
    // training set itself would make theta vary along the conditioning line
    // (the screening events treat it as a constant) and bias the selective
    // p-values. With a latent feature map the calibration happens in latent
    // space, matching where screening runs.
    let calibration = normal_matrix(&mut rng, spec.n, spec.d, 0.0);
    let base_cfg = ScreeningConfig {
        k: spec.k.clone(),
        theta: 0.0,
        metric: Metric::SquaredL2,
    };
    let theta = match &spec.net {
        None => knnad::choose_theta(&calibration, &base_cfg, spec.theta_quantile)?,
        Some(net) => {
            let dt = net.output_dim();
            let mut latents = DMatrix::zeros(spec.n, dt);
            for i in 0..spec.n {
                let (lat, _) = net
                    .forward(&calibration.row(i).transpose())
                    .map_err(InferenceError::from)?;
                latents.row_mut(i).copy_from(&lat.transpose());
            }
            knnad::choose_theta(&latents, &base_cfg, spec.theta_quantile)?
        }
    };
    let config = ScreeningConfig {
        theta,
        ..base_cfg
    };

    match inference::selective_p(
        &test,
        &data,
        &config,
        spec.kind,
        spec.net.as_ref(),
        &spec.options,
    ) {
        Ok(report) => Ok(TrialRecord {
            trial,
            screened: true,
            z_obs: Some(report.z_obs),
            p_selective: report.p_selective,
            p_naive: report.p_naive,
            p_bonferroni: report.p_bonferroni,
            p_wopp: report.p_wopp,
        }),
        Err(InferenceError::NotACandidate) => Ok(TrialRecord {
            trial,
            screened: false,
            z_obs: None,
            p_selective: None,
            p_naive: None,
            p_bonferroni: None,
            p_wopp: None,
        }),
        Err(e) => Err(e.into()),
    }
}

fn aggregate(records: Vec<TrialRecord>, alpha: f64, trials: u64) -> ExperimentResult {
    let screened = records.iter().filter(|r| r.screened).count() as u64;
    let mut methods = BTreeMap::new();
    let extract: [(&str, fn(&TrialRecord) -> Option<f64>); 4] = [
        ("stat", |r| r.p_selective),
        ("wopp", |r| r.p_wopp),
        ("naive", |r| r.p_naive),
        ("bonferroni", |r| r.p_bonferroni),
    ];
    for (name, get) in extract {
        let rejections = records
            .iter()
            .filter(|r| r.screened && get(r).is_some_and(|p| p <= alpha))
            .count() as u64;
        let (rate, ci) = if screened > 0 {
            let rate = rejections as f64 / screened as f64;
            (rate, 1.96 * (rate * (1.0 - rate) / screened as f64).sqrt())
        } else {
            (f64::NAN, f64::NAN)
        };
        methods.insert(
            name.to_string(),
            MethodStats {
                rejections,
                screened,
                rate,
                ci_halfwidth: ci,
            },
        );
    }
    ExperimentResult {
        trials,
        screened,
        rates_defined: screened > 0,
        alpha,
        methods,
        records,
    }
}

fn run(spec: &SyntheticSpec, alpha: f64) -> Result<ExperimentResult, HarnessError> {
    spec.validate()?;
    let records: Result<Vec<TrialRecord>, HarnessError> = (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(spec, t))
        .collect();
    Ok(aggregate(records?, alpha, spec.trials))
}

/// Null experiment: every signal is zero; `spec.delta` is ignored.
pub fn run_null(spec: &SyntheticSpec, alpha: f64) -> Result<ExperimentResult, HarnessError> {
    let null_spec = SyntheticSpec {
        delta: 0.0,
        ..spec.clone()
    };
    run(&null_spec, alpha)
}

/// Power experiment: the test draw is shifted by delta in every coordinate.
pub fn run_power(spec: &SyntheticSpec, alpha: f64) -> Result<ExperimentResult, HarnessError> {
    if spec.delta <= 0.0 {
        return Err(HarnessError::InvalidSpec(
            "power experiment needs delta > 0".to_string(),
        ));
    }
    run(spec, alpha)
}

/// Load a CSV (header row required), keep the requested columns (or every
/// fully numeric column when none are named), and standardize each feature
/// to mean 0 and unit sample variance. Noise covariance defaults to the
/// identity on the standardized scale.
pub fn ingest_csv(
    path: &Path,
    feature_columns: Option<&[String]>,
) -> Result<Dataset, HarnessError> {
    let (matrix, _headers) = read_feature_matrix(path, feature_columns)?;
    let standardized = standardize(matrix, path)?;
    Dataset::with_identity_sigma(standardized).map_err(Into::into)
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Raw (unstandardized) numeric matrix plus the column names used.
pub fn read_feature_matrix(
    path: &Path,
    feature_columns: Option<&[String]>,
) -> Result<(DMatrix<f64>, Vec<String>), HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        rows.push(record.iter().map(|s| s.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(csv_err(path, "no data rows"));
    }
    let selected: Vec<usize> = match feature_columns {
        Some(cols) => cols
            .iter()
            .map(|c| {
                headers
                    .iter()
                    .position(|h| h == c)
                    .ok_or_else(|| csv_err(path, format!("missing column {c}")))
            })
            .collect::<Result<_, _>>()?,
        None => (0..headers.len())
            .filter(|&j| rows.iter().all(|r| r[j].parse::<f64>().is_ok()))
            .collect(),
    };
    if selected.is_empty() {
        return Err(csv_err(path, "no numeric feature columns"));
    }
    let mut matrix = DMatrix::zeros(rows.len(), selected.len());
    for (i, row) in rows.iter().enumerate() {
        for (jj, &j) in selected.iter().enumerate() {
            matrix[(i, jj)] = row[j].parse::<f64>().map_err(|_| {
                HarnessError::NonNumericCell {
                    row: i + 1,
                    column: headers[j].clone(),
                }
            })?;
        }
    }
    let names = selected.iter().map(|&j| headers[j].clone()).collect();
    Ok((matrix, names))
}

fn standardize(mut matrix: DMatrix<f64>, path: &Path) -> Result<DMatrix<f64>, HarnessError> {
    let n = matrix.nrows();
    for j in 0..matrix.ncols() {
        let col = matrix.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        if !(var > 0.0) {
            return Err(HarnessError::ZeroVarianceColumn(format!(
                "index {j} in {}",
                path.display()
            )));
        }
        let sd = var.sqrt();
        for i in 0..n {
            matrix[(i, j)] = (matrix[(i, j)] - mean) / sd;
        }
    }
    Ok(matrix)
}

/// Write a feature matrix as CSV with the given header names.
pub fn export_csv(path: &Path, matrix: &DMatrix<f64>, headers: &[String]) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer.write_record(headers).map_err(|e| csv_err(path, e))?;
    for i in 0..matrix.nrows() {
        let row: Vec<String> = (0..matrix.ncols())
            .map(|j| format!("{:.17e}", matrix[(i, j)]))
            .collect();
        writer.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| csv_err(path, e))?;
    Ok(())
}

/// Read a d x d covariance from a headerless CSV.
pub fn read_sigma_csv(path: &Path, d: usize) -> Result<DMatrix<f64>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        rows += 1;
        for field in record.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| csv_err(path, e))?,
            );
        }
    }
    if rows != d || values.len() != d * d {
        return Err(csv_err(
            path,
            format!("expected {d}x{d} covariance, got {rows} rows / {} values", values.len()),
        ));
    }
    Ok(DMatrix::from_row_slice(d, d, &values))
}

/// Row-major flattening of the p x p patch whose top-left corner is at
/// `position` (row, col).
pub fn patchify(
    image: &DMatrix<f64>,
    patch: usize,
    position: (usize, usize),
) -> Result<DVector<f64>, HarnessError> {
    let (r, c) = position;
    if r + patch > image.nrows() || c + patch > image.ncols() {
        return Err(HarnessError::PatchOutOfBounds {
            row: r,
            col: c,
            patch,
            h: image.nrows(),
            w: image.ncols(),
        });
    }
    let mut out = DVector::zeros(patch * patch);
    for i in 0..patch {
        for j in 0..patch {
            out[i * patch + j] = image[(r + i, c + j)];
        }
    }
    Ok(out)
}

/// Kolmogorov-Smirnov distance of a sample against Uniform(0,1) and the
/// asymptotic two-sided p-value.
pub fn ks_uniform(pvals: &[f64]) -> (f64, f64) {
    assert!(!pvals.is_empty());
    let mut sorted = pvals.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d_stat = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let upper = (i as f64 + 1.0) / n - x;
        let lower = x - i as f64 / n;
        d_stat = d_stat.max(upper).max(lower);
    }
    // Kolmogorov asymptotic tail with the finite-n adjustment
    let t = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d_stat;
    let mut p = 0.0;
    for j in 1..101 {
        let term = 2.0 * (-1.0f64).powi(j - 1) * (-2.0 * (j as f64) * (j as f64) * t * t).exp();
        p += term;
    }
    (d_stat, p.clamp(0.0, 1.0))
}
