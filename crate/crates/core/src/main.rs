//! Command-line front end. All statistical work happens in the library;
//! this binary only wires config files and flags to it, formats JSON, and
//! maps failures to exit codes (2 config, 3 data, 4 numerical).

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;
use statknnad::harness::{self, HarnessError, SyntheticSpec};
use statknnad::inference::{self, InferenceError, InferenceOptions};
use statknnad::knnad::{self, KSpec, Metric, ScreeningConfig};
use statknnad::model::{Dataset, StatisticKind};
use statknnad::plnet::PLNetwork;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "statknnad", version, about = "kNN anomaly detection with selective p-values")]
struct Cli {
    /// TOML config file; explicit flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Candidate list for data-driven k, e.g. 1,2,5,10
    #[arg(long, global = true, value_delimiter = ',')]
    k_candidates: Option<Vec<usize>>,
    #[arg(long, global = true)]
    theta_quantile: Option<f64>,
    /// Any of: stat, wopp, naive, bonferroni, opa1, opa2
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, global = true)]
    metric: Option<String>,
    /// l1 or image-mean
    #[arg(long, global = true)]
    statistic: Option<String>,
    /// Piecewise-linear network JSON for the latent-space pipeline
    #[arg(long, global = true)]
    net: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Screen and test instances from CSV files
    Detect {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Optional d x d covariance CSV (headerless); disables standardization
        #[arg(long)]
        sigma: Option<PathBuf>,
        /// Fixed screening threshold; calibrated from --theta-quantile when absent
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
    },
    /// Synthetic null / power experiment grids
    Experiment {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        delta: Option<f64>,
        /// Parameter to sweep: n, d, k, or delta
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long, value_delimiter = ',')]
        sweep_values: Option<Vec<f64>>,
    },
    /// Calibrate the screening threshold from a dataset
    Theta {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
    },
    /// Generate a random piecewise-linear network as JSON
    NetGen {
        /// Layer widths, e.g. 4,8,3
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long)]
        with_pool: bool,
    },
}

/// Mirror of the flag set for TOML files. Flags win over file values.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    alpha: Option<f64>,
    k: Option<usize>,
    k_candidates: Option<Vec<usize>>,
    theta_quantile: Option<f64>,
    methods: Option<Vec<String>>,
    metric: Option<String>,
    statistic: Option<String>,
    net: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    data: Option<PathBuf>,
    test: Option<PathBuf>,
    sigma: Option<PathBuf>,
    theta: Option<f64>,
    columns: Option<Vec<String>>,
    n: Option<usize>,
    d: Option<usize>,
    trials: Option<u64>,
    delta: Option<f64>,
    sweep: Option<String>,
    sweep_values: Option<Vec<f64>>,
    dims: Option<Vec<usize>>,
    with_pool: Option<bool>,
}

enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidSpec(_) => CliError::Config(e.to_string()),
            HarnessError::Csv { .. }
            | HarnessError::NonNumericCell { .. }
            | HarnessError::ZeroVarianceColumn(_)
            | HarnessError::PatchOutOfBounds { .. } => CliError::Data(e.to_string()),
            HarnessError::Model(_) => CliError::Data(e.to_string()),
            HarnessError::Screening(_) => CliError::Config(e.to_string()),
            HarnessError::Inference(inner) => CliError::from(inner),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Numerical(_) | InferenceError::Truncation(_) => {
                CliError::Numerical(e.to_string())
            }
            InferenceError::Unsupported(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// Effective settings after merging defaults, config file, and flags.
struct Resolved {
    seed: u64,
    alpha: f64,
    k: KSpec,
    theta_quantile: f64,
    methods: BTreeSet<String>,
    kind: StatisticKind,
    net: Option<PLNetwork>,
    net_path: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    options: InferenceOptions,
    file: FileConfig,
}

const METHOD_NAMES: [&str; 6] = ["stat", "wopp", "naive", "bonferroni", "opa1", "opa2"];

fn resolve(cli: &Cli) -> Result<Resolved, CliError> {
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let alpha = cli.alpha.or(file.alpha).unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Config(format!("alpha must be in (0,1), got {alpha}")));
    }
    let theta_quantile = cli.theta_quantile.or(file.theta_quantile).unwrap_or(0.95);
    if !(0.0..=1.0).contains(&theta_quantile) {
        return Err(CliError::Config(format!(
            "theta-quantile must be in [0,1], got {theta_quantile}"
        )));
    }

    let k = match (
        cli.k_candidates.clone().or_else(|| file.k_candidates.clone()),
        cli.k.or(file.k),
    ) {
        (Some(cands), _) => KSpec::Candidates(cands),
        (None, Some(k)) => KSpec::Fixed(k),
        (None, None) => KSpec::Fixed(1),
    };
    if let KSpec::Candidates(cands) = &k {
        if cands.is_empty() || cands.iter().any(|&c| c == 0) {
            return Err(CliError::Config("k candidates must be positive".to_string()));
        }
    } else if let KSpec::Fixed(0) = k {
        return Err(CliError::Config("k must be positive".to_string()));
    }

    match cli
        .metric
        .as_deref()
        .or(file.metric.as_deref())
        .unwrap_or("squared-l2")
    {
        "squared-l2" | "l2" => {}
        other => return Err(CliError::Config(format!("unknown metric {other}"))),
    }

    let kind = match cli
        .statistic
        .as_deref()
        .or(file.statistic.as_deref())
        .unwrap_or("l1")
    {
        "l1" => StatisticKind::L1Norm,
        "image-mean" => StatisticKind::ImageMean,
        other => return Err(CliError::Config(format!("unknown statistic {other}"))),
    };

    let methods: BTreeSet<String> = match cli.methods.clone().or_else(|| file.methods.clone()) {
        Some(list) => {
            for m in &list {
                if !METHOD_NAMES.contains(&m.as_str()) {
                    return Err(CliError::Config(format!("unknown method {m}")));
                }
            }
            list.into_iter().collect()
        }
        None => ["stat", "wopp", "naive", "bonferroni"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    let options = InferenceOptions {
        omit_knnad_events: methods.contains("opa1"),
        omit_dnn_events: methods.contains("opa2"),
    };

    let net_path = cli.net.clone().or_else(|| file.net.clone());
    let net = match &net_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            Some(
                PLNetwork::from_json(&text)
                    .map_err(|e| CliError::Data(format!("bad network {}: {e}", path.display())))?,
            )
        }
        None => None,
    };

    Ok(Resolved {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        alpha,
        k,
        theta_quantile,
        methods,
        kind,
        net,
        net_path,
        out_dir: cli.out_dir.clone().or_else(|| file.out_dir.clone()),
        options,
        file,
    })
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

/// Standardize train columns to mean 0 / unit sample variance and apply the
/// same affine transform to the test rows.
fn standardize_pair(
    train: &mut DMatrix<f64>,
    test: &mut DMatrix<f64>,
) -> Result<(), CliError> {
    let n = train.nrows();
    if n < 2 {
        return Err(CliError::Data("need at least 2 training rows".to_string()));
    }
    for j in 0..train.ncols() {
        let col = train.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        if !(var > 0.0) {
            return Err(CliError::Data(format!("zero-variance training column {j}")));
        }
        let sd = var.sqrt();
        for i in 0..n {
            train[(i, j)] = (train[(i, j)] - mean) / sd;
        }
        for i in 0..test.nrows() {
            test[(i, j)] = (test[(i, j)] - mean) / sd;
        }
    }
    Ok(())
}

fn filtered_pvalues(
    report: &inference::PValueReport,
    methods: &BTreeSet<String>,
) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    let pairs = [
        ("stat", report.p_selective),
        ("wopp", report.p_wopp),
        ("naive", report.p_naive),
        ("bonferroni", report.p_bonferroni),
    ];
    for (name, value) in pairs {
        if methods.contains(name) {
            map.insert(format!("p_{name}"), json!(value));
        }
    }
    serde_json::Value::Object(map)
}

fn cmd_detect(
    resolved: &Resolved,
    data: Option<PathBuf>,
    test: Option<PathBuf>,
    sigma: Option<PathBuf>,
    theta: Option<f64>,
    columns: Option<Vec<String>>,
) -> Result<serde_json::Value, CliError> {
    let data = data
        .or_else(|| resolved.file.data.clone())
        .ok_or_else(|| CliError::Config("detect needs --data".to_string()))?;
    let test = test
        .or_else(|| resolved.file.test.clone())
        .ok_or_else(|| CliError::Config("detect needs --test".to_string()))?;
    let sigma = sigma.or_else(|| resolved.file.sigma.clone());
    let theta = theta.or(resolved.file.theta);
    let columns = columns.or_else(|| resolved.file.columns.clone());

    let (mut train, names) =
        harness::read_feature_matrix(&data, columns.as_deref()).map_err(CliError::from)?;
    let (mut tests, _) =
        harness::read_feature_matrix(&test, Some(&names)).map_err(CliError::from)?;

    let dataset = match &sigma {
        Some(path) => {
            // user-supplied covariance refers to the raw scale, so skip
            // standardization
            let sig = harness::read_sigma_csv(path, train.ncols()).map_err(CliError::from)?;
            Dataset::new(train, sig).map_err(|e| CliError::Data(e.to_string()))?
        }
        None => {
            standardize_pair(&mut train, &mut tests)?;
            Dataset::with_identity_sigma(train).map_err(|e| CliError::Data(e.to_string()))?
        }
    };

    let base_cfg = ScreeningConfig {
        k: resolved.k.clone(),
        theta: 0.0,
        metric: Metric::SquaredL2,
    };
    let theta = match theta {
        Some(t) => t,
        None => {
            let scores = match &resolved.net {
                None => dataset.train().clone(),
                Some(net) => {
                    let dt = net.output_dim();
                    let mut latents = DMatrix::zeros(dataset.n(), dt);
                    for i in 0..dataset.n() {
                        let (lat, _) = net
                            .forward(&dataset.instance(i))
                            .map_err(|e| CliError::Data(e.to_string()))?;
                        latents.row_mut(i).copy_from(&lat.transpose());
                    }
                    latents
                }
            };
            knnad::choose_theta(&scores, &base_cfg, resolved.theta_quantile)
                .map_err(|e| CliError::Data(e.to_string()))?
        }
    };
    let config = ScreeningConfig { theta, ..base_cfg };

    let mut instances = Vec::new();
    for i in 0..tests.nrows() {
        let y: DVector<f64> = tests.row(i).transpose();
        match inference::selective_p(
            &y,
            &dataset,
            &config,
            resolved.kind,
            resolved.net.as_ref(),
            &resolved.options,
        ) {
            Ok(report) => {
                let verdict = match report.p_selective {
                    Some(p) if p <= resolved.alpha => "anomaly",
                    Some(_) => "normal",
                    None => "normal",
                };
                instances.push(json!({
                    "index": i,
                    "screened": true,
                    "verdict": verdict,
                    "z_obs": report.z_obs,
                    "sigma2": report.sigma2,
                    "z_region": report.z_region,
                    "n_inequalities": report.n_inequalities,
                    "p_values": filtered_pvalues(&report, &resolved.methods),
                }));
            }
            Err(InferenceError::NotACandidate) => {
                instances.push(json!({
                    "index": i,
                    "screened": false,
                    "verdict": "not-a-candidate",
                }));
            }
            Err(e) => return Err(e.into()),
        }
    }

    Ok(json!({
        "command": "detect",
        "config": {
            "alpha": resolved.alpha,
            "k": k_json(&resolved.k),
            "theta": theta,
            "theta_quantile": resolved.theta_quantile,
            "statistic": kind_name(resolved.kind),
            "metric": "squared-l2",
            "net": resolved.net_path.as_ref().map(|p| p.display().to_string()),
            "methods": resolved.methods,
            "columns": names,
        },
        "instances": instances,
    }))
}

fn k_json(k: &KSpec) -> serde_json::Value {
    match k {
        KSpec::Fixed(k) => json!(k),
        KSpec::Candidates(c) => json!(c),
    }
}

fn kind_name(kind: StatisticKind) -> &'static str {
    match kind {
        StatisticKind::L1Norm => "l1",
        StatisticKind::ImageMean => "image-mean",
    }
}

fn spec_with(base: &SyntheticSpec, sweep: Option<&str>, value: f64) -> Result<SyntheticSpec, CliError> {
    let mut spec = base.clone();
    match sweep {
        None => {}
        Some("n") => spec.n = value as usize,
        Some("d") => spec.d = value as usize,
        Some("k") => spec.k = KSpec::Fixed(value as usize),
        Some("delta") => spec.delta = value,
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown sweep parameter {other} (expected n, d, k, or delta)"
            )))
        }
    }
    Ok(spec)
}

fn cmd_experiment(
    resolved: &Resolved,
    n: Option<usize>,
    d: Option<usize>,
    trials: Option<u64>,
    delta: Option<f64>,
    sweep: Option<String>,
    sweep_values: Option<Vec<f64>>,
) -> Result<serde_json::Value, CliError> {
    let base = SyntheticSpec {
        n: n.or(resolved.file.n).unwrap_or(100),
        d: d.or(resolved.file.d).unwrap_or(2),
        k: resolved.k.clone(),
        delta: delta.or(resolved.file.delta).unwrap_or(0.0),
        trials: trials.or(resolved.file.trials).unwrap_or(1000),
        seed: resolved.seed,
        theta_quantile: resolved.theta_quantile,
        kind: resolved.kind,
        net: resolved.net.clone(),
        options: resolved.options.clone(),
    };
    let sweep = sweep.or_else(|| resolved.file.sweep.clone());
    let sweep_values = sweep_values.or_else(|| resolved.file.sweep_values.clone());
    let points: Vec<Option<f64>> = match (&sweep, &sweep_values) {
        (Some(_), Some(values)) if !values.is_empty() => {
            values.iter().copied().map(Some).collect()
        }
        (Some(_), _) => {
            return Err(CliError::Config("--sweep needs --sweep-values".to_string()))
        }
        (None, _) => vec![None],
    };

    let mut runs = Vec::new();
    let mut plot_rows = Vec::new();
    for value in &points {
        let spec = match value {
            Some(v) => spec_with(&base, sweep.as_deref(), *v)?,
            None => base.clone(),
        };
        let result = if spec.delta > 0.0 {
            harness::run_power(&spec, resolved.alpha)
        } else {
            harness::run_null(&spec, resolved.alpha)
        }
        .map_err(CliError::from)?;

        let x_name = sweep.as_deref().unwrap_or("delta");
        let x_value = match sweep.as_deref() {
            Some("n") => spec.n as f64,
            Some("d") => spec.d as f64,
            Some("k") => spec.k.max_k() as f64,
            _ => spec.delta,
        };
        for (method, stats) in &result.methods {
            if !resolved.methods.contains(method) && method != "stat" {
                continue;
            }
            plot_rows.push((
                x_name.to_string(),
                x_value,
                method.clone(),
                stats.rate,
                stats.ci_halfwidth,
                stats.screened,
                result.trials,
            ));
        }

        if let Some(dir) = &resolved.out_dir {
            ensure_out_dir(dir)?;
            let tag = match value {
                Some(v) => format!("{x_name}_{v}"),
                None => "single".to_string(),
            };
            let path = dir.join(format!("trials_{tag}.csv"));
            write_trials_csv(&path, &result.records)?;
        }

        runs.push(json!({
            "spec": {
                "n": spec.n,
                "d": spec.d,
                "k": k_json(&spec.k),
                "delta": spec.delta,
                "trials": spec.trials,
                "seed": spec.seed,
                "theta_quantile": spec.theta_quantile,
                "statistic": kind_name(spec.kind),
                "latent": spec.net.is_some(),
            },
            "mode": if spec.delta > 0.0 { "power" } else { "null" },
            "screened": result.screened,
            "rates_defined": result.rates_defined,
            "methods": result.methods,
        }));
    }

    let report = json!({
        "command": "experiment",
        "alpha": resolved.alpha,
        "seed": resolved.seed,
        "sweep": sweep,
        "runs": runs,
    });

    if let Some(dir) = &resolved.out_dir {
        ensure_out_dir(dir)?;
        let results_path = dir.join("results.json");
        std::fs::write(&results_path, serde_json::to_string_pretty(&report).unwrap())
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", results_path.display())))?;
        let plot_path = dir.join("plot_data.csv");
        let mut writer = csv::Writer::from_path(&plot_path)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", plot_path.display())))?;
        writer
            .write_record(["x_name", "x_value", "method", "rate", "ci_halfwidth", "screened", "trials"])
            .map_err(|e| CliError::Data(e.to_string()))?;
        for (xn, xv, method, rate, ci, screened, trials) in &plot_rows {
            writer
                .write_record([
                    xn.clone(),
                    format!("{xv}"),
                    method.clone(),
                    format!("{rate}"),
                    format!("{ci}"),
                    format!("{screened}"),
                    format!("{trials}"),
                ])
                .map_err(|e| CliError::Data(e.to_string()))?;
        }
        writer.flush().map_err(|e| CliError::Data(e.to_string()))?;
    }

    Ok(report)
}

fn write_trials_csv(path: &Path, records: &[harness::TrialRecord]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record([
            "trial",
            "screened",
            "z_obs",
            "p_selective",
            "p_naive",
            "p_bonferroni",
            "p_wopp",
        ])
        .map_err(|e| CliError::Data(e.to_string()))?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in records {
        writer
            .write_record([
                r.trial.to_string(),
                r.screened.to_string(),
                fmt(r.z_obs),
                fmt(r.p_selective),
                fmt(r.p_naive),
                fmt(r.p_bonferroni),
                fmt(r.p_wopp),
            ])
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}

fn cmd_theta(
    resolved: &Resolved,
    data: Option<PathBuf>,
    columns: Option<Vec<String>>,
) -> Result<serde_json::Value, CliError> {
    let data = data
        .or_else(|| resolved.file.data.clone())
        .ok_or_else(|| CliError::Config("theta needs --data".to_string()))?;
    let columns = columns.or_else(|| resolved.file.columns.clone());
    let dataset = harness::ingest_csv(&data, columns.as_deref()).map_err(CliError::from)?;
    let config = ScreeningConfig {
        k: resolved.k.clone(),
        theta: 0.0,
        metric: Metric::SquaredL2,
    };
    let theta = knnad::choose_theta(dataset.train(), &config, resolved.theta_quantile)
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(json!({
        "command": "theta",
        "theta": theta,
        "quantile": resolved.theta_quantile,
        "n": dataset.n(),
        "d": dataset.d(),
        "k": k_json(&resolved.k),
    }))
}

fn cmd_net_gen(
    resolved: &Resolved,
    dims: Option<Vec<usize>>,
    with_pool: bool,
) -> Result<serde_json::Value, CliError> {
    let dims = dims
        .or_else(|| resolved.file.dims.clone())
        .unwrap_or_else(|| vec![2, 8, 2]);
    let with_pool = with_pool || resolved.file.with_pool.unwrap_or(false);
    if dims.len() < 2 || dims.iter().any(|&w| w == 0) {
        return Err(CliError::Config(
            "--dims needs at least two positive layer widths".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(resolved.seed);
    let net = PLNetwork::random_mlp(&mut rng, &dims, with_pool)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let text = net.to_json();
    if let Some(dir) = &resolved.out_dir {
        ensure_out_dir(dir)?;
        let path = dir.join("net.json");
        std::fs::write(&path, &text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(serde_json::from_str(&text).expect("network serializes to valid JSON"))
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let resolved = resolve(&cli)?;
    match cli.cmd {
        Cmd::Detect {
            data,
            test,
            sigma,
            theta,
            columns,
        } => cmd_detect(&resolved, data, test, sigma, theta, columns),
        Cmd::Experiment {
            n,
            d,
            trials,
            delta,
            sweep,
            sweep_values,
        } => cmd_experiment(&resolved, n, d, trials, delta, sweep, sweep_values),
        Cmd::Theta { data, columns } => cmd_theta(&resolved, data, columns),
        Cmd::NetGen { dims, with_pool } => cmd_net_gen(&resolved, dims, with_pool),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
        }
        Err(e) => {
            let payload = json!({
                "error": { "code": e.code(), "kind": e.kind(), "message": e.message() }
            });
            eprintln!("{payload}");
            std::process::exit(e.code());
        }
    }
}
