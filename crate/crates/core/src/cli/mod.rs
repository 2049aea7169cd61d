//! Command-line driver: simulation studies, fitting and evaluation on
//! delimited data, and loss-surface tables.

pub mod config;
pub mod io;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Points, SpatialDataset};
use crate::error::{GpError, Result};
use crate::gp::PosteriorSummary;
use crate::kernel::MaternParams;
use crate::loss::{loss_surface_grid, LossKind, LossSpec};
use crate::metrics::{EvalReport, Z_95};
use crate::simulate::{derive_seed, inject_outliers_range, run_study, split_train_test, Study};
use crate::train::{fit, FittedModel, TrainConfig};

pub use config::{ExperimentConfig, Mode};
pub use io::{load_csv, minmax_scale, write_atomic, write_csv, LoadedCsv, MinMaxScaler};

pub const REPORT_COLUMNS: [&str; 10] = [
    "regime",
    "loss",
    "nu_hat",
    "sigma2_hat",
    "rmse",
    "crps",
    "mad",
    "mdv",
    "median_ci_size",
    "coverage",
];

#[derive(Debug, Parser)]
#[command(
    name = "muygps",
    version,
    about = "Nearest-neighbor Gaussian process regression with robust leave-one-out training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a seeded simulation study and write aggregate and per-replication reports.
    Simulate(Overrides),
    /// Fit one model on a delimited data file.
    Fit(Overrides),
    /// Predict at query points with a fitted model.
    Predict(Overrides),
    /// Score a fitted model on a labelled data file.
    Eval(Overrides),
    /// Tabulate a single-point loss over residuals and variances.
    LossSurface(Overrides),
    /// Run the mode given by `--mode` or by the config file.
    Run {
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Points per side of the simulated lattice.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Smoothness of the simulated field.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Length scale of both the simulated field and the model.
    #[arg(long)]
    pub ell: Option<f64>,
    #[arg(long, value_parser = ["mse", "lool", "ph", "looph"])]
    pub loss: Option<String>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_parser = ["regular", "hybrid", "downsample"])]
    pub regime: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub kstar: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub outlier_frac: Option<f64>,
    #[arg(long)]
    pub outlier_factor: Option<f64>,
}

impl Overrides {
    /// Loads the config file, if any, and applies the flags on top.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.out_dir = v.clone();
        }
        if let Some(v) = self.grid {
            c.sim.n_per_dim = v;
        }
        if let Some(v) = self.nu {
            c.sim.nu = v;
        }
        if let Some(v) = self.ell {
            c.sim.ell = v;
            c.train.ell = v;
        }
        if let Some(v) = &self.loss {
            c.train.losses = vec![v.clone()];
            c.surface.loss = v.clone();
        }
        if let Some(v) = self.delta {
            c.train.delta = v;
            c.surface.deltas = vec![v];
        }
        if let Some(v) = &self.regime {
            c.train.regimes = vec![v.clone()];
        }
        if let Some(v) = self.k {
            c.train.k = v;
        }
        if let Some(v) = self.batch {
            c.train.batch = v;
        }
        if let Some(v) = self.kstar {
            c.train.k_star = Some(v);
        }
        if let Some(v) = self.iters {
            c.train.n_iterations = v;
        }
        if let Some(v) = self.outlier_frac {
            c.sim.outlier_frac = v;
            c.data.outlier_frac = v;
        }
        if let Some(v) = self.outlier_factor {
            c.sim.outlier_factor = v;
            c.data.outlier_factor_range = [v, v];
        }
        Ok(c)
    }
}

/// Process exit status for an error category.
pub fn exit_code(e: &GpError) -> i32 {
    match e {
        GpError::Config(_) | GpError::InvalidInput(_) => 2,
        GpError::Data(_) => 3,
        GpError::Numerical(_) | GpError::OptimizationFailed(_) => 4,
        GpError::Io(_) => 5,
    }
}

/// Parses `args` (including the program name), runs, and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = (|| {
        let (mode, overrides) = match &cli.command {
            Command::Simulate(o) => (Some(Mode::Simulate), o),
            Command::Fit(o) => (Some(Mode::Fit), o),
            Command::Predict(o) => (Some(Mode::Predict), o),
            Command::Eval(o) => (Some(Mode::Eval), o),
            Command::LossSurface(o) => (Some(Mode::LossSurface), o),
            Command::Run { mode, overrides } => (*mode, overrides),
        };
        let config = overrides.resolve()?;
        let mode = mode.or(config.mode).ok_or_else(|| {
            GpError::Config("no mode given; pass --mode or set `mode` in the config".into())
        })?;
        run(&config, mode)
    })();
    match result {
        Ok(written) => {
            for p in written {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one mode and returns the files written.
pub fn run(config: &ExperimentConfig, mode: Mode) -> Result<Vec<PathBuf>> {
    let effective = config.effective(mode)?;
    std::fs::create_dir_all(&effective.out_dir)?;
    let mut written = match mode {
        Mode::Simulate => run_simulate(&effective)?,
        Mode::Fit => run_fit(&effective)?,
        Mode::Predict => run_predict(&effective, false)?,
        Mode::Eval => run_predict(&effective, true)?,
        Mode::LossSurface => run_surface(&effective)?,
    };
    let path = effective.out_dir.join("effective_config.toml");
    write_atomic(&path, effective.to_toml()?.as_bytes())?;
    written.push(path);
    Ok(written)
}

fn num(v: f64) -> String {
    v.to_string()
}

fn report_fields(r: &EvalReport) -> [String; 6] {
    [r.rmse, r.crps, r.mad, r.mdv, r.median_ci_size, r.coverage].map(num)
}

fn write_study(study: &Study, config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = &config.out_dir;
    let report = out.join("report.csv");
    let rows = study.aggregate.iter().map(|a| {
        let mut row = vec![
            a.regime.to_string(),
            a.loss.to_string(),
            num(a.nu_hat),
            num(a.sigma2_hat),
        ];
        row.extend(report_fields(&a.report));
        row
    });
    write_atomic(&report, &io::csv_bytes(&REPORT_COLUMNS, rows)?)?;

    let reps = out.join("replications.csv");
    let mut header = vec!["replicate", "seed", "n_train", "n_test", "n_outliers"];
    header.extend(REPORT_COLUMNS);
    header.push("error");
    let mut rows = Vec::new();
    for r in &study.replications {
        for m in &r.models {
            let mut row = vec![
                r.replicate.to_string(),
                r.seed.to_string(),
                r.n_train.to_string(),
                r.n_test.to_string(),
                r.n_outliers.to_string(),
                m.regime.to_string(),
                m.loss.to_string(),
            ];
            match &m.result {
                Ok(s) => {
                    row.extend([num(s.nu_hat), num(s.sigma2_hat)]);
                    row.extend(report_fields(&s.report));
                    row.push(String::new());
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n(String::new(), 8));
                    row.push(e.clone());
                }
            }
            rows.push(row);
        }
    }
    write_atomic(&reps, &io::csv_bytes(&header, rows)?)?;
    let mut written = vec![report, reps];

    if config.sim.diagnostics {
        let path = out.join("diagnostics.csv");
        let header = [
            "replicate",
            "regime",
            "loss",
            "point",
            "x0",
            "x1",
            "truth",
            "mean",
            "variance",
            "residual",
            "ci_half_width",
            "excess",
        ];
        let rows = study.replications.iter().flat_map(|r| {
            r.diagnostics.iter().map(move |d| {
                let m = &r.models[d.model];
                let mut row = vec![
                    d.replicate.to_string(),
                    m.regime.to_string(),
                    m.loss.to_string(),
                    d.point.to_string(),
                ];
                row.extend(d.coords.iter().map(|&v| num(v)));
                row.extend(
                    [
                        d.truth,
                        d.mean,
                        d.variance,
                        d.residual,
                        d.ci_half_width,
                        d.excess,
                    ]
                    .map(num),
                );
                row
            })
        });
        write_atomic(&path, &io::csv_bytes(&header, rows)?)?;
        written.push(path);
    }
    Ok(written)
}

fn run_simulate(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let sim = config.sim_config()?;
    let cfgs = config.train_configs()?;
    let study = run_study(&sim, &cfgs, config.sim.replications)?;
    for a in &study.aggregate {
        log::info!(
            "{} {}: nu_hat {:.4} rmse {:.4} coverage {:.3} ({} ok, {} failed)",
            a.regime,
            a.loss,
            a.nu_hat,
            a.report.rmse,
            a.report.coverage,
            a.n_ok,
            a.n_failed
        );
    }
    write_study(&study, config)
}

/// On-disk form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub regime: String,
    pub loss: String,
    pub delta: f64,
    pub sigma2: f64,
    pub nu: f64,
    pub ell: f64,
    pub tau2: f64,
    pub k: usize,
    pub k_star: usize,
    pub n_iterations: usize,
    pub predict_seed: u64,
    pub features: Vec<String>,
    pub target: String,
    pub nu_samples: Vec<f64>,
    pub warnings: Vec<String>,
    pub scaler: Option<MinMaxScaler>,
}

impl ModelFile {
    pub fn from_model(
        model: &FittedModel,
        data: &SpatialDataset,
        scaler: Option<MinMaxScaler>,
        predict_seed: u64,
    ) -> Self {
        ModelFile {
            regime: model.regime.to_string(),
            loss: model.loss.kind().to_string(),
            delta: model.loss.delta(),
            sigma2: model.params.sigma2(),
            nu: model.params.nu(),
            ell: model.params.ell(),
            tau2: model.params.tau2(),
            k: model.k,
            k_star: model.k_star,
            n_iterations: model.n_iterations,
            predict_seed,
            features: data.feature_names.clone().unwrap_or_default(),
            target: data.target_name.clone().unwrap_or_default(),
            nu_samples: model.nu_samples.clone(),
            warnings: model.warnings.clone(),
            scaler,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| GpError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_model(&self) -> Result<FittedModel> {
        Ok(FittedModel {
            params: MaternParams::new(self.sigma2, self.nu, self.ell, self.tau2)?,
            regime: self.regime.parse()?,
            loss: LossSpec::new(self.loss.parse::<LossKind>()?, self.delta)?,
            k: self.k,
            k_star: self.k_star,
            n_iterations: self.n_iterations,
            trace: Vec::new(),
            nu_samples: self.nu_samples.clone(),
            warnings: self.warnings.clone(),
        })
    }
}

fn single_config(config: &ExperimentConfig) -> Result<TrainConfig> {
    let cfgs = config.train_configs()?;
    match cfgs.as_slice() {
        [one] => Ok(*one),
        _ => Err(GpError::Config(format!(
            "fit needs exactly one regime and one loss, got {} combinations",
            cfgs.len()
        ))),
    }
}

fn run_fit(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let d = &config.data;
    let path = d
        .path
        .as_ref()
        .ok_or_else(|| GpError::Config("fit needs data.path".into()))?;
    if d.target.is_empty() {
        return Err(GpError::Config("fit needs data.target".into()));
    }
    let cfg = single_config(config)?;
    let loaded = load_csv(path, &d.features, &d.target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let (train, test) =
        split_train_test(&loaded.dataset, d.train_frac, &mut rng).map_err(data_error)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));
    let [lo, hi] = d.outlier_factor_range;
    let (train, outliers) =
        inject_outliers_range(&train, d.outlier_frac, (lo, hi), &mut rng).map_err(config_error)?;
    if !outliers.is_empty() {
        log::info!(
            "scaled {} training targets by factors in [{lo}, {hi}]",
            outliers.len()
        );
    }
    let (scaled, scaler) = if d.scale_features {
        let (s, sc) = minmax_scale(&train)?;
        (s, Some(sc))
    } else {
        (train.clone(), None)
    };
    let cfg = TrainConfig {
        seed: derive_seed(config.seed, 3),
        ..cfg
    };
    let model = fit(&scaled, &cfg)?;
    log::info!(
        "fitted nu {:.4}, sigma2 {:.6}",
        model.params.nu(),
        model.params.sigma2()
    );
    let file = ModelFile::from_model(&model, &train, scaler, derive_seed(config.seed, 4));
    let out = &config.out_dir;
    let model_path = out.join("model.toml");
    let text = toml::to_string(&file).map_err(|e| GpError::Config(e.to_string()))?;
    write_atomic(&model_path, text.as_bytes())?;
    let train_path = out.join("train.csv");
    let test_path = out.join("test.csv");
    write_csv(&train_path, &train)?;
    write_csv(&test_path, &test)?;
    Ok(vec![model_path, train_path, test_path])
}

fn resolve_input(given: &Option<PathBuf>, out: &Path, default: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| out.join(default))
}

fn load_features(path: &Path, features: &[String]) -> Result<Points> {
    // Reuses the first feature as a stand-in target so rows only need features.
    Ok(load_csv(path, features, &features[0])?.dataset.coords)
}

fn run_predict(config: &ExperimentConfig, evaluate: bool) -> Result<Vec<PathBuf>> {
    let out = &config.out_dir;
    let p = &config.predict;
    let file = ModelFile::load(&resolve_input(&p.model, out, "model.toml"))?;
    if file.features.is_empty() {
        return Err(GpError::Config(
            "model file lists no feature columns".into(),
        ));
    }
    let model = file.to_model()?;
    let train = load_csv(
        &resolve_input(&p.train, out, "train.csv"),
        &file.features,
        &file.target,
    )?
    .dataset;
    let query_path = resolve_input(&p.queries, out, "test.csv");
    let (queries, truths) = if evaluate {
        let d = load_csv(&query_path, &file.features, &file.target)?.dataset;
        (d.coords, Some(d.targets))
    } else {
        (load_features(&query_path, &file.features)?, None)
    };
    let (train_s, queries_s) = match &file.scaler {
        Some(s) => (s.transform(&train)?, s.transform_points(&queries)?),
        None => (train, queries.clone()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(file.predict_seed);
    let post = model.predict(&queries_s, &train_s, &mut rng)?;
    match truths {
        Some(truths) => {
            let report = EvalReport::compute(&post, &truths)?;
            let mut row = vec![
                file.regime.clone(),
                file.loss.clone(),
                num(file.nu),
                num(file.sigma2),
            ];
            row.extend(report_fields(&report));
            let path = out.join("report.csv");
            write_atomic(&path, &io::csv_bytes(&REPORT_COLUMNS, [row])?)?;
            Ok(vec![path])
        }
        None => {
            let path = out.join("predictions.csv");
            write_atomic(&path, &prediction_table(&file.features, &queries, &post)?)?;
            Ok(vec![path])
        }
    }
}

fn prediction_table(
    features: &[String],
    queries: &Points,
    post: &[PosteriorSummary],
) -> Result<Vec<u8>> {
    let mut header = features.to_vec();
    header.extend(["mean", "variance", "lower", "upper"].map(String::from));
    let rows = queries.rows().zip(post).map(|(q, p)| {
        let half = Z_95 * p.variance.sqrt();
        let mut row: Vec<String> = q.iter().map(|&v| num(v)).collect();
        row.extend([p.mean, p.variance, p.mean - half, p.mean + half].map(num));
        row
    });
    io::csv_bytes(&header, rows)
}

fn run_surface(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let s = &config.surface;
    let kind: LossKind = s.loss.parse()?;
    if s.residual_steps < 2 || !(s.residual_max > s.residual_min) {
        return Err(GpError::Config(
            "surface needs residual_max > residual_min and at least 2 steps".into(),
        ));
    }
    if s.deltas.is_empty() {
        return Err(GpError::Config("surface.deltas must be nonempty".into()));
    }
    let step = (s.residual_max - s.residual_min) / (s.residual_steps - 1) as f64;
    let residuals: Vec<f64> = (0..s.residual_steps)
        .map(|i| s.residual_min + step * i as f64)
        .collect();
    let mut rows = Vec::new();
    for &delta in &s.deltas {
        let spec = LossSpec::new(kind, delta).map_err(config_error)?;
        for r in loss_surface_grid(&spec, &residuals, &s.variances).map_err(config_error)? {
            rows.push([r.delta, r.residual, r.variance, r.loss].map(num).to_vec());
        }
    }
    let path = config.out_dir.join("loss_surface.csv");
    write_atomic(
        &path,
        &io::csv_bytes(&["delta", "residual", "variance", "loss"], rows)?,
    )?;
    Ok(vec![path])
}

fn config_error(e: GpError) -> GpError {
    match e {
        GpError::InvalidInput(msg) => GpError::Config(msg),
        other => other,
    }
}

fn data_error(e: GpError) -> GpError {
    match e {
        GpError::InvalidInput(msg) => GpError::Data(msg),
        other => other,
    }
}
