//! Experiment configuration file (TOML) with defaults for every field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};
use crate::kernel::MaternParams;
use crate::loss::{LossKind, LossSpec, DEFAULT_DELTA};
use crate::simulate::SimConfig;
use crate::train::{self, Regime, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Fit,
    Predict,
    Eval,
    LossSurface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub sim: SimSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub predict: PredictSection,
    pub surface: SurfaceSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: None,
            seed: 0,
            out_dir: PathBuf::from("out"),
            sim: SimSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
            predict: PredictSection::default(),
            surface: SurfaceSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub n_per_dim: usize,
    pub sigma2: f64,
    pub nu: f64,
    pub ell: f64,
    pub noise_var: f64,
    pub stability_nugget: f64,
    pub train_frac: f64,
    pub outlier_frac: f64,
    pub outlier_factor: f64,
    pub replications: usize,
    pub diagnostics: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            n_per_dim: 40,
            sigma2: 1.0,
            nu: 0.5,
            ell: 1.0,
            noise_var: 1e-7,
            stability_nugget: 1e-14,
            train_frac: 0.9,
            outlier_frac: 0.0,
            outlier_factor: 2.0,
            replications: 1,
            diagnostics: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub regimes: Vec<String>,
    pub losses: Vec<String>,
    pub delta: f64,
    pub k: usize,
    pub batch: usize,
    /// Defaults to half of `k`, rounded up.
    pub k_star: Option<usize>,
    pub n_iterations: usize,
    pub nu_low: f64,
    pub nu_high: f64,
    pub ell: f64,
    pub tau2: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            regimes: vec!["regular".into()],
            losses: vec!["lool".into()],
            delta: DEFAULT_DELTA,
            k: train::DEFAULT_K,
            batch: train::DEFAULT_BATCH,
            k_star: None,
            n_iterations: train::DEFAULT_ITERATIONS,
            nu_low: train::DEFAULT_NU_BOUNDS.0,
            nu_high: train::DEFAULT_NU_BOUNDS.1,
            ell: 1.0,
            tau2: 1e-14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub features: Vec<String>,
    pub target: String,
    pub scale_features: bool,
    pub train_frac: f64,
    pub outlier_frac: f64,
    pub outlier_factor_range: [f64; 2],
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            features: Vec::new(),
            target: String::new(),
            scale_features: true,
            train_frac: 0.9,
            outlier_frac: 0.0,
            outlier_factor_range: [2.0, 4.0],
        }
    }
}

/// Inputs of `predict` and `eval`; relative paths default to `fit` outputs
/// in the output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub model: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceSection {
    pub loss: String,
    pub deltas: Vec<f64>,
    pub residual_min: f64,
    pub residual_max: f64,
    pub residual_steps: usize,
    pub variances: Vec<f64>,
}

impl Default for SurfaceSection {
    fn default() -> Self {
        SurfaceSection {
            loss: "looph".into(),
            deltas: vec![0.5, 1.0, 2.0, 3.0],
            residual_min: -5.0,
            residual_max: 5.0,
            residual_steps: 101,
            variances: vec![1.0],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            GpError::Config(msg) => GpError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GpError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GpError::Config(e.to_string()))
    }

    pub fn regimes(&self) -> Result<Vec<Regime>> {
        self.train.regimes.iter().map(|r| r.parse()).collect()
    }

    pub fn losses(&self) -> Result<Vec<LossSpec>> {
        self.train
            .losses
            .iter()
            .map(|l| LossSpec::new(l.parse::<LossKind>()?, self.train.delta).map_err(config_error))
            .collect()
    }

    /// Every (regime, loss) combination, regimes outermost.
    pub fn train_configs(&self) -> Result<Vec<TrainConfig>> {
        let regimes = self.regimes()?;
        let losses = self.losses()?;
        if regimes.is_empty() || losses.is_empty() {
            return Err(GpError::Config(
                "train.regimes and train.losses must be nonempty".into(),
            ));
        }
        let t = &self.train;
        let mut out = Vec::new();
        for &regime in &regimes {
            for &loss in &losses {
                let cfg = TrainConfig {
                    loss,
                    k: t.k,
                    b: t.batch,
                    nu_bounds: (t.nu_low, t.nu_high),
                    ell: t.ell,
                    tau2: t.tau2,
                    regime,
                    n_iterations: t.n_iterations,
                    k_star: t.k_star.unwrap_or(t.k.div_ceil(2)),
                    seed: self.seed,
                };
                cfg.validate()?;
                out.push(cfg);
            }
        }
        Ok(out)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = &self.sim;
        let cfg = SimConfig {
            n_per_dim: s.n_per_dim,
            true_params: MaternParams::new(s.sigma2, s.nu, s.ell, 0.0).map_err(config_error)?,
            noise_var: s.noise_var,
            stability_nugget: s.stability_nugget,
            train_frac: s.train_frac,
            outlier_frac: s.outlier_frac,
            outlier_factor: s.outlier_factor,
            seed: self.seed,
        };
        cfg.validate()?;
        if s.replications == 0 {
            return Err(GpError::Config(
                "sim.replications must be at least 1".into(),
            ));
        }
        Ok(cfg)
    }

    /// Resolves the config with defaults filled in, as written next to outputs.
    pub fn effective(&self, mode: Mode) -> Result<Self> {
        let mut c = self.clone();
        c.mode = Some(mode);
        c.train.k_star = Some(c.train.k_star.unwrap_or(c.train.k.div_ceil(2)));
        Ok(c)
    }
}

fn config_error(e: GpError) -> GpError {
    match e {
        GpError::InvalidInput(msg) => GpError::Config(msg),
        other => other,
    }
}
