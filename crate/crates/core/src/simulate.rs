//! Seeded simulation studies: lattice, Gaussian-process field, split,
//! outlier injection, model fitting and test-set evaluation.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use crate::data::{Points, SpatialDataset};
use crate::error::{GpError, Result};
use crate::gp::PosteriorSummary;
use crate::kernel::{self_covariance, MaternParams};
use crate::loss::LossKind;
use crate::metrics::{EvalReport, Z_95};
use crate::train::{fit, Regime, TrainConfig};

const STREAM_FIELD: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_OUTLIERS: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_PREDICT: u64 = 4;
const STREAM_NOISE: u64 = 5;

/// Seed of an independent sub-stream of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_per_dim: usize,
    /// Field covariance; its nugget is not used.
    pub true_params: MaternParams,
    /// Variance of the independent noise added to training targets.
    pub noise_var: f64,
    /// Diagonal jitter of the field covariance.
    pub stability_nugget: f64,
    pub train_frac: f64,
    pub outlier_frac: f64,
    pub outlier_factor: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(true_params: MaternParams) -> Self {
        SimConfig {
            n_per_dim: 40,
            true_params,
            noise_var: 1e-7,
            stability_nugget: 1e-14,
            train_frac: 0.9,
            outlier_frac: 0.0,
            outlier_factor: 2.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_dim < 2 {
            return Err(GpError::Config(format!(
                "grid needs at least 2 points per side, got {}",
                self.n_per_dim
            )));
        }
        if !(self.noise_var >= 0.0 && self.stability_nugget >= 0.0) {
            return Err(GpError::Config(
                "noise variance and stability nugget must be non-negative".into(),
            ));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(GpError::Config(format!(
                "train fraction must be in (0, 1), got {}",
                self.train_frac
            )));
        }
        if !(0.0..1.0).contains(&self.outlier_frac) {
            return Err(GpError::Config(format!(
                "outlier fraction must be in [0, 1), got {}",
                self.outlier_frac
            )));
        }
        if !self.outlier_factor.is_finite() {
            return Err(GpError::Config("outlier factor must be finite".into()));
        }
        Ok(())
    }
}

/// `n * n` points of the regular lattice on the unit square, row-major.
pub fn make_grid(n_per_dim: usize) -> Result<Points> {
    if n_per_dim < 2 {
        return Err(GpError::invalid(format!(
            "grid needs at least 2 points per side, got {n_per_dim}"
        )));
    }
    let step = 1.0 / (n_per_dim - 1) as f64;
    let mut data = Vec::with_capacity(2 * n_per_dim * n_per_dim);
    for i in 0..n_per_dim {
        for j in 0..n_per_dim {
            data.push(i as f64 * step);
            data.push(j as f64 * step);
        }
    }
    Points::new(2, data)
}

/// One draw from `N(0, K + noise_var I)` by dense Cholesky.
pub fn sample_gp<R: Rng + ?Sized>(
    coords: &Points,
    params: &MaternParams,
    noise_var: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(GpError::invalid(format!(
            "noise variance must be non-negative, got {noise_var}"
        )));
    }
    let n = coords.len();
    let mut k = self_covariance(coords, params, false);
    for i in 0..n {
        k[(i, i)] += noise_var;
    }
    let chol = k.cholesky().ok_or_else(|| {
        GpError::Numerical(format!(
            "prior covariance of {n} points is not positive definite with diagonal jitter {noise_var}; use a larger stability nugget"
        ))
    })?;
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    Ok((chol.l() * z).iter().copied().collect())
}

/// Uniform partition into `floor(frac n)` training points and the rest,
/// each kept in original order.
pub fn split_train_test<R: Rng + ?Sized>(
    data: &SpatialDataset,
    train_frac: f64,
    rng: &mut R,
) -> Result<(SpatialDataset, SpatialDataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(GpError::invalid(format!(
            "train fraction must be in (0, 1), got {train_frac}"
        )));
    }
    let n = data.len();
    let n_train = (train_frac * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(GpError::invalid(format!(
            "split of {n} points at fraction {train_frac} leaves an empty part"
        )));
    }
    let mut in_train = vec![false; n];
    for i in sample(rng, n, n_train) {
        in_train[i] = true;
    }
    let train: Vec<usize> = (0..n).filter(|&i| in_train[i]).collect();
    let test: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    Ok((data.subset(&train), data.subset(&test)))
}

fn outlier_indices<R: Rng + ?Sized>(n: usize, frac: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&frac) {
        return Err(GpError::invalid(format!(
            "outlier fraction must be in [0, 1), got {frac}"
        )));
    }
    let m = (frac * n as f64).floor() as usize;
    let mut idx = sample(rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Multiplies `floor(frac n)` uniformly chosen targets by `factor`.
pub fn inject_outliers<R: Rng + ?Sized>(
    data: &SpatialDataset,
    frac: f64,
    factor: f64,
    rng: &mut R,
) -> Result<(SpatialDataset, Vec<usize>)> {
    let idx = outlier_indices(data.len(), frac, rng)?;
    let mut out = data.clone();
    for &i in &idx {
        out.targets[i] *= factor;
    }
    Ok((out, idx))
}

/// Like [`inject_outliers`] with an independent uniform factor in
/// `[low, high]` per chosen target.
pub fn inject_outliers_range<R: Rng + ?Sized>(
    data: &SpatialDataset,
    frac: f64,
    (low, high): (f64, f64),
    rng: &mut R,
) -> Result<(SpatialDataset, Vec<usize>)> {
    if !(low.is_finite() && high.is_finite() && low <= high) {
        return Err(GpError::invalid(format!(
            "invalid outlier factor range [{low}, {high}]"
        )));
    }
    let idx = outlier_indices(data.len(), frac, rng)?;
    let mut out = data.clone();
    for &i in &idx {
        out.targets[i] *= rng.random_range(low..=high);
    }
    Ok((out, idx))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSummary {
    pub nu_hat: f64,
    pub sigma2_hat: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutcome {
    pub regime: Regime,
    pub loss: LossKind,
    pub result: std::result::Result<ModelSummary, String>,
}

/// Per-test-point residual and interval diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub replicate: usize,
    pub model: usize,
    pub point: usize,
    pub coords: Vec<f64>,
    pub truth: f64,
    pub mean: f64,
    pub variance: f64,
    pub residual: f64,
    /// Half width of the central 95% interval.
    pub ci_half_width: f64,
    /// `|residual| - ci_half_width`; positive outside the interval.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub replicate: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_outliers: usize,
    pub models: Vec<ModelOutcome>,
    pub diagnostics: Vec<DiagnosticRow>,
}

fn diagnostics(
    replicate: usize,
    model: usize,
    test: &SpatialDataset,
    post: &[PosteriorSummary],
) -> Vec<DiagnosticRow> {
    post.iter()
        .zip(&test.targets)
        .enumerate()
        .map(|(point, (p, &truth))| {
            let residual = p.mean - truth;
            let ci_half_width = Z_95 * p.variance.sqrt();
            DiagnosticRow {
                replicate,
                model,
                point,
                coords: test.coords.row(point).to_vec(),
                truth,
                mean: p.mean,
                variance: p.variance,
                residual,
                ci_half_width,
                excess: residual.abs() - ci_half_width,
            }
        })
        .collect()
}

/// Training data with outliers and clean test data of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationData {
    pub train: SpatialDataset,
    pub test: SpatialDataset,
    pub outliers: Vec<usize>,
}

/// Generates the data of replication `replicate` (seed `sim.seed + replicate`).
/// Test targets are the noise-free field.
pub fn replication_data(sim: &SimConfig, replicate: usize) -> Result<ReplicationData> {
    sim.validate()?;
    let seed = sim.seed.wrapping_add(replicate as u64);
    let coords = make_grid(sim.n_per_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_FIELD));
    let field = sample_gp(&coords, &sim.true_params, sim.stability_nugget, &mut rng)?;
    let full = SpatialDataset::new(coords, field)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SPLIT));
    let (mut train, test) = split_train_test(&full, sim.train_frac, &mut rng)?;
    if sim.noise_var > 0.0 {
        let noise =
            Normal::new(0.0, sim.noise_var.sqrt()).map_err(|e| GpError::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_NOISE));
        for y in &mut train.targets {
            *y += rng.sample(noise);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_OUTLIERS));
    let (train, outliers) =
        inject_outliers(&train, sim.outlier_frac, sim.outlier_factor, &mut rng)?;
    Ok(ReplicationData {
        train,
        test,
        outliers,
    })
}

/// Fits every configuration on one replication and scores it on the test
/// set. Model failures are recorded, not propagated.
pub fn run_replication(
    sim: &SimConfig,
    train_configs: &[TrainConfig],
    replicate: usize,
) -> Result<ReplicationResult> {
    let seed = sim.seed.wrapping_add(replicate as u64);
    let data = replication_data(sim, replicate)?;
    let train_seed = derive_seed(seed, STREAM_TRAIN);
    let predict_seed = derive_seed(seed, STREAM_PREDICT);
    let mut models = Vec::with_capacity(train_configs.len());
    let mut diag = Vec::new();
    for (m, cfg) in train_configs.iter().enumerate() {
        let cfg = TrainConfig {
            seed: train_seed,
            ..*cfg
        };
        let result = (|| {
            let model = fit(&data.train, &cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(predict_seed);
            let post = model.predict(&data.test.coords, &data.train, &mut rng)?;
            let report = EvalReport::compute(&post, &data.test.targets)?;
            diag.extend(diagnostics(replicate, m, &data.test, &post));
            Ok::<_, GpError>(ModelSummary {
                nu_hat: model.params.nu(),
                sigma2_hat: model.params.sigma2(),
                report,
            })
        })();
        if let Err(e) = &result {
            log::warn!(
                "replicate {replicate}: {} {} failed: {e}",
                cfg.regime,
                cfg.loss.kind()
            );
        }
        models.push(ModelOutcome {
            regime: cfg.regime,
            loss: cfg.loss.kind(),
            result: result.map_err(|e| e.to_string()),
        });
    }
    Ok(ReplicationResult {
        replicate,
        seed,
        n_train: data.train.len(),
        n_test: data.test.len(),
        n_outliers: data.outliers.len(),
        models,
        diagnostics: diag,
    })
}

/// Mean statistics of one model slot over the successful replications.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub regime: Regime,
    pub loss: LossKind,
    pub n_ok: usize,
    pub n_failed: usize,
    pub nu_hat: f64,
    pub sigma2_hat: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub replications: Vec<ReplicationResult>,
    pub aggregate: Vec<AggregateRow>,
}

/// Per-slot means over replications; NaN where every replication failed.
pub fn aggregate(train_configs: &[TrainConfig], reps: &[ReplicationResult]) -> Vec<AggregateRow> {
    train_configs
        .iter()
        .enumerate()
        .map(|(m, cfg)| {
            let ok: Vec<&ModelSummary> = reps
                .iter()
                .filter_map(|r| r.models.get(m)?.result.as_ref().ok())
                .collect();
            let n = ok.len() as f64;
            let mean = |f: &dyn Fn(&ModelSummary) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|s| f(s)).sum::<f64>() / n
                }
            };
            AggregateRow {
                regime: cfg.regime,
                loss: cfg.loss.kind(),
                n_ok: ok.len(),
                n_failed: reps.len() - ok.len(),
                nu_hat: mean(&|s| s.nu_hat),
                sigma2_hat: mean(&|s| s.sigma2_hat),
                report: EvalReport {
                    rmse: mean(&|s| s.report.rmse),
                    crps: mean(&|s| s.report.crps),
                    mad: mean(&|s| s.report.mad),
                    mdv: mean(&|s| s.report.mdv),
                    median_ci_size: mean(&|s| s.report.median_ci_size),
                    coverage: mean(&|s| s.report.coverage),
                },
            }
        })
        .collect()
}

/// Replications `0..n_reps` and their aggregate.
pub fn run_study(sim: &SimConfig, train_configs: &[TrainConfig], n_reps: usize) -> Result<Study> {
    if n_reps == 0 {
        return Err(GpError::invalid("a study needs at least one replication"));
    }
    for cfg in train_configs {
        cfg.validate()?;
    }
    let replications = (0..n_reps)
        .map(|i| {
            log::info!("replication {}/{n_reps}", i + 1);
            run_replication(sim, train_configs, i)
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(train_configs, &replications);
    Ok(Study {
        replications,
        aggregate,
    })
}
