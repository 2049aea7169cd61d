//! Smoothness estimation by batched leave-one-out loss minimization under
//! the regular, hybrid and down-sampling regimes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Points, SpatialDataset};
use crate::error::{GpError, Result};
use crate::gp::{self, LocalBatch, LocalProblem, PosteriorSummary, VARIANCE_FLOOR};
use crate::kernel::{Matern, MaternParams};
use crate::loss::LossSpec;
use crate::neighbors::{downsample_neighbors, sample_batch, Batch, NeighborIndex, NeighborSet};
use crate::optimize::ScalarSearch;
use crate::stats::median;

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_BATCH: usize = 500;
pub const DEFAULT_ITERATIONS: usize = 11;
pub const DEFAULT_NU_BOUNDS: (f64, f64) = (0.05, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    Regular,
    Hybrid,
    Downsample,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Regular => "regular",
            Regime::Hybrid => "hybrid",
            Regime::Downsample => "downsample",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "regular" => Ok(Regime::Regular),
            "hybrid" => Ok(Regime::Hybrid),
            "downsample" | "down-sample" | "down_sample" => Ok(Regime::Downsample),
            other => Err(GpError::Config(format!(
                "unknown regime '{other}' (expected regular, hybrid or downsample)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub k: usize,
    pub b: usize,
    pub nu_bounds: (f64, f64),
    pub ell: f64,
    pub tau2: f64,
    pub regime: Regime,
    pub n_iterations: usize,
    pub k_star: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossSpec, regime: Regime, ell: f64) -> Self {
        TrainConfig {
            loss,
            k: DEFAULT_K,
            b: DEFAULT_BATCH,
            nu_bounds: DEFAULT_NU_BOUNDS,
            ell,
            tau2: 1e-14,
            regime,
            n_iterations: DEFAULT_ITERATIONS,
            k_star: DEFAULT_K.div_ceil(2),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.nu_bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(GpError::Config(format!(
                "nu bounds must satisfy 0 < low <= high, got [{lo}, {hi}]"
            )));
        }
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(GpError::Config(format!(
                "length scale must be positive, got {}",
                self.ell
            )));
        }
        if !(self.tau2 >= 0.0 && self.tau2.is_finite()) {
            return Err(GpError::Config(format!(
                "nugget must be non-negative, got {}",
                self.tau2
            )));
        }
        if self.k == 0 || self.b == 0 {
            return Err(GpError::Config("k and batch size must be positive".into()));
        }
        if self.k_star == 0 || self.k_star > self.k {
            return Err(GpError::Config(format!(
                "k_star must be in 1..={}, got {}",
                self.k, self.k_star
            )));
        }
        if self.n_iterations == 0 {
            return Err(GpError::Config("n_iterations must be at least 1".into()));
        }
        Ok(())
    }

    fn params(&self, nu: f64) -> Result<MaternParams> {
        MaternParams::new(1.0, nu, self.ell, self.tau2)
    }
}

/// One objective evaluation recorded during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub nu: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub params: MaternParams,
    pub regime: Regime,
    pub loss: LossSpec,
    pub k: usize,
    pub k_star: usize,
    pub n_iterations: usize,
    pub trace: Vec<TraceEntry>,
    /// Per-iteration estimates (a single entry outside the down-sampling regime).
    pub nu_samples: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Leave-one-out problems of a batch with their distances precomputed.
struct LooBatch {
    local: LocalBatch,
    targets: Vec<f64>,
}

impl LooBatch {
    fn new(batch: &Batch, data: &SpatialDataset) -> Self {
        let problems: Vec<LocalProblem> = batch
            .neighbor_sets()
            .iter()
            .map(|ns| LocalProblem::new(data.coords.row(ns.query_index()), ns, data))
            .collect();
        let targets = batch
            .element_indices()
            .iter()
            .map(|&i| data.targets[i])
            .collect();
        LooBatch {
            local: LocalBatch::new(&problems),
            targets,
        }
    }

    fn objective(&self, params: MaternParams, loss: &LossSpec) -> Result<f64> {
        let post = self
            .local
            .posteriors(&Matern::new(params), VARIANCE_FLOOR)?;
        loss.evaluate(&post, &self.targets)
    }
}

/// Configured loss of the unit-scale leave-one-out posteriors of the batch.
pub fn objective(
    nu: f64,
    batch: &Batch,
    data: &SpatialDataset,
    config: &TrainConfig,
) -> Result<f64> {
    LooBatch::new(batch, data).objective(config.params(nu)?, &config.loss)
}

fn search_nu(
    loo: &LooBatch,
    config: &TrainConfig,
    iteration: usize,
    trace: &mut Vec<TraceEntry>,
) -> Result<f64> {
    let (lo, hi) = config.nu_bounds;
    let min = ScalarSearch::default().minimize(
        |nu| loo.objective(config.params(nu)?, &config.loss),
        lo,
        hi,
    )?;
    trace.extend(min.trace.iter().map(|&(nu, value)| TraceEntry {
        iteration,
        nu,
        value,
    }));
    Ok(min.x)
}

/// Minimizer of [`objective`] over the configured bounds.
pub fn optimize_nu(batch: &Batch, data: &SpatialDataset, config: &TrainConfig) -> Result<f64> {
    config.validate()?;
    search_nu(&LooBatch::new(batch, data), config, 0, &mut Vec::new())
}

struct Setup {
    batch: Batch,
    rng: ChaCha8Rng,
    warnings: Vec<String>,
}

fn setup(data: &SpatialDataset, config: &TrainConfig) -> Result<Setup> {
    config.validate()?;
    let n = data.len();
    if config.k >= n {
        return Err(GpError::Config(format!(
            "k = {} needs at least {} training points, got {n}",
            config.k,
            config.k + 1
        )));
    }
    let mut warnings = Vec::new();
    let b = if config.b > n {
        let msg = format!(
            "batch size {} exceeds training size {n}; using {n}",
            config.b
        );
        log::warn!("{msg}");
        warnings.push(msg);
        n
    } else {
        config.b
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let index = NeighborIndex::build(&data.coords)?;
    let elements = sample_batch(n, b, &mut rng)?;
    let batch = Batch::build(&index, elements, config.k)?;
    Ok(Setup {
        batch,
        rng,
        warnings,
    })
}

fn finish(
    config: &TrainConfig,
    nu: f64,
    sigma2: f64,
    trace: Vec<TraceEntry>,
    nu_samples: Vec<f64>,
    mut warnings: Vec<String>,
) -> Result<FittedModel> {
    let sigma2 = if sigma2 > 0.0 {
        sigma2
    } else {
        let msg = "variance scale estimate is zero; flooring it".to_string();
        warnings.push(msg);
        f64::MIN_POSITIVE
    };
    Ok(FittedModel {
        params: MaternParams::new(sigma2, nu, config.ell, config.tau2)?,
        regime: config.regime,
        loss: config.loss,
        k: config.k,
        k_star: config.k_star,
        n_iterations: config.n_iterations,
        trace,
        nu_samples,
        warnings,
    })
}

/// One batch, full neighbor sets, mean variance-scale estimate.
pub fn train_regular(data: &SpatialDataset, config: &TrainConfig) -> Result<FittedModel> {
    let Setup {
        batch, warnings, ..
    } = setup(data, config)?;
    let mut trace = Vec::new();
    let nu = search_nu(&LooBatch::new(&batch, data), config, 0, &mut trace)?;
    let sigma2 = gp::sigma2_mean_estimate(&batch, data, &config.params(nu)?)?;
    finish(config, nu, sigma2, trace, vec![nu], warnings)
}

/// Full neighbor sets for the smoothness, down-sampled median for the scale.
pub fn train_hybrid(data: &SpatialDataset, config: &TrainConfig) -> Result<FittedModel> {
    let Setup {
        batch,
        mut rng,
        warnings,
    } = setup(data, config)?;
    let mut trace = Vec::new();
    let nu = search_nu(&LooBatch::new(&batch, data), config, 0, &mut trace)?;
    let sigma2 =
        gp::sigma2_downsample_median(&batch, data, &config.params(nu)?, config.k_star, &mut rng)?;
    finish(config, nu, sigma2, trace, vec![nu], warnings)
}

/// Median of the smoothness estimates over repeated neighbor down-samples,
/// then the down-sampled median scale.
pub fn train_downsample(data: &SpatialDataset, config: &TrainConfig) -> Result<FittedModel> {
    let Setup {
        batch,
        mut rng,
        warnings,
    } = setup(data, config)?;
    let mut trace = Vec::new();
    let mut samples = Vec::with_capacity(config.n_iterations);
    for it in 0..config.n_iterations {
        let sub = batch.downsample(config.k_star, &mut rng)?;
        samples.push(search_nu(
            &LooBatch::new(&sub, data),
            config,
            it,
            &mut trace,
        )?);
    }
    let nu = median(&samples)
        .ok_or_else(|| GpError::Numerical("smoothness estimates are NaN".into()))?;
    let sigma2 =
        gp::sigma2_downsample_median(&batch, data, &config.params(nu)?, config.k_star, &mut rng)?;
    finish(config, nu, sigma2, trace, samples, warnings)
}

/// Trains under `config.regime`.
pub fn fit(data: &SpatialDataset, config: &TrainConfig) -> Result<FittedModel> {
    match config.regime {
        Regime::Regular => train_regular(data, config),
        Regime::Hybrid => train_hybrid(data, config),
        Regime::Downsample => train_downsample(data, config),
    }
}

fn scale(p: PosteriorSummary, sigma2: f64) -> PosteriorSummary {
    PosteriorSummary {
        mean: p.mean,
        variance: (p.variance * sigma2).max(VARIANCE_FLOOR),
    }
}

fn query_sets(index: &NeighborIndex, queries: &Points, k: usize) -> Result<Vec<NeighborSet>> {
    if queries.dim() != index.points().dim() {
        return Err(GpError::invalid("query and training dimensions differ"));
    }
    queries
        .rows()
        .enumerate()
        .map(|(i, q)| Ok(index.query_knn(q, k, None)?.with_query_index(i)))
        .collect()
}

/// Per-query medians of the means and of the variances over
/// `n_iterations` independent neighbor down-samples.
pub fn predict_downsample_median<R: Rng + ?Sized>(
    model: &FittedModel,
    queries: &Points,
    data: &SpatialDataset,
    rng: &mut R,
) -> Result<Vec<PosteriorSummary>> {
    if model.n_iterations == 0 {
        return Err(GpError::invalid("n_iterations must be at least 1"));
    }
    let index = NeighborIndex::build(&data.coords)?;
    let sets = query_sets(&index, queries, model.k)?;
    let unit = Matern::new(model.params.unit_scale());
    let mut means = vec![Vec::with_capacity(model.n_iterations); sets.len()];
    let mut vars = vec![Vec::with_capacity(model.n_iterations); sets.len()];
    for _ in 0..model.n_iterations {
        for (q, ns) in sets.iter().enumerate() {
            let sub = downsample_neighbors(ns, model.k_star, rng)?;
            let p =
                LocalProblem::new(queries.row(q), &sub, data).posterior(&unit, VARIANCE_FLOOR)?;
            let p = scale(p, model.params.sigma2());
            means[q].push(p.mean);
            vars[q].push(p.variance);
        }
    }
    means
        .iter()
        .zip(&vars)
        .map(|(m, v)| {
            Ok(PosteriorSummary {
                mean: median(m).ok_or_else(|| GpError::Numerical("NaN posterior mean".into()))?,
                variance: median(v)
                    .ok_or_else(|| GpError::Numerical("NaN posterior variance".into()))?,
            })
        })
        .collect()
}

impl FittedModel {
    /// Posteriors at `queries` given the training data. The down-sampling
    /// regime draws its neighbor subsets from `rng`; the others ignore it.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        queries: &Points,
        data: &SpatialDataset,
        rng: &mut R,
    ) -> Result<Vec<PosteriorSummary>> {
        match self.regime {
            Regime::Downsample => predict_downsample_median(self, queries, data, rng),
            Regime::Regular | Regime::Hybrid => {
                let unit =
                    gp::predict_batch(queries, data, &self.params.unit_scale(), self.k, false)?;
                Ok(unit
                    .into_iter()
                    .map(|p| scale(p, self.params.sigma2()))
                    .collect())
            }
        }
    }
}
