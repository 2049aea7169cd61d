//! Leave-one-out training losses and loss-surface tabulation.
//!
//! LOOL, pseudo-Huber and LOOPH are sums over the batch; MSE is a mean.

use std::fmt;
use std::str::FromStr;

use crate::error::{GpError, Result};
use crate::gp::PosteriorSummary;

/// Boundary scale used when none is configured: three posterior standard
/// deviations for LOOPH.
pub const DEFAULT_DELTA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    Mse,
    Lool,
    PseudoHuber,
    Looph,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Lool => "lool",
            LossKind::PseudoHuber => "ph",
            LossKind::Looph => "looph",
        }
    }

    pub fn uses_delta(self) -> bool {
        matches!(self, LossKind::PseudoHuber | LossKind::Looph)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "lool" => Ok(LossKind::Lool),
            "ph" | "pseudo-huber" | "pseudo_huber" => Ok(LossKind::PseudoHuber),
            "looph" => Ok(LossKind::Looph),
            other => Err(GpError::Config(format!(
                "unknown loss '{other}' (expected mse, lool, ph or looph)"
            ))),
        }
    }
}

/// A loss together with its boundary scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    kind: LossKind,
    delta: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind, delta: f64) -> Result<Self> {
        if kind.uses_delta() && !(delta.is_finite() && delta > 0.0) {
            return Err(GpError::invalid(format!(
                "{kind} needs a positive boundary scale, got {delta}"
            )));
        }
        Ok(LossSpec { kind, delta })
    }

    pub fn lool() -> Self {
        LossSpec {
            kind: LossKind::Lool,
            delta: DEFAULT_DELTA,
        }
    }

    pub fn looph(delta: f64) -> Result<Self> {
        LossSpec::new(LossKind::Looph, delta)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn evaluate(&self, posteriors: &[PosteriorSummary], targets: &[f64]) -> Result<f64> {
        match self.kind {
            LossKind::Mse => mse(posteriors, targets),
            LossKind::Lool => lool(posteriors, targets),
            LossKind::PseudoHuber => pseudo_huber(posteriors, targets, self.delta),
            LossKind::Looph => looph(posteriors, targets, self.delta),
        }
    }

    /// Loss of a single point with the given residual and posterior variance.
    pub fn per_point(&self, residual: f64, variance: f64) -> Result<f64> {
        let post = [PosteriorSummary {
            mean: residual,
            variance,
        }];
        self.evaluate(&post, &[0.0])
    }
}

fn check_lengths(posteriors: &[PosteriorSummary], targets: &[f64]) -> Result<()> {
    if posteriors.len() != targets.len() {
        return Err(GpError::invalid(format!(
            "{} posteriors but {} targets",
            posteriors.len(),
            targets.len()
        )));
    }
    Ok(())
}

fn check_variance(v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(GpError::invalid(format!(
            "posterior variance must be positive, got {v}"
        )))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(GpError::invalid(format!(
            "boundary scale must be positive, got {delta}"
        )))
    }
}

/// `sqrt(1 + s) - 1` without cancellation for small `s`.
#[inline]
fn sqrt1p_m1(s: f64) -> f64 {
    s / ((1.0 + s).sqrt() + 1.0)
}

/// Leave-one-out likelihood: `sum (mu - y)^2 / var + log var`.
pub fn lool(posteriors: &[PosteriorSummary], targets: &[f64]) -> Result<f64> {
    check_lengths(posteriors, targets)?;
    let mut total = 0.0;
    for (p, y) in posteriors.iter().zip(targets) {
        check_variance(p.variance)?;
        let r = p.mean - y;
        total += r * r / p.variance + p.variance.ln();
    }
    Ok(total)
}

/// `sum delta^2 (sqrt(1 + (r / delta)^2) - 1)`; ignores the variances.
pub fn pseudo_huber(posteriors: &[PosteriorSummary], targets: &[f64], delta: f64) -> Result<f64> {
    check_lengths(posteriors, targets)?;
    check_delta(delta)?;
    let d2 = delta * delta;
    Ok(posteriors
        .iter()
        .zip(targets)
        .map(|(p, y)| {
            let r = p.mean - y;
            d2 * sqrt1p_m1(r * r / d2)
        })
        .sum())
}

/// Leave-one-out pseudo-Huber:
/// `sum 2 delta^2 (sqrt(1 + r^2 / (delta^2 var)) - 1) + log var`,
/// where `delta` counts posterior standard deviations.
pub fn looph(posteriors: &[PosteriorSummary], targets: &[f64], delta: f64) -> Result<f64> {
    check_lengths(posteriors, targets)?;
    check_delta(delta)?;
    let d2 = delta * delta;
    let mut total = 0.0;
    for (p, y) in posteriors.iter().zip(targets) {
        check_variance(p.variance)?;
        let r = p.mean - y;
        total += 2.0 * d2 * sqrt1p_m1(r * r / (d2 * p.variance)) + p.variance.ln();
    }
    Ok(total)
}

/// Mean squared residual.
pub fn mse(posteriors: &[PosteriorSummary], targets: &[f64]) -> Result<f64> {
    check_lengths(posteriors, targets)?;
    if posteriors.is_empty() {
        return Err(GpError::invalid("mean squared error of an empty batch"));
    }
    let ss: f64 = posteriors
        .iter()
        .zip(targets)
        .map(|(p, y)| (p.mean - y) * (p.mean - y))
        .sum();
    Ok(ss / posteriors.len() as f64)
}

/// One cell of a tabulated loss surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceRow {
    pub delta: f64,
    pub residual: f64,
    pub variance: f64,
    pub loss: f64,
}

/// Single-point loss over the Cartesian product of residuals and variances.
pub fn loss_surface_grid(
    spec: &LossSpec,
    residuals: &[f64],
    variances: &[f64],
) -> Result<Vec<SurfaceRow>> {
    if residuals.is_empty() || variances.is_empty() {
        return Err(GpError::invalid("loss surface grids must be nonempty"));
    }
    let mut rows = Vec::with_capacity(residuals.len() * variances.len());
    for &residual in residuals {
        for &variance in variances {
            check_variance(variance)?;
            rows.push(SurfaceRow {
                delta: spec.delta,
                residual,
                variance,
                loss: spec.per_point(residual, variance)?,
            });
        }
    }
    Ok(rows)
}
