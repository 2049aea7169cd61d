//! Test-set evaluation: RMSE, CRPS, MAD, MDV, median interval size, coverage.

use statrs::function::erf::erfc;

use crate::error::{GpError, Result};
use crate::gp::PosteriorSummary;
use crate::stats::median;

/// Standard normal quantile of 0.975.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub rmse: f64,
    pub crps: f64,
    pub mad: f64,
    pub mdv: f64,
    pub median_ci_size: f64,
    pub coverage: f64,
}

impl EvalReport {
    /// All six statistics with 95% intervals.
    pub fn compute(posteriors: &[PosteriorSummary], truths: &[f64]) -> Result<Self> {
        let means: Vec<f64> = posteriors.iter().map(|p| p.mean).collect();
        let (median_ci_size, coverage) = ci_metrics(posteriors, truths, Z_95)?;
        let report = EvalReport {
            rmse: rmse(&means, truths)?,
            crps: crps_gaussian(posteriors, truths)?,
            mad: mad(&means, truths)?,
            mdv: mdv(posteriors)?,
            median_ci_size,
            coverage,
        };
        if !report.is_finite() {
            return Err(GpError::Numerical(format!(
                "non-finite evaluation metrics: {report:?}"
            )));
        }
        Ok(report)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.rmse,
            self.crps,
            self.mad,
            self.mdv,
            self.median_ci_size,
            self.coverage,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn check_pair(n_pred: usize, n_truth: usize) -> Result<()> {
    if n_pred != n_truth {
        return Err(GpError::invalid(format!(
            "{n_pred} predictions but {n_truth} truths"
        )));
    }
    if n_pred == 0 {
        return Err(GpError::invalid("metrics need at least one point"));
    }
    Ok(())
}

fn check_variances(posteriors: &[PosteriorSummary]) -> Result<()> {
    match posteriors.iter().find(|p| !(p.variance > 0.0)) {
        Some(p) => Err(GpError::invalid(format!(
            "non-positive posterior variance {}",
            p.variance
        ))),
        None => Ok(()),
    }
}

pub fn rmse(pred_means: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(pred_means.len(), truths.len())?;
    let ss: f64 = pred_means
        .iter()
        .zip(truths)
        .map(|(m, y)| (m - y) * (m - y))
        .sum();
    Ok((ss / pred_means.len() as f64).sqrt())
}

/// Median absolute residual.
pub fn mad(pred_means: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(pred_means.len(), truths.len())?;
    let abs: Vec<f64> = pred_means
        .iter()
        .zip(truths)
        .map(|(m, y)| (m - y).abs())
        .collect();
    median(&abs).ok_or_else(|| GpError::Numerical("NaN residual".into()))
}

/// Median posterior variance.
pub fn mdv(posteriors: &[PosteriorSummary]) -> Result<f64> {
    if posteriors.is_empty() {
        return Err(GpError::invalid("metrics need at least one point"));
    }
    let v: Vec<f64> = posteriors.iter().map(|p| p.variance).collect();
    median(&v).ok_or_else(|| GpError::Numerical("NaN variance".into()))
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Mean closed-form CRPS of Gaussian predictive distributions.
pub fn crps_gaussian(posteriors: &[PosteriorSummary], truths: &[f64]) -> Result<f64> {
    check_pair(posteriors.len(), truths.len())?;
    check_variances(posteriors)?;
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let total: f64 = posteriors
        .iter()
        .zip(truths)
        .map(|(p, y)| {
            let sd = p.variance.sqrt();
            let z = (y - p.mean) / sd;
            sd * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - inv_sqrt_pi)
        })
        .sum();
    Ok(total / posteriors.len() as f64)
}

/// Median width `2 z sd` of the central intervals and the fraction of
/// truths inside `mean +/- z sd`.
pub fn ci_metrics(posteriors: &[PosteriorSummary], truths: &[f64], z: f64) -> Result<(f64, f64)> {
    check_pair(posteriors.len(), truths.len())?;
    check_variances(posteriors)?;
    if !(z > 0.0) {
        return Err(GpError::invalid(format!(
            "interval multiplier must be positive, got {z}"
        )));
    }
    let sizes: Vec<f64> = posteriors
        .iter()
        .map(|p| 2.0 * z * p.variance.sqrt())
        .collect();
    let inside = posteriors
        .iter()
        .zip(truths)
        .filter(|(p, y)| (*y - p.mean).abs() <= z * p.variance.sqrt())
        .count();
    let size = median(&sizes).ok_or_else(|| GpError::Numerical("NaN interval".into()))?;
    Ok((size, inside as f64 / posteriors.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn post(mean: f64, variance: f64) -> PosteriorSummary {
        PosteriorSummary { mean, variance }
    }

    fn sorted_median(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[3.0, 4.0, 0.0, 0.0], &[0.0; 4]).unwrap(), 2.5);
        assert!(rmse(&[], &[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Vec<f64> = (0..37).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..37).map(|_| rng.random()).collect();
        let mut ss = 0.0;
        for i in 0..37 {
            ss += (m[i] - y[i]).powi(2);
        }
        assert!((rmse(&m, &y).unwrap() - (ss / 37.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mad_examples() {
        assert_eq!(mad(&[-1.0, 0.0, 5.0], &[0.0; 3]).unwrap(), 1.0);
        assert_eq!(mad(&[2.0; 4], &[-1.5; 4]).unwrap(), 3.5);
        assert!(mad(&[], &[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m: Vec<f64> = (0..20).map(|_| rng.random_range(-5.0..5.0)).collect();
        let want = sorted_median(m.iter().map(|x| x.abs()).collect());
        assert_eq!(mad(&m, &[0.0; 20]).unwrap(), want);
    }

    #[test]
    fn mdv_examples() {
        assert_eq!(mdv(&[post(0.0, 0.3)]).unwrap(), 0.3);
        assert_eq!(
            mdv(&[post(0.0, 3.0), post(0.0, 1.0), post(0.0, 2.0)]).unwrap(),
            2.0
        );
        assert!(mdv(&[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..16).map(|_| rng.random_range(0.1..5.0)).collect();
        let p: Vec<_> = v.iter().map(|&v| post(0.0, v)).collect();
        assert_eq!(mdv(&p).unwrap(), sorted_median(v));
    }

    #[test]
    fn crps_at_zero_residual() {
        let c = crps_gaussian(&[post(0.0, 1.0)], &[0.0]).unwrap();
        let want = 2.0 / (2.0 * std::f64::consts::PI).sqrt() - 1.0 / std::f64::consts::PI.sqrt();
        assert!((c - want).abs() < 1e-15);
        assert!((c - 0.233_695).abs() < 1e-6);
        let tiny = crps_gaussian(&[post(1.0, 1e-20)], &[1.0]).unwrap();
        assert!(tiny.abs() < 1e-9);
        assert!(crps_gaussian(&[post(0.0, 0.0)], &[0.0]).is_err());
    }

    #[test]
    fn crps_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let mu: f64 = rng.random_range(-2.0..2.0);
            let sd: f64 = rng.random_range(0.2..2.0);
            let y: f64 = rng.random_range(-3.0..3.0);
            let dist = Normal::new(mu, sd).unwrap();
            let n = 1_000_000;
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let x: f64 = dist.sample(&mut rng);
                let x2: f64 = dist.sample(&mut rng);
                let t = (x - y).abs() - 0.5 * (x - x2).abs();
                s += t;
                s2 += t * t;
            }
            let mean = s / n as f64;
            let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
            let c = crps_gaussian(&[post(mu, sd * sd)], &[y]).unwrap();
            assert!((c - mean).abs() < 3.0 * se, "closed {c} mc {mean} se {se}");
        }
    }

    #[test]
    fn ci_examples() {
        let (size, cov) = ci_metrics(&[post(0.0, 1.0)], &[0.0], Z_95).unwrap();
        assert!((size - 3.919_928).abs() < 1e-12);
        assert_eq!(cov, 1.0);
        assert!(ci_metrics(&[post(0.0, 1.0)], &[0.0], 0.0).is_err());
    }

    #[test]
    fn calibrated_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut p = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let mu: f64 = rng.random_range(-1.0..1.0);
            let v: f64 = rng.random_range(0.1..3.0);
            let z: f64 = StandardNormal.sample(&mut rng);
            p.push(post(mu, v));
            y.push(mu + v.sqrt() * z);
        }
        let (_, cov) = ci_metrics(&p, &y, Z_95).unwrap();
        assert!((cov - 0.95).abs() < 0.01, "{cov}");
    }

    #[test]
    fn report_is_finite() {
        let r = EvalReport::compute(&[post(0.0, 1.0), post(1.0, 0.5)], &[0.1, 0.7]).unwrap();
        assert!(r.is_finite());
        assert!((0.0..=1.0).contains(&r.coverage));
    }

    proptest! {
        #[test]
        fn permutation_invariance_and_bounds(seed in 0u64..100_000, n in 1usize..60, z in 0.1f64..4.0, dz in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p: Vec<_> = (0..n).map(|_| post(rng.random_range(-2.0..2.0), rng.random_range(0.01..3.0))).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = EvalReport::compute(&p, &y).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            let p2: Vec<_> = order.iter().map(|&i| p[i]).collect();
            let y2: Vec<f64> = order.iter().map(|&i| y[i]).collect();
            let b = EvalReport::compute(&p2, &y2).unwrap();
            prop_assert_eq!(a.mad, b.mad);
            prop_assert_eq!(a.mdv, b.mdv);
            prop_assert_eq!(a.median_ci_size, b.median_ci_size);
            prop_assert_eq!(a.coverage, b.coverage);
            prop_assert!((a.rmse - b.rmse).abs() < 1e-12);
            prop_assert!((a.crps - b.crps).abs() < 1e-12);
            prop_assert!(a.crps >= 0.0);
            let max_abs = p.iter().zip(&y).map(|(p, y)| (p.mean - y).abs()).fold(0.0, f64::max);
            prop_assert!(a.rmse >= max_abs / (n as f64).sqrt() - 1e-12);
            let (_, c1) = ci_metrics(&p, &y, z).unwrap();
            let (_, c2) = ci_metrics(&p, &y, z + dz).unwrap();
            prop_assert!(c2 >= c1);
        }
    }
}
