//! Nearest-neighbor conditional posteriors and closed-form variance-scale estimates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::{sq_dist, Points, SpatialDataset};
use crate::error::{GpError, Result};
use crate::kernel::{Matern, MaternParams};
use crate::neighbors::{downsample_neighbors, Batch, NeighborIndex, NeighborSet};
use crate::stats::median;

/// Lower clamp applied to every posterior variance.
pub const VARIANCE_FLOOR: f64 = 1e-14;

/// Posterior mean and variance at one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub variance: f64,
}

/// Distances and targets of one neighborhood, independent of the kernel.
#[derive(Debug, Clone)]
pub(crate) struct LocalProblem {
    query_index: usize,
    /// Strict lower triangle of the neighbor distance matrix, row by row.
    inner: Vec<f64>,
    cross: Vec<f64>,
    targets: Vec<f64>,
}

impl LocalProblem {
    pub(crate) fn new(query: &[f64], ns: &NeighborSet, data: &SpatialDataset) -> Self {
        let idx = ns.indices();
        let k = idx.len();
        let coords = &data.coords;
        let mut inner = Vec::with_capacity(k * k.saturating_sub(1) / 2);
        for a in 0..k {
            let ra = coords.row(idx[a]);
            for &ib in &idx[..a] {
                inner.push(sq_dist(ra, coords.row(ib)).sqrt());
            }
        }
        LocalProblem {
            query_index: ns.query_index(),
            inner,
            cross: idx
                .iter()
                .map(|&i| sq_dist(query, coords.row(i)).sqrt())
                .collect(),
            targets: idx.iter().map(|&i| data.targets[i]).collect(),
        }
    }

    fn len(&self) -> usize {
        self.cross.len()
    }

    fn factor(&self, kernel: &Matern) -> Result<DMatrix<f64>> {
        factor(
            self.len(),
            self.inner.iter().map(|&h| kernel.value(h)),
            kernel.params(),
            self.query_index,
        )
    }

    pub(crate) fn posterior(&self, kernel: &Matern, floor: f64) -> Result<PosteriorSummary> {
        if self.cross.is_empty() {
            return Ok(PosteriorSummary {
                mean: 0.0,
                variance: kernel.params().sigma2().max(floor),
            });
        }
        let l = self.factor(kernel)?;
        let cross = DVector::from_iterator(self.len(), self.cross.iter().map(|&h| kernel.value(h)));
        Ok(solve_posterior(
            &l,
            cross,
            &self.targets,
            kernel.params().sigma2(),
            floor,
        ))
    }

    /// `Y_N^T K_N^-1 Y_N`.
    pub(crate) fn quadratic_form(&self, kernel: &Matern) -> Result<f64> {
        if self.cross.is_empty() {
            return Ok(0.0);
        }
        let l = self.factor(kernel)?;
        let mut w = DVector::from_column_slice(&self.targets);
        l.solve_lower_triangular_unchecked_mut(&mut w);
        Ok(w.dot(&w))
    }
}

/// Lower Cholesky factor of the nugget-augmented neighborhood covariance
/// whose strict lower triangle is `inner`, row by row.
fn factor(
    k: usize,
    mut inner: impl Iterator<Item = f64>,
    p: &MaternParams,
    query_index: usize,
) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::<f64>::zeros(k, k);
    for a in 0..k {
        m[(a, a)] = p.sigma2() + p.tau2();
        for b in 0..a {
            let v = inner.next().unwrap_or(f64::NAN);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    nalgebra::Cholesky::new(m).map(|c| c.unpack_dirty()).ok_or_else(|| {
        GpError::Numerical(format!(
            "neighborhood covariance of query {query_index} is not positive definite (nu = {}, tau2 = {})",
            p.nu(),
            p.tau2()
        ))
    })
}

fn solve_posterior(
    l: &DMatrix<f64>,
    mut v: DVector<f64>,
    targets: &[f64],
    sigma2: f64,
    floor: f64,
) -> PosteriorSummary {
    let mut w = DVector::from_column_slice(targets);
    l.solve_lower_triangular_unchecked_mut(&mut v);
    l.solve_lower_triangular_unchecked_mut(&mut w);
    PosteriorSummary {
        mean: v.dot(&w),
        variance: (sigma2 - v.dot(&v)).max(floor),
    }
}

/// Neighborhoods sharing one table of distinct distances, so each kernel
/// is evaluated once per distance.
#[derive(Debug, Clone)]
pub(crate) struct LocalBatch {
    table: Vec<f64>,
    problems: Vec<IndexedProblem>,
}

#[derive(Debug, Clone)]
struct IndexedProblem {
    query_index: usize,
    inner: Vec<u32>,
    cross: Vec<u32>,
    targets: Vec<f64>,
}

impl LocalBatch {
    pub(crate) fn new(problems: &[LocalProblem]) -> Self {
        let mut table: Vec<f64> = problems
            .iter()
            .flat_map(|p| p.inner.iter().chain(&p.cross).copied())
            .collect();
        table.sort_by(f64::total_cmp);
        table.dedup();
        let lookup = |h: &f64| table.binary_search_by(|t| t.total_cmp(h)).unwrap_or(0) as u32;
        let problems = problems
            .iter()
            .map(|p| IndexedProblem {
                query_index: p.query_index,
                inner: p.inner.iter().map(lookup).collect(),
                cross: p.cross.iter().map(lookup).collect(),
                targets: p.targets.clone(),
            })
            .collect();
        LocalBatch { table, problems }
    }

    pub(crate) fn posteriors(&self, kernel: &Matern, floor: f64) -> Result<Vec<PosteriorSummary>> {
        let values: Vec<f64> = self.table.iter().map(|&h| kernel.value(h)).collect();
        let p = kernel.params();
        self.problems
            .iter()
            .map(|q| {
                let k = q.cross.len();
                if k == 0 {
                    return Ok(PosteriorSummary {
                        mean: 0.0,
                        variance: p.sigma2().max(floor),
                    });
                }
                let l = factor(
                    k,
                    q.inner.iter().map(|&t| values[t as usize]),
                    p,
                    q.query_index,
                )?;
                let cross = DVector::from_iterator(k, q.cross.iter().map(|&t| values[t as usize]));
                Ok(solve_posterior(&l, cross, &q.targets, p.sigma2(), floor))
            })
            .collect()
    }
}

/// Mean and variance of the response at `query` given its neighbors.
pub(crate) fn conditional(
    query: &[f64],
    ns: &NeighborSet,
    data: &SpatialDataset,
    kernel: &Matern,
    floor: f64,
) -> Result<PosteriorSummary> {
    LocalProblem::new(query, ns, data).posterior(kernel, floor)
}

fn check_query(query: &[f64], data: &SpatialDataset) -> Result<()> {
    if query.len() != data.dim() {
        return Err(GpError::invalid(format!(
            "query dimension {} does not match data dimension {}",
            query.len(),
            data.dim()
        )));
    }
    Ok(())
}

/// Posterior mean and variance, sharing one factorization.
pub fn posterior(
    query: &[f64],
    ns: &NeighborSet,
    data: &SpatialDataset,
    params: &MaternParams,
) -> Result<PosteriorSummary> {
    check_query(query, data)?;
    conditional(query, ns, data, &Matern::new(*params), VARIANCE_FLOOR)
}

/// Kriging mean `K(x, X_N) K(X_N, X_N)^-1 Y(X_N)`.
pub fn posterior_mean(
    query: &[f64],
    ns: &NeighborSet,
    data: &SpatialDataset,
    params: &MaternParams,
) -> Result<f64> {
    posterior(query, ns, data, params).map(|p| p.mean)
}

/// Kriging variance `K(x, x) - K(x, X_N) K(X_N, X_N)^-1 K(X_N, x)`, floored at
/// [`VARIANCE_FLOOR`].
pub fn posterior_variance(
    query: &[f64],
    ns: &NeighborSet,
    data: &SpatialDataset,
    params: &MaternParams,
) -> Result<f64> {
    posterior(query, ns, data, params).map(|p| p.variance)
}

/// Posteriors for every query, using an existing index over `data`.
pub fn predict_with_index(
    index: &NeighborIndex,
    queries: &Points,
    data: &SpatialDataset,
    params: &MaternParams,
    k: usize,
    loo: bool,
) -> Result<Vec<PosteriorSummary>> {
    if queries.dim() != data.dim() {
        return Err(GpError::invalid("query and training dimensions differ"));
    }
    if loo && queries.len() != data.len() {
        return Err(GpError::invalid(
            "leave-one-out prediction expects the training points as queries",
        ));
    }
    let kernel = Matern::new(*params);
    queries
        .rows()
        .enumerate()
        .map(|(i, q)| {
            let exclude = loo.then_some(i);
            let ns = index.query_knn(q, k, exclude)?.with_query_index(i);
            conditional(q, &ns, data, &kernel, VARIANCE_FLOOR)
        })
        .collect()
}

/// Posteriors for every query from its `k` nearest training points. In
/// leave-one-out mode query `i` is training point `i` and excludes itself.
pub fn predict_batch(
    queries: &Points,
    data: &SpatialDataset,
    params: &MaternParams,
    k: usize,
    loo: bool,
) -> Result<Vec<PosteriorSummary>> {
    let index = NeighborIndex::build(&data.coords)?;
    predict_with_index(&index, queries, data, params, k, loo)
}

fn quadratic_form(ns: &NeighborSet, data: &SpatialDataset, unit: &Matern) -> Result<f64> {
    LocalProblem::new(data.coords.row(ns.query_index()), ns, data).quadratic_form(unit)
}

fn warn_if_degenerate(estimate: f64) {
    if estimate == 0.0 {
        log::warn!("variance-scale estimate is zero; the neighbor targets are all zero");
    }
}

/// Mean over the batch of the per-neighborhood closed-form scale solutions,
/// `(1 / (b k)) sum_i Y_Ni^T K(X_Ni, X_Ni; sigma2 = 1)^-1 Y_Ni`.
pub fn sigma2_mean_estimate(
    batch: &Batch,
    data: &SpatialDataset,
    params: &MaternParams,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(GpError::invalid("empty batch"));
    }
    let unit = Matern::new(params.unit_scale());
    let mut total = 0.0;
    let mut count = 0usize;
    for ns in batch.neighbor_sets() {
        total += quadratic_form(ns, data, &unit)?;
        count += ns.len();
    }
    if count == 0 {
        return Err(GpError::invalid("batch neighborhoods are empty"));
    }
    let estimate = total / count as f64;
    warn_if_degenerate(estimate);
    Ok(estimate)
}

/// Median over the batch of the down-sampled scale solutions, each
/// normalized by its own neighborhood size `k_star`.
pub fn sigma2_downsample_median<R: Rng + ?Sized>(
    batch: &Batch,
    data: &SpatialDataset,
    params: &MaternParams,
    k_star: usize,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(GpError::invalid("empty batch"));
    }
    let unit = Matern::new(params.unit_scale());
    let per_element = batch
        .neighbor_sets()
        .iter()
        .map(|ns| {
            let sub = downsample_neighbors(ns, k_star, rng)?;
            Ok(quadratic_form(&sub, data, &unit)? / k_star as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let estimate =
        median(&per_element).ok_or_else(|| GpError::Numerical("scale solutions are NaN".into()))?;
    warn_if_degenerate(estimate);
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbors::sample_batch;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(sigma2: f64, nu: f64, ell: f64, tau2: f64) -> MaternParams {
        MaternParams::new(sigma2, nu, ell, tau2).unwrap()
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize) -> SpatialDataset {
        let coords = Points::new(2, (0..2 * n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let targets = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        SpatialDataset::new(coords, targets).unwrap()
    }

    /// Gauss-Jordan inverse with partial pivoting.
    fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut m: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = r.clone();
                row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))
                .unwrap();
            m.swap(c, p);
            let piv = m[c][c];
            for v in m[c].iter_mut() {
                *v /= piv;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    let src = m[c].clone();
                    for (v, s) in m[r].iter_mut().zip(src) {
                        *v -= f * s;
                    }
                }
            }
        }
        m.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    fn cov(p: &MaternParams, a: &[f64], b: &[f64]) -> f64 {
        let h: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        crate::kernel::matern_value(h, p).unwrap()
    }

    /// Dense kriging of `query` on the listed training rows.
    fn dense_kriging(
        data: &SpatialDataset,
        rows: &[usize],
        query: &[f64],
        p: &MaternParams,
    ) -> (f64, f64) {
        let k: Vec<Vec<f64>> = rows
            .iter()
            .map(|&i| {
                rows.iter()
                    .map(|&j| {
                        cov(p, data.coords.row(i), data.coords.row(j))
                            + if i == j { p.tau2() } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let kinv = invert(&k);
        let cross: Vec<f64> = rows
            .iter()
            .map(|&i| cov(p, query, data.coords.row(i)))
            .collect();
        let mut mean = 0.0;
        let mut quad = 0.0;
        for a in 0..rows.len() {
            for b in 0..rows.len() {
                mean += cross[a] * kinv[a][b] * data.targets[rows[b]];
                quad += cross[a] * kinv[a][b] * cross[b];
            }
        }
        (mean, p.sigma2() - quad)
    }

    #[test]
    fn coincident_single_neighbor_interpolates() {
        let data =
            SpatialDataset::new(Points::from_rows(&[[0.3, 0.3]]).unwrap(), vec![1.7]).unwrap();
        let ns = NeighborSet::new(0, vec![0], vec![0.0]).unwrap();
        let p = params(1.0, 0.8, 1.0, 0.0);
        let post = posterior(&[0.3, 0.3], &ns, &data, &p).unwrap();
        assert!((post.mean - 1.7).abs() < 1e-14);
        assert_eq!(post.variance, VARIANCE_FLOOR);
    }

    #[test]
    fn constant_field_is_reproduced() {
        let data = SpatialDataset::new(
            Points::from_rows(&[[0.0, 0.0], [0.1, 0.0], [0.0, 0.2], [0.3, 0.3]]).unwrap(),
            vec![2.5; 4],
        )
        .unwrap();
        let index = NeighborIndex::build(&data.coords).unwrap();
        let ns = index.query_knn(&[0.1, 0.0], 4, None).unwrap();
        let m = posterior_mean(&[0.1, 0.0], &ns, &data, &params(1.0, 0.5, 0.5, 0.0)).unwrap();
        assert!((m - 2.5).abs() < 1e-10);
    }

    #[test]
    fn distant_query_recovers_prior_variance() {
        let data = SpatialDataset::new(
            Points::from_rows(&[[0.0, 0.0], [0.1, 0.1]]).unwrap(),
            vec![1.0, -1.0],
        )
        .unwrap();
        let p = params(3.0, 0.5, 0.2, 1e-6);
        let index = NeighborIndex::build(&data.coords).unwrap();
        let q = [20.0, 0.0];
        let ns = index.query_knn(&q, 2, None).unwrap();
        let v = posterior_variance(&q, &ns, &data, &p).unwrap();
        assert!((v - 3.0).abs() < 1e-6 * 3.0);
    }

    #[test]
    fn matches_dense_oracle_twelve_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..5 {
            let data = random_dataset(&mut rng, 12);
            let p = params(1.4, 0.7 + 0.3 * trial as f64, 0.6, 1e-3);
            let index = NeighborIndex::build(&data.coords).unwrap();
            // New location against all twelve points.
            let q = [rng.random::<f64>(), rng.random::<f64>()];
            let ns = index.query_knn(&q, 12, None).unwrap();
            let got = posterior(&q, &ns, &data, &p).unwrap();
            let (m, v) = dense_kriging(&data, &(0..12).collect::<Vec<_>>(), &q, &p);
            assert!((got.mean - m).abs() < 1e-9);
            assert!((got.variance - v).abs() < 1e-9);
            // Leave-one-out with k = n - 1.
            let preds = predict_batch(&data.coords, &data, &p, 11, true).unwrap();
            for (i, pr) in preds.iter().enumerate() {
                let rows: Vec<usize> = (0..12).filter(|&j| j != i).collect();
                let (m, v) = dense_kriging(&data, &rows, data.coords.row(i), &p);
                assert!((pr.mean - m).abs() < 1e-9);
                assert!((pr.variance - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn loo_uses_the_other_points() {
        let data = SpatialDataset::new(
            Points::from_rows(&[[0.0], [0.4], [1.0]]).unwrap(),
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let p = params(1.0, 0.5, 1.0, 1e-4);
        let preds = predict_batch(&data.coords, &data, &p, 2, true).unwrap();
        for (i, pred) in preds.iter().enumerate() {
            let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            let (m, v) = dense_kriging(&data, &others, data.coords.row(i), &p);
            assert!((pred.mean - m).abs() < 1e-12);
            assert!((pred.variance - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_query_batch_equals_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = random_dataset(&mut rng, 30);
        let p = params(1.0, 1.3, 0.4, 1e-6);
        let q = Points::from_rows(&[[0.5, 0.5]]).unwrap();
        let batch = predict_batch(&q, &data, &p, 8, false).unwrap();
        let ns = NeighborIndex::build(&data.coords)
            .unwrap()
            .query_knn(q.row(0), 8, None)
            .unwrap();
        assert_eq!(
            batch[0].mean,
            posterior_mean(q.row(0), &ns, &data, &p).unwrap()
        );
        assert_eq!(
            batch[0].variance,
            posterior_variance(q.row(0), &ns, &data, &p).unwrap()
        );
    }

    #[test]
    fn order_independent_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_dataset(&mut rng, 80);
        let queries: Vec<[f64; 2]> = (0..50).map(|_| [rng.random(), rng.random()]).collect();
        let mut perm: Vec<usize> = (0..50).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let shuffled: Vec<[f64; 2]> = perm.iter().map(|&i| queries[i]).collect();
        let p = params(1.0, 0.9, 0.3, 1e-6);
        let a = predict_batch(&Points::from_rows(&queries).unwrap(), &data, &p, 10, false).unwrap();
        let b =
            predict_batch(&Points::from_rows(&shuffled).unwrap(), &data, &p, 10, false).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(a[i], b[j]);
        }
    }

    #[test]
    fn shared_distance_table_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = random_dataset(&mut rng, 60);
        let mut lattice = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                lattice.push([i as f64 / 7.0, j as f64 / 7.0]);
            }
        }
        let grid = SpatialDataset::new(
            Points::from_rows(&lattice).unwrap(),
            (0..64).map(|i| (i as f64).sin()).collect(),
        )
        .unwrap();
        for data in [data, grid] {
            let index = NeighborIndex::build(&data.coords).unwrap();
            let batch = Batch::build(&index, (0..30).collect(), 9).unwrap();
            let problems: Vec<LocalProblem> = batch
                .neighbor_sets()
                .iter()
                .map(|ns| LocalProblem::new(data.coords.row(ns.query_index()), ns, &data))
                .collect();
            let kernel = Matern::new(params(1.0, 0.8, 0.7, 1e-10));
            let shared = LocalBatch::new(&problems)
                .posteriors(&kernel, VARIANCE_FLOOR)
                .unwrap();
            for (p, s) in problems.iter().zip(&shared) {
                assert_eq!(&p.posterior(&kernel, VARIANCE_FLOOR).unwrap(), s);
            }
        }
    }

    #[test]
    fn factorization_failure_names_query() {
        // Duplicate points with no nugget give a singular neighborhood.
        let data = SpatialDataset::new(
            Points::from_rows(&[[0.0, 0.0], [0.0, 0.0]]).unwrap(),
            vec![1.0, 1.0],
        )
        .unwrap();
        let ns = NeighborSet::new(17, vec![0, 1], vec![0.0, 0.0]).unwrap();
        let err = posterior(&[0.0, 0.0], &ns, &data, &params(1.0, 0.5, 1.0, 0.0)).unwrap_err();
        assert!(
            matches!(err, GpError::Numerical(ref m) if m.contains("17")),
            "{err}"
        );
    }

    #[test]
    fn sigma2_single_neighbor_closed_form() {
        let data = SpatialDataset::new(
            Points::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap(),
            vec![0.0, 1.5],
        )
        .unwrap();
        let index = NeighborIndex::build(&data.coords).unwrap();
        let batch = Batch::build(&index, vec![0], 1).unwrap();
        let tau2 = 0.25;
        let est = sigma2_mean_estimate(&batch, &data, &params(7.0, 0.5, 1.0, tau2)).unwrap();
        assert!((est - 1.5 * 1.5 / (1.0 + tau2)).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let med =
            sigma2_downsample_median(&batch, &data, &params(7.0, 0.5, 1.0, tau2), 1, &mut rng)
                .unwrap();
        assert_eq!(med, est);
    }

    #[test]
    fn sigma2_zero_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut data = random_dataset(&mut rng, 20);
        data.targets.iter_mut().for_each(|t| *t = 0.0);
        let index = NeighborIndex::build(&data.coords).unwrap();
        let batch = Batch::build(&index, vec![0, 3, 7], 5).unwrap();
        let p = params(1.0, 0.5, 0.5, 1e-6);
        assert_eq!(sigma2_mean_estimate(&batch, &data, &p).unwrap(), 0.0);
        assert_eq!(
            sigma2_downsample_median(&batch, &data, &p, 3, &mut rng).unwrap(),
            0.0
        );
    }

    #[test]
    fn sigma2_median_reduces_to_mean_for_one_element() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = random_dataset(&mut rng, 40);
        let index = NeighborIndex::build(&data.coords).unwrap();
        let batch = Batch::build(&index, vec![11], 9).unwrap();
        let p = params(1.0, 1.1, 0.5, 1e-4);
        let mean = sigma2_mean_estimate(&batch, &data, &p).unwrap();
        let med = sigma2_downsample_median(&batch, &data, &p, 9, &mut rng).unwrap();
        assert_eq!(mean, med);
    }

    /// Draw from a dense GP on a random design for the estimator checks.
    fn simulated(seed: u64, n: usize, sigma2: f64, outliers: bool) -> SpatialDataset {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = Points::new(2, (0..2 * n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let p = params(sigma2, 0.5, 0.3, 1e-8);
        let k = crate::kernel::self_covariance(&coords, &p, true);
        let l = k.cholesky().unwrap().unpack();
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        let mut y: Vec<f64> = (l * z).iter().copied().collect();
        if outliers {
            for i in sample_batch(n, n / 10, &mut rng).unwrap() {
                y[i] *= 2.0;
            }
        }
        SpatialDataset::new(coords, y).unwrap()
    }

    #[test]
    fn sigma2_mean_recovers_simulated_scale() {
        let data = simulated(31, 600, 2.0, false);
        let index = NeighborIndex::build(&data.coords).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = Batch::build(&index, sample_batch(600, 200, &mut rng).unwrap(), 20).unwrap();
        let est = sigma2_mean_estimate(&batch, &data, &params(1.0, 0.5, 0.3, 1e-8)).unwrap();
        assert!((1.5..=2.5).contains(&est), "{est}");
    }

    #[test]
    fn sigma2_median_is_more_robust_than_mean() {
        let mut better = 0;
        for seed in 0..20 {
            let data = simulated(100 + seed, 400, 2.0, true);
            let index = NeighborIndex::build(&data.coords).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch =
                Batch::build(&index, sample_batch(400, 150, &mut rng).unwrap(), 20).unwrap();
            let p = params(1.0, 0.5, 0.3, 1e-8);
            let mean = sigma2_mean_estimate(&batch, &data, &p).unwrap();
            let med = sigma2_downsample_median(&batch, &data, &p, 10, &mut rng).unwrap();
            if (med - 2.0).abs() < (mean - 2.0).abs() {
                better += 1;
            }
        }
        assert!(better > 10, "median closer in only {better}/20 seeds");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn dense_equivalence_and_scaling(seed in 0u64..100_000, n in 3usize..30, nu in 0.2f64..2.5, c in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_dataset(&mut rng, n);
            let p = params(1.0, nu, 0.5, 1e-3);
            let preds = predict_batch(&data.coords, &data, &p, n - 1, true).unwrap();
            let mut scaled = data.clone();
            scaled.targets.iter_mut().for_each(|t| *t *= c);
            let spreds = predict_batch(&data.coords, &scaled, &p, n - 1, true).unwrap();
            for i in 0..n {
                let rows: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let (m, v) = dense_kriging(&data, &rows, data.coords.row(i), &p);
                prop_assert!((preds[i].mean - m).abs() < 1e-9);
                prop_assert!((preds[i].variance - v).abs() < 1e-9);
                prop_assert!(preds[i].variance <= p.sigma2() + p.tau2());
                prop_assert!((spreds[i].mean - c * preds[i].mean).abs() <= 1e-9 * c.max(1.0));
                prop_assert_eq!(spreds[i].variance, preds[i].variance);
            }
            let index = NeighborIndex::build(&data.coords).unwrap();
            let batch = Batch::build(&index, vec![0, n - 1], n - 1).unwrap();
            let s1 = sigma2_mean_estimate(&batch, &data, &p).unwrap();
            let s2 = sigma2_mean_estimate(&batch, &scaled, &p).unwrap();
            prop_assert!((s2 - c * c * s1).abs() <= 1e-9 * (c * c * s1).max(1e-12));
        }
    }
}
