//! Exact k-nearest-neighbor search, batch sampling and neighbor down-sampling.

use rand::seq::index::sample;
use rand::Rng;

use crate::data::{sq_dist, Points};
use crate::error::{GpError, Result};

const LEAF_SIZE: usize = 16;

/// The `k` nearest training points of one query, closest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    query_index: usize,
    indices: Vec<usize>,
    distances: Vec<f64>,
}

impl NeighborSet {
    pub fn new(query_index: usize, indices: Vec<usize>, distances: Vec<f64>) -> Result<Self> {
        if indices.len() != distances.len() {
            return Err(GpError::invalid(
                "neighbor indices and distances differ in length",
            ));
        }
        if distances.windows(2).any(|w| !(w[0] <= w[1])) || distances.iter().any(|d| !(*d >= 0.0)) {
            return Err(GpError::invalid(
                "neighbor distances must be non-negative and sorted",
            ));
        }
        let mut seen = indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(GpError::invalid("neighbor indices must be unique"));
        }
        Ok(NeighborSet {
            query_index,
            indices,
            distances,
        })
    }

    pub fn query_index(&self) -> usize {
        self.query_index
    }
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }
    pub fn len(&self) -> usize {
        self.indices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn with_query_index(mut self, query_index: usize) -> Self {
        self.query_index = query_index;
        self
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable kd-tree over a training point set.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Points,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NeighborIndex {
    pub fn build(points: &Points) -> Result<Self> {
        if points.is_empty() {
            return Err(GpError::invalid("cannot index an empty point set"));
        }
        if !points.all_finite() {
            return Err(GpError::invalid("training coordinates must be finite"));
        }
        let mut index = NeighborIndex {
            points: points.clone(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        index.build_node(0, points.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // Split on the dimension of widest spread.
        let dims = self.points.dim();
        let mut best = (0, -1.0);
        for d in 0..dims {
            let (lo, hi) = self.order[start..end].iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &i| {
                    let v = self.points.row(i)[d];
                    (lo.min(v), hi.max(v))
                },
            );
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        let dim = best.0;
        if best.1 <= 0.0 {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts.row(a)[dim].total_cmp(&pts.row(b)[dim])
        });
        let value = self.points.row(self.order[mid])[dim];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    /// Exact `k` nearest neighbors of `query`, skipping `exclude`.
    /// Ties in distance go to the lower training index.
    pub fn query_knn(
        &self,
        query: &[f64],
        k: usize,
        exclude: Option<usize>,
    ) -> Result<NeighborSet> {
        if query.len() != self.points.dim() {
            return Err(GpError::invalid(format!(
                "query has dimension {}, index has {}",
                query.len(),
                self.points.dim()
            )));
        }
        let available = self.len() - usize::from(exclude.is_some_and(|e| e < self.len()));
        if k > available {
            return Err(GpError::invalid(format!(
                "requested {k} neighbors but only {available} candidates exist"
            )));
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(0, query, k, exclude, &mut best);
        }
        Ok(NeighborSet {
            query_index: exclude.unwrap_or(0),
            indices: best.iter().map(|&(_, i)| i).collect(),
            distances: best.iter().map(|&(d2, _)| d2.sqrt()).collect(),
        })
    }

    fn search(
        &self,
        node: usize,
        query: &[f64],
        k: usize,
        exclude: Option<usize>,
        best: &mut Vec<(f64, usize)>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = (sq_dist(query, self.points.row(i)), i);
                    if best.len() == k && !less(cand, best[k - 1]) {
                        continue;
                    }
                    let pos = best.partition_point(|&b| less(b, cand));
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, k, exclude, best);
                // Equal bounds are still visited so index tie-breaks stay exact.
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.search(far, query, k, exclude, best);
                }
            }
        }
    }
}

#[inline]
fn less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// A training batch with the leave-one-out neighbor set of every element.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    element_indices: Vec<usize>,
    neighbor_sets: Vec<NeighborSet>,
}

impl Batch {
    /// Leave-one-out neighborhoods of `elements` within the indexed training set.
    pub fn build(index: &NeighborIndex, elements: Vec<usize>, k: usize) -> Result<Self> {
        let neighbor_sets = elements
            .iter()
            .map(|&e| {
                if e >= index.len() {
                    return Err(GpError::invalid(format!("batch element {e} out of range")));
                }
                index
                    .query_knn(index.points().row(e), k, Some(e))
                    .map(|ns| ns.with_query_index(e))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            element_indices: elements,
            neighbor_sets,
        })
    }

    pub fn element_indices(&self) -> &[usize] {
        &self.element_indices
    }

    pub fn neighbor_sets(&self) -> &[NeighborSet] {
        &self.neighbor_sets
    }

    pub fn len(&self) -> usize {
        self.element_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.element_indices.is_empty()
    }

    /// Same elements with every neighbor set down-sampled to `k_star`.
    pub fn downsample<R: Rng + ?Sized>(&self, k_star: usize, rng: &mut R) -> Result<Batch> {
        let neighbor_sets = self
            .neighbor_sets
            .iter()
            .map(|ns| downsample_neighbors(ns, k_star, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            element_indices: self.element_indices.clone(),
            neighbor_sets,
        })
    }
}

/// `b` distinct indices drawn uniformly from `0..n_train`.
pub fn sample_batch<R: Rng + ?Sized>(n_train: usize, b: usize, rng: &mut R) -> Result<Vec<usize>> {
    if b == 0 || b > n_train {
        return Err(GpError::invalid(format!(
            "batch size {b} must lie in 1..={n_train}"
        )));
    }
    Ok(sample(rng, n_train, b).into_vec())
}

/// Uniform sub-sample of `k_star` neighbors, kept in distance order.
pub fn downsample_neighbors<R: Rng + ?Sized>(
    ns: &NeighborSet,
    k_star: usize,
    rng: &mut R,
) -> Result<NeighborSet> {
    let k = ns.len();
    if k_star == 0 || k_star > k {
        return Err(GpError::invalid(format!(
            "down-sample size {k_star} must lie in 1..={k}"
        )));
    }
    if k_star == k {
        return Ok(ns.clone());
    }
    let mut keep = sample(rng, k, k_star).into_vec();
    keep.sort_unstable();
    Ok(NeighborSet {
        query_index: ns.query_index,
        indices: keep.iter().map(|&p| ns.indices[p]).collect(),
        distances: keep.iter().map(|&p| ns.distances[p]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_force(
        points: &Points,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
    ) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = (0..points.len())
            .filter(|&i| Some(i) != exclude)
            .map(|i| {
                let p = points.row(i);
                let d2: f64 = q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Points {
        Points::new(d, (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn empty_input_rejected() {
        assert!(NeighborIndex::build(&Points::new(2, vec![]).unwrap()).is_err());
    }

    #[test]
    fn single_point_answers_k_zero_only() {
        let idx = NeighborIndex::build(&Points::from_rows(&[[0.5, 0.5]]).unwrap()).unwrap();
        assert!(idx.query_knn(&[0.0, 0.0], 0, None).unwrap().is_empty());
        assert!(idx.query_knn(&[0.0, 0.0], 0, Some(0)).unwrap().is_empty());
        assert!(idx.query_knn(&[0.0, 0.0], 1, Some(0)).is_err());
        assert_eq!(idx.query_knn(&[0.0, 0.0], 1, None).unwrap().indices(), &[0]);
    }

    #[test]
    fn collinear_query() {
        let idx =
            NeighborIndex::build(&Points::from_rows(&[[0.0], [1.0], [2.0]]).unwrap()).unwrap();
        let ns = idx.query_knn(&[0.1], 2, None).unwrap();
        assert_eq!(ns.indices(), &[0, 1]);
        assert!(idx.query_knn(&[0.1], 4, None).is_err());
    }

    #[test]
    fn leave_one_out_excludes_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 20, 2);
        let idx = NeighborIndex::build(&pts).unwrap();
        let ns = idx.query_knn(pts.row(5), 10, Some(5)).unwrap();
        assert!(!ns.indices().contains(&5));
        assert_eq!(ns.len(), 10);
    }

    #[test]
    fn duplicates_are_distinct_neighbors() {
        let pts = Points::from_rows(&[[0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [3.0, 0.0]]).unwrap();
        let idx = NeighborIndex::build(&pts).unwrap();
        let ns = idx.query_knn(&[1.0, 1.0], 2, None).unwrap();
        assert_eq!(ns.indices(), &[1, 2]);
        assert_eq!(ns.distances(), &[0.0, 0.0]);
    }

    #[test]
    fn ties_resolve_to_lower_index() {
        // Lattice with many equidistant points, large enough to need splits.
        let rows: Vec<[f64; 2]> = (0..100)
            .map(|i| [(i / 10) as f64, (i % 10) as f64])
            .collect();
        let pts = Points::from_rows(&rows).unwrap();
        let idx = NeighborIndex::build(&pts).unwrap();
        for q in 0..100 {
            for k in [1, 4, 5, 9, 13] {
                let ns = idx.query_knn(pts.row(q), k, Some(q)).unwrap();
                let want = brute_force(&pts, pts.row(q), k, Some(q));
                assert_eq!(
                    ns.indices(),
                    want.iter().map(|w| w.1).collect::<Vec<_>>().as_slice()
                );
            }
        }
    }

    #[test]
    fn matches_brute_force_200_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = random_points(&mut rng, 200, 2);
        let idx = NeighborIndex::build(&pts).unwrap();
        for _ in 0..20 {
            let q = [rng.random::<f64>(), rng.random::<f64>()];
            let ns = idx.query_knn(&q, 30, None).unwrap();
            let want = brute_force(&pts, &q, 30, None);
            assert_eq!(
                ns.indices(),
                want.iter().map(|w| w.1).collect::<Vec<_>>().as_slice()
            );
            let d: Vec<f64> = want.iter().map(|w| w.0.sqrt()).collect();
            assert_eq!(ns.distances(), d.as_slice());
        }
    }

    #[test]
    fn batch_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut all = sample_batch(10, 10, &mut rng).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let a = sample_batch(10, 1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_batch(10, 1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(sample_batch(10, 11, &mut rng).is_err());
        assert!(sample_batch(10, 0, &mut rng).is_err());
    }

    #[test]
    fn batch_sampling_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut counts = vec![0u32; 1000];
        let reps = 10_000;
        for _ in 0..reps {
            for i in sample_batch(1000, 100, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let p = 0.1;
        let mean = reps as f64 * p;
        let sd = (reps as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 4.0 * sd, "count {c}");
        }
    }

    #[test]
    fn downsample_identity_and_errors() {
        let ns = NeighborSet::new(0, vec![3, 1], vec![0.1, 0.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(downsample_neighbors(&ns, 2, &mut rng).unwrap(), ns);
        assert!(downsample_neighbors(&ns, 3, &mut rng).is_err());
        let a = downsample_neighbors(&ns, 1, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = downsample_neighbors(&ns, 1, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
        assert!(
            a.indices() == [3] && a.distances() == [0.1]
                || a.indices() == [1] && a.distances() == [0.2]
        );
    }

    #[test]
    fn downsample_frequencies() {
        let idx: Vec<usize> = (100..130).collect();
        let dist: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let ns = NeighborSet::new(0, idx, dist).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut counts = [0u32; 30];
        let draws = 10_000;
        for _ in 0..draws {
            let sub = downsample_neighbors(&ns, 15, &mut rng).unwrap();
            assert!(sub.distances().windows(2).all(|w| w[0] <= w[1]));
            for &i in sub.indices() {
                counts[i - 100] += 1;
            }
        }
        let sd = (draws as f64 * 0.25).sqrt();
        for c in counts {
            assert!((c as f64 - 0.5 * draws as f64).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn neighbor_set_validates() {
        assert!(NeighborSet::new(0, vec![1, 1], vec![0.0, 0.1]).is_err());
        assert!(NeighborSet::new(0, vec![1, 2], vec![0.2, 0.1]).is_err());
        assert!(NeighborSet::new(0, vec![1], vec![0.2, 0.1]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn knn_is_exact(seed in 0u64..100_000, n in 2usize..500, d in 1usize..4, k_frac in 0.0f64..1.0, loo in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, n, d);
            let idx = NeighborIndex::build(&pts).unwrap();
            let exclude = if loo { Some(rng.random_range(0..n)) } else { None };
            let q: Vec<f64> = match exclude {
                Some(e) => pts.row(e).to_vec(),
                None => (0..d).map(|_| rng.random::<f64>()).collect(),
            };
            let max_k = n - usize::from(loo);
            let k = ((max_k as f64) * k_frac) as usize;
            let ns = idx.query_knn(&q, k, exclude).unwrap();
            let want = brute_force(&pts, &q, k, exclude);
            let want_idx: Vec<usize> = want.iter().map(|w| w.1).collect();
            prop_assert_eq!(ns.indices(), want_idx.as_slice());
            // Every omitted candidate is at least as far as the farthest kept neighbor.
            if let Some(&far) = ns.distances().last() {
                for i in 0..n {
                    if Some(i) != exclude && !ns.indices().contains(&i) {
                        prop_assert!(sq_dist(&q, pts.row(i)).sqrt() >= far);
                    }
                }
            }
        }

        #[test]
        fn downsample_is_subset(seed in 0u64..10_000, k in 1usize..60, frac in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ns = NeighborSet::new(7, (0..k).map(|i| 3 * i).collect(), (0..k).map(|i| i as f64).collect()).unwrap();
            let k_star = 1 + ((k - 1) as f64 * frac) as usize;
            let sub = downsample_neighbors(&ns, k_star, &mut rng).unwrap();
            prop_assert_eq!(sub.len(), k_star);
            prop_assert_eq!(sub.query_index(), 7);
            for i in sub.indices() {
                prop_assert!(ns.indices().contains(i));
            }
        }
    }
}
