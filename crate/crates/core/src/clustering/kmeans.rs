use std::collections::HashSet;

use rand::Rng;

use super::{sq_dist, ClusterError, EmbeddingMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansOptions {
    pub k: usize,
    pub max_iter: usize,
    /// Converged once no centroid moves farther than this.
    pub tol: f64,
    pub restarts: usize,
}

impl KMeansOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iter: 100,
            tol: 1e-6,
            restarts: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    /// Effective cluster count (≤ requested k).
    pub k: usize,
    pub assignment: Vec<usize>,
    /// `k × l`, row-major.
    pub centroids: Vec<f64>,
    pub dim: usize,
    pub inertia: f64,
    /// Inertia after every assignment step, one trace per restart.
    pub inertia_traces: Vec<Vec<f64>>,
}

impl ClusterAssignment {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == c)
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.assignment.iter().for_each(|&c| sizes[c] += 1);
        sizes
    }

    /// Groups of positions in `subset` that share a cluster, in cluster order.
    /// `subset` holds instance indices; groups hold positions into `subset`.
    pub fn groups_within(&self, subset: &[usize]) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k];
        for (pos, &i) in subset.iter().enumerate() {
            groups[self.assignment[i]].push(pos);
        }
        groups.retain(|g| !g.is_empty());
        groups
    }
}

fn distinct_rows(h: &EmbeddingMatrix) -> usize {
    let mut seen = HashSet::new();
    for r in 0..h.rows() {
        // `+ 0.0` folds -0.0 into 0.0 so equal points hash equally.
        let key: Vec<u64> = h.row(r).iter().map(|v| (v + 0.0).to_bits()).collect();
        seen.insert(key);
    }
    seen.len()
}

/// Nearest centroid per point (ties to the lowest index) and the total cost.
fn assign(h: &EmbeddingMatrix, centroids: &[f64], k: usize) -> (Vec<usize>, f64) {
    let dim = h.cols();
    let mut labels = Vec::with_capacity(h.rows());
    let mut inertia = 0.0;
    for r in 0..h.rows() {
        let x = h.row(r);
        let mut best = 0;
        let mut best_d = sq_dist(x, &centroids[..dim]);
        for c in 1..k {
            let d = sq_dist(x, &centroids[c * dim..(c + 1) * dim]);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        labels.push(best);
        inertia += best_d;
    }
    (labels, inertia)
}

fn plus_plus_init<R: Rng>(h: &EmbeddingMatrix, k: usize, rng: &mut R) -> Vec<f64> {
    let n = h.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(h.row(i), h.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just past the final sum.
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            unreachable!("effective k never exceeds the number of distinct rows")
        };
        chosen.push(next);
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(h.row(i), h.row(next)));
        }
    }
    chosen.iter().flat_map(|&i| h.row(i).iter().copied()).collect()
}

/// Centroid update. Empty clusters are reseeded with the point farthest from
/// its own centroid, which is moved into the empty cluster.
fn update(h: &EmbeddingMatrix, labels: &mut [usize], k: usize) -> Vec<f64> {
    let dim = h.cols();
    let recompute = |labels: &[usize]| {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (r, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            sums[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(h.row(r))
                .for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                sums[c * dim..(c + 1) * dim].iter_mut().for_each(|s| *s *= inv);
            }
        }
        (sums, counts)
    };
    let (mut centroids, mut counts) = recompute(labels);
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let far = (0..h.rows())
            .filter(|&r| counts[labels[r]] > 1)
            .map(|r| (r, sq_dist(h.row(r), &centroids[labels[r] * dim..(labels[r] + 1) * dim])))
            .fold(None::<(usize, f64)>, |best, (r, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((r, d)),
            })
            .map(|(r, _)| r)
            .expect("k never exceeds the number of points");
        labels[far] = empty;
        (centroids, counts) = recompute(labels);
    }
    centroids
}

fn lloyd<R: Rng>(
    h: &EmbeddingMatrix,
    k: usize,
    opts: &KMeansOptions,
    rng: &mut R,
) -> (Vec<usize>, Vec<f64>, f64, Vec<f64>) {
    let dim = h.cols();
    let mut centroids = plus_plus_init(h, k, rng);
    let (mut labels, mut inertia) = assign(h, &centroids, k);
    let mut trace = vec![inertia];
    for _ in 0..opts.max_iter {
        let mut repaired = labels.clone();
        let next = update(h, &mut repaired, k);
        let shift = (0..k)
            .map(|c| sq_dist(&next[c * dim..(c + 1) * dim], &centroids[c * dim..(c + 1) * dim]).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        let (new_labels, new_inertia) = assign(h, &centroids, k);
        let changed = new_labels != repaired;
        debug_assert!(
            new_inertia <= inertia + 1e-12 * (1.0 + inertia),
            "Lloyd step increased inertia: {inertia} -> {new_inertia}"
        );
        labels = new_labels;
        inertia = new_inertia;
        trace.push(inertia);
        if !changed || shift < opts.tol {
            break;
        }
    }
    (labels, centroids, inertia, trace)
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs.
///
/// The effective k is `min(k, N, distinct rows)`. The returned assignment
/// is always the nearest-centroid assignment for the returned centroids.
pub fn kmeans<R: Rng>(
    h: &EmbeddingMatrix,
    opts: &KMeansOptions,
    rng: &mut R,
) -> Result<ClusterAssignment, ClusterError> {
    if opts.k == 0 {
        return Err(ClusterError::InvalidK(0));
    }
    let k = opts.k.min(h.rows()).min(distinct_rows(h));
    let mut best: Option<ClusterAssignment> = None;
    let mut traces = Vec::new();
    for _ in 0..opts.restarts.max(1) {
        let (labels, centroids, inertia, trace) = lloyd(h, k, opts, rng);
        traces.push(trace);
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(ClusterAssignment {
                k,
                assignment: labels,
                centroids,
                dim: h.cols(),
                inertia,
                inertia_traces: Vec::new(),
            });
        }
    }
    let mut best = best.expect("at least one restart");
    best.inertia_traces = traces;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn two_obvious_clusters() {
        let h =
            EmbeddingMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]]).unwrap();
        let a = kmeans(&h, &KMeansOptions::new(2), &mut rng()).unwrap();
        assert!((a.inertia - 1.0).abs() < 1e-12);
        let mut cents = vec![a.centroid(0).to_vec(), a.centroid(1).to_vec()];
        cents.sort_by(|x, y| x[0].total_cmp(&y[0]));
        assert_eq!(cents, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
    }

    #[test]
    fn identical_points_collapse_to_one_cluster() {
        let h = EmbeddingMatrix::from_rows(&vec![vec![0.3, -0.2]; 6]).unwrap();
        let a = kmeans(&h, &KMeansOptions::new(4), &mut rng()).unwrap();
        assert_eq!(a.k, 1);
        assert!(a.inertia < 1e-24);
    }

    #[test]
    fn k_equal_n_gives_zero_inertia() {
        let h = EmbeddingMatrix::from_rows(&[vec![0.0], vec![1.0], vec![5.0], vec![-2.0]]).unwrap();
        let a = kmeans(&h, &KMeansOptions::new(4), &mut rng()).unwrap();
        assert_eq!(a.k, 4);
        assert_eq!(a.inertia, 0.0);
        let mut sorted = a.assignment.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn zero_k_is_rejected() {
        let h = EmbeddingMatrix::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(
            kmeans(&h, &KMeansOptions::new(0), &mut rng()),
            Err(ClusterError::InvalidK(0))
        );
    }

    #[test]
    fn empty_cluster_is_reseeded_from_farthest_point() {
        let h = EmbeddingMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![9.0]]).unwrap();
        // Cluster 1 starts empty.
        let mut labels = vec![0, 0, 0, 0];
        let cents = update(&h, &mut labels, 2);
        assert_eq!(labels, vec![0, 0, 0, 1]);
        assert_eq!(cents, vec![1.0, 9.0]);
    }
}
