use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ClusterAssignment;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Selected instance indices, ascending, without duplicates.
    pub selected: Vec<usize>,
    pub per_cluster_quota: usize,
    pub cap: usize,
}

impl SamplingPlan {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

fn draw<R: Rng>(rng: &mut R, from: &[usize], amount: usize) -> Vec<usize> {
    index::sample(rng, from.len(), amount)
        .into_iter()
        .map(|i| from[i])
        .collect()
}

/// Draws `min(|c|, k′)` members uniformly without replacement from every
/// cluster; if the union exceeds `cap`, keeps a uniform subset of size `cap`.
/// Small clusters are not topped up from larger ones.
pub fn cluster_sample<R: Rng>(assign: &ClusterAssignment, k_prime: usize, cap: usize, rng: &mut R) -> SamplingPlan {
    let mut selected = Vec::new();
    for c in 0..assign.k {
        let members = assign.members(c);
        let take = members.len().min(k_prime);
        selected.extend(draw(rng, &members, take));
    }
    if selected.len() > cap {
        selected.sort_unstable();
        selected = draw(rng, &selected, cap);
    }
    selected.sort_unstable();
    SamplingPlan {
        selected,
        per_cluster_quota: k_prime,
        cap,
    }
}

/// The `cap` highest-scoring instances, ties broken toward the lower index.
pub fn topk_sample(scores: &[f64], cap: usize) -> SamplingPlan {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(cap);
    order.sort_unstable();
    SamplingPlan {
        selected: order,
        per_cluster_quota: 0,
        cap,
    }
}

pub fn random_sample<R: Rng>(n: usize, cap: usize, rng: &mut R) -> SamplingPlan {
    let mut selected = index::sample(rng, n, n.min(cap)).into_vec();
    selected.sort_unstable();
    SamplingPlan {
        selected,
        per_cluster_quota: 0,
        cap,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn assignment(labels: Vec<usize>, k: usize) -> ClusterAssignment {
        ClusterAssignment {
            k,
            centroids: vec![0.0; k],
            dim: 1,
            inertia: 0.0,
            assignment: labels,
            inertia_traces: Vec::new(),
        }
    }

    fn per_cluster(plan: &SamplingPlan, a: &ClusterAssignment) -> Vec<usize> {
        let mut counts = vec![0; a.k];
        plan.selected.iter().for_each(|&i| counts[a.assignment[i]] += 1);
        counts
    }

    #[test]
    fn eight_clusters_fill_the_cap_exactly() {
        let labels: Vec<usize> = (0..100).map(|i| i % 8).collect();
        let a = assignment(labels, 8);
        let plan = cluster_sample(&a, 8, 64, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(plan.len(), 64);
        assert_eq!(per_cluster(&plan, &a), vec![8; 8]);
    }

    #[test]
    fn small_cluster_contributes_all_members() {
        let mut labels = vec![0; 20];
        labels.extend([1, 1, 1]);
        let a = assignment(labels, 2);
        let plan = cluster_sample(&a, 8, 64, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(per_cluster(&plan, &a), vec![8, 3]);
        assert!(plan.selected.ends_with(&[20, 21, 22]));
    }

    #[test]
    fn small_bag_below_cap() {
        let a = assignment(vec![0, 1, 0, 1, 2, 2, 0, 1, 2, 0], 3);
        let plan = cluster_sample(&a, 8, 64, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(plan.selected, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk_sample(&[0.1, 0.9, 0.5], 2).selected, vec![1, 2]);
        assert_eq!(topk_sample(&[0.3, 0.3, 0.3], 2).selected, vec![0, 1]);
        assert_eq!(topk_sample(&[0.3, 0.1], 5).selected, vec![0, 1]);
    }

    #[test]
    fn random_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(random_sample(5, 10, &mut rng).selected, vec![0, 1, 2, 3, 4]);
        let p = random_sample(100, 64, &mut rng);
        assert_eq!(p.len(), 64);
        assert!(p.selected.windows(2).all(|w| w[0] < w[1]));
        let a = random_sample(100, 64, &mut ChaCha8Rng::seed_from_u64(8));
        let b = random_sample(100, 64, &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn topk_matches_full_sort(scores in prop::collection::vec(-5.0f64..5.0, 1..40), cap in 1usize..50) {
            let plan = topk_sample(&scores, cap);
            // Oracle: stable sort by descending score, take the prefix.
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
            let mut want: Vec<usize> = idx.into_iter().take(cap).collect();
            want.sort();
            prop_assert_eq!(plan.selected, want);
        }

        #[test]
        fn cluster_sample_respects_quota_and_cap(
            labels in prop::collection::vec(0usize..6, 1..120),
            k_prime in 1usize..10,
            cap in 1usize..70,
            seed in any::<u64>(),
        ) {
            let a = assignment(labels.clone(), 6);
            let plan = cluster_sample(&a, k_prime, cap, &mut ChaCha8Rng::seed_from_u64(seed));
            let n = labels.len();
            prop_assert!(plan.len() <= n.min(cap));
            prop_assert!(plan.selected.windows(2).all(|w| w[0] < w[1]));
            let sizes = a.cluster_sizes();
            let drawn = per_cluster(&plan, &a);
            let union: usize = sizes.iter().map(|&s| s.min(k_prime)).sum();
            for c in 0..6 {
                if union <= cap {
                    prop_assert_eq!(drawn[c], sizes[c].min(k_prime));
                } else {
                    prop_assert!(drawn[c] <= sizes[c].min(k_prime));
                }
            }
            prop_assert_eq!(plan.len(), union.min(cap));
        }
    }
}
