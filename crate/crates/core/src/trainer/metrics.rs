use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
    pub confusion: Confusion,
}

/// Mann-Whitney estimate: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. 0.5 when either class is absent.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    // Midranks over tie blocks, then the rank-sum formula.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos * n_neg) as f64
}

/// Precision (recall) is 0 when nothing is predicted (labelled) positive.
pub fn compute_metrics(labels: &[u8], predictions: &[u8], scores: &[f64]) -> MetricsReport {
    let mut c = Confusion::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, _) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    MetricsReport {
        accuracy: ratio(c.tp + c.tn, labels.len()),
        precision,
        recall,
        f1,
        roc_auc: roc_auc(labels, scores),
        confusion: c,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn pair_count_auc(labels: &[u8], scores: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_example() {
        let labels = [0, 0, 1, 1];
        let scores = [0.1, 0.4, 0.35, 0.8];
        assert_eq!(roc_auc(&labels, &scores), 0.75);
        assert_eq!(pair_count_auc(&labels, &scores), 0.75);
    }

    #[test]
    fn perfect_classifier() {
        let labels: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let scores: Vec<f64> = labels.iter().map(|&l| l as f64 * 0.8 + 0.1).collect();
        let m = compute_metrics(&labels, &labels, &scores);
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1, m.roc_auc),
            (1.0, 1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn no_positive_predictions() {
        let m = compute_metrics(&[1, 0, 1], &[0, 0, 0], &[0.2, 0.1, 0.3]);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            m.confusion,
            Confusion {
                tp: 0,
                fp: 0,
                tn: 1,
                fn_: 2
            }
        );
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(pairs in prop::collection::vec((0u8..2, 0u8..6), 2..40)) {
            let labels: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            // Coarse scores force plenty of ties.
            let scores: Vec<f64> = pairs.iter().map(|p| p.1 as f64 / 5.0).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            prop_assert!((roc_auc(&labels, &scores) - pair_count_auc(&labels, &scores)).abs() < 1e-12);
        }

        #[test]
        fn report_is_consistent(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..40)) {
            let labels: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let preds: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let scores: Vec<f64> = preds.iter().map(|&p| p as f64).collect();
            let m = compute_metrics(&labels, &preds, &scores);
            let c = m.confusion;
            prop_assert_eq!(c.tp + c.fp + c.tn + c.fn_, labels.len());
            prop_assert!((m.accuracy - (c.tp + c.tn) as f64 / labels.len() as f64).abs() < 1e-15);
            if m.precision + m.recall > 0.0 {
                prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-15);
            }
            for v in [m.accuracy, m.precision, m.recall, m.f1, m.roc_auc] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
