//! Composite objective `α·L_bag + β·L_instance + γ·L_kl`, in nats.
//!
//! The plain functions take probabilities and are used for logging and as
//! test references; [`composite_loss`] builds the same quantity on a tape.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, Real, Tape, Var};
use crate::model::BagForward;

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.01,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_wsi: f64,
    pub l_patch: f64,
    pub l_kld: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            l_wsi: sum(|b| b.l_wsi),
            l_patch: sum(|b| b.l_patch),
            l_kld: sum(|b| b.l_kld),
            total: sum(|b| b.total),
        }
    }
}

pub fn bag_ce(probs: [f64; 2], label: u8) -> f64 {
    -probs[label as usize].max(PROB_FLOOR).ln()
}

/// Every instance is scored against the bag label; averaged over instances.
pub fn instance_ce(probs: &[[f64; 2]], bag_label: u8) -> f64 {
    probs.iter().map(|p| bag_ce(*p, bag_label)).sum::<f64>() / probs.len() as f64
}

/// Positions grouped by cluster index, in ascending cluster order.
pub fn cluster_groups(assignment: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in assignment.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Mean over clusters with ≥ 2 members of `KL(p_c ‖ uniform)`, where `p_c`
/// is the attention restricted to the cluster and renormalized.
pub fn kld_uniform(a: &[f64], assignment: &[usize]) -> f64 {
    assert_eq!(a.len(), assignment.len(), "one cluster index per attention weight");
    let groups: Vec<Vec<usize>> = cluster_groups(assignment)
        .into_iter()
        .filter(|g| g.len() >= 2)
        .collect();
    if groups.is_empty() {
        return 0.0;
    }
    let kl: f64 = groups
        .iter()
        .map(|g| {
            let s: f64 = g.iter().map(|&i| a[i]).sum();
            let m = g.len() as f64;
            g.iter()
                .map(|&i| {
                    let p = a[i] / s;
                    p * (p * m).ln()
                })
                .sum::<f64>()
        })
        .sum();
    kl / groups.len() as f64
}

pub fn total_loss(l_wsi: f64, l_patch: f64, l_kld: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        l_wsi,
        l_patch,
        l_kld,
        total: w.alpha * l_wsi + w.beta * l_patch + w.gamma * l_kld,
    }
}

pub struct LossVars {
    pub total: Var,
    pub l_wsi: Var,
    pub l_patch: Var,
    pub l_kld: Var,
}

impl LossVars {
    pub fn breakdown<T: Real>(&self, tape: &Tape<T>) -> LossBreakdown {
        LossBreakdown {
            l_wsi: tape.scalar(self.l_wsi).as_f64(),
            l_patch: tape.scalar(self.l_patch).as_f64(),
            l_kld: tape.scalar(self.l_kld).as_f64(),
            total: tape.scalar(self.total).as_f64(),
        }
    }
}

/// Builds the composite loss for one bag. `groups` lists positions of the
/// forwarded instances that share a cluster. Without attention (mean
/// pooling) the weights are implicitly uniform and the KL term is zero.
pub fn composite_loss<T: Real>(
    tape: &mut Tape<T>,
    fwd: &BagForward,
    label: u8,
    groups: &[Vec<usize>],
    w: &LossWeights,
) -> Result<LossVars, DiffError> {
    if label > 1 {
        return Err(DiffError::Contract(format!("bag label must be 0 or 1, got {label}")));
    }
    let logp = tape.ln_clamped(fwd.bag_probs, PROB_FLOOR)?;
    let picked = tape.element(logp, label as usize)?;
    let l_wsi = tape.scale(picked, -1.0)?;

    let logq = tape.ln_clamped(fwd.instance_probs, PROB_FLOOR)?;
    let col = tape.column(logq, label as usize)?;
    let mean = tape.mean(col)?;
    let l_patch = tape.scale(mean, -1.0)?;

    let l_kld = match fwd.attention {
        Some(a) => tape.grouped_kl_uniform(a, groups)?,
        None => {
            let zero = crate::diffcore::Tensor::scalar(T::zero());
            tape.constant(zero)?
        }
    };

    // Same association order as `total_loss`.
    let a = tape.scale(l_wsi, w.alpha)?;
    let b = tape.scale(l_patch, w.beta)?;
    let c = tape.scale(l_kld, w.gamma)?;
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(LossVars {
        total,
        l_wsi,
        l_patch,
        l_kld,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn bag_ce_examples() {
        assert!((bag_ce([0.5, 0.5], 0) - 2f64.ln()).abs() < 1e-15);
        assert!((bag_ce([0.5, 0.5], 1) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(bag_ce([1.0, 0.0], 0), 0.0);
        assert!((bag_ce([0.2, 0.8], 1) - 0.2231435513142097).abs() < 1e-12);
        assert!((bag_ce([1.0, 0.0], 1) - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn instance_ce_examples() {
        assert!((instance_ce(&[[0.5, 0.5]; 4], 1) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(instance_ce(&[[0.0, 1.0], [0.0, 1.0]], 1), 0.0);
        let want = (-(0.9f64.ln()) - 0.6f64.ln()) / 2.0;
        assert!((instance_ce(&[[0.9, 0.1], [0.6, 0.4]], 0) - want).abs() < 1e-15);
        assert!((want - 0.3081).abs() < 1e-4);
        assert_eq!(instance_ce(&[[0.3, 0.7]], 1), bag_ce([0.3, 0.7], 1));
    }

    #[test]
    fn kld_examples() {
        assert_eq!(kld_uniform(&[0.25; 4], &[0, 0, 1, 1]), 0.0);
        let hand = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        let got = kld_uniform(&[0.45, 0.05, 0.5], &[3, 3, 7]);
        assert!((got - hand).abs() < 1e-12);
        assert!((got - 0.3681).abs() < 1e-4);
        assert_eq!(kld_uniform(&[0.2, 0.3, 0.5], &[0, 1, 2]), 0.0);
    }

    #[test]
    fn total_examples() {
        let b = total_loss(0.7, 0.6, 0.3, &LossWeights::default());
        assert!((b.total - 0.736).abs() < 1e-12);
        let no_kl = LossWeights {
            gamma: 0.0,
            ..Default::default()
        };
        assert_eq!(
            total_loss(0.7, 0.6, 123.0, &no_kl).total,
            total_loss(0.7, 0.6, 0.0, &no_kl).total
        );
        assert_eq!(total_loss(0.0, 0.0, 0.0, &LossWeights::default()).total, 0.0);
    }

    fn simplex(raw: Vec<f64>) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(raw in prop::collection::vec(0.01f64..1.0, 1..30), seed in any::<u64>()) {
            let a = simplex(raw);
            let assignment: Vec<usize> = (0..a.len()).map(|i| ((seed >> (i % 60)) & 3) as usize).collect();
            prop_assert!(kld_uniform(&a, &assignment) >= -1e-15);
        }

        #[test]
        fn kl_vanishes_for_within_cluster_uniform(levels in prop::collection::vec(0.1f64..2.0, 1..5), sizes in prop::collection::vec(1usize..6, 1..5)) {
            let mut raw = Vec::new();
            let mut assignment = Vec::new();
            for (c, (&lvl, &size)) in levels.iter().zip(&sizes).enumerate() {
                raw.extend(std::iter::repeat_n(lvl, size));
                assignment.extend(std::iter::repeat_n(c, size));
            }
            prop_assert!(kld_uniform(&simplex(raw), &assignment).abs() <= 1e-10);
        }

        #[test]
        fn doubling_gamma_doubles_kl_contribution(l in 0.0f64..5.0, p in 0.0f64..5.0, k in 0.0f64..5.0, g in 0.0f64..2.0) {
            let w1 = LossWeights { gamma: g, ..Default::default() };
            let w2 = LossWeights { gamma: 2.0 * g, ..Default::default() };
            let base = total_loss(l, p, 0.0, &w1).total;
            let d1 = total_loss(l, p, k, &w1).total - base;
            let d2 = total_loss(l, p, k, &w2).total - base;
            prop_assert!((d2 - 2.0 * d1).abs() <= 1e-12 * (1.0 + base.abs()));
        }
    }
}
