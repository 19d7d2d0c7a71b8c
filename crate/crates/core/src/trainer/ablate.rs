use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::epoch::train;
use super::evaluate::evaluate;
use super::metrics::MetricsReport;
use super::{SamplingStrategy, TrainConfig, TrainError};
use crate::bagdata::Bag;
use crate::loss::LossBreakdown;
use crate::model::Pooling;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    K,
    Gamma,
    Sampling,
    Pooling,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::K => "k",
            AblationAxis::Gamma => "gamma",
            AblationAxis::Sampling => "sampling",
            AblationAxis::Pooling => "pooling",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "k" => Ok(AblationAxis::K),
            "gamma" => Ok(AblationAxis::Gamma),
            "sampling" => Ok(AblationAxis::Sampling),
            "pooling" => Ok(AblationAxis::Pooling),
            _ => Err(format!(
                "unknown ablation axis {s:?} (expected k, gamma, sampling or pooling)"
            )),
        }
    }
}

impl AblationAxis {
    pub fn apply(self, base: &TrainConfig, value: &str) -> Result<TrainConfig, TrainError> {
        let bad = |e: String| TrainError::Config(format!("{self} value {value:?}: {e}"));
        let mut cfg = base.clone();
        match self {
            AblationAxis::K => cfg.k = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            AblationAxis::Gamma => {
                cfg.weights.gamma = value
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
            }
            AblationAxis::Sampling => cfg.sampling_strategy = value.parse::<SamplingStrategy>().map_err(bad)?,
            AblationAxis::Pooling => cfg.pooling = value.parse::<Pooling>().map_err(bad)?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub value: String,
    pub metrics: MetricsReport,
    pub final_loss: LossBreakdown,
}

/// One full train + test evaluation per value, all with the base seed.
pub fn ablate(
    train_bags: &[Bag],
    test_bags: &[&Bag],
    base: &TrainConfig,
    axis: AblationAxis,
    values: &[String],
) -> Result<Vec<AblationRow>, TrainError> {
    if values.is_empty() {
        return Err(TrainError::Config("ablation needs at least one value".into()));
    }
    let configs: Vec<TrainConfig> = values.iter().map(|v| axis.apply(base, v)).collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(&configs) {
        let outcome = train(train_bags, cfg)?;
        let eval = evaluate(test_bags, &outcome.model, cfg.pooling, None)?;
        rows.push(AblationRow {
            axis,
            value: value.clone(),
            metrics: eval.metrics,
            final_loss: outcome.records.last().map(|r| r.loss).unwrap_or_default(),
        });
    }
    Ok(rows)
}
