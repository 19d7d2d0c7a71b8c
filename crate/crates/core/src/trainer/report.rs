//! Output files: JSON-lines epoch log, metrics and ablation tables as JSON
//! plus aligned text, and the per-instance attention CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::ablate::AblationRow;
use super::epoch::EpochRecord;
use super::evaluate::AttentionRecord;
use super::metrics::MetricsReport;
use super::TrainError;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), TrainError> {
    fs::write(path, contents).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_epoch_log(path: &Path, records: &[EpochRecord]) -> Result<(), TrainError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("epoch records serialize"));
        out.push('\n');
    }
    write(path, out)
}

pub fn metrics_table(m: &MetricsReport) -> String {
    let c = m.confusion;
    let mut s = String::new();
    for (name, v) in [
        ("accuracy", m.accuracy),
        ("precision", m.precision),
        ("recall", m.recall),
        ("f1", m.f1),
        ("roc_auc", m.roc_auc),
    ] {
        writeln!(s, "{name:<10} {v:.4}").unwrap();
    }
    writeln!(
        s,
        "{:<10} tp={} fp={} tn={} fn={}",
        "confusion", c.tp, c.fp, c.tn, c.fn_
    )
    .unwrap();
    s
}

/// Writes `metrics.json` and `metrics.txt` into `dir`.
pub fn write_metrics(dir: &Path, m: &MetricsReport) -> Result<(), TrainError> {
    write(&dir.join("metrics.json"), json(m))?;
    write(&dir.join("metrics.txt"), metrics_table(m))
}

pub fn write_attention_csv(path: &Path, records: &[AttentionRecord]) -> Result<(), TrainError> {
    let csv_err = |source| TrainError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let axis = rows.first().map_or("value".to_string(), |r| r.axis.to_string());
    let width = rows
        .iter()
        .map(|r| r.value.len())
        .chain([axis.len()])
        .max()
        .unwrap_or(5);
    let mut s = format!(
        "{axis:<width$}  {:>8}  {:>9}  {:>8}  {:>8}  {:>8}  {:>10}\n",
        "accuracy", "precision", "recall", "f1", "roc_auc", "final_loss"
    );
    for r in rows {
        let m = &r.metrics;
        writeln!(
            s,
            "{:<width$}  {:>8.4}  {:>9.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>10.4}",
            r.value, m.accuracy, m.precision, m.recall, m.f1, m.roc_auc, r.final_loss.total
        )
        .unwrap();
    }
    s
}

/// Writes `ablation.json` and `ablation.txt` into `dir`.
pub fn write_ablation(dir: &Path, rows: &[AblationRow]) -> Result<(), TrainError> {
    write(&dir.join("ablation.json"), json(rows))?;
    write(&dir.join("ablation.txt"), ablation_table(rows))
}
