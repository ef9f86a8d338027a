//! Report files: learning-curve CSVs, metric tables, multi-run summaries
//! and the run manifest.
//!
//! Every writer is deterministic — fixed column order, fixed row order and
//! shortest round-tripping float formatting — so rerunning a seeded
//! pipeline reproduces each file byte for byte. Wall-clock timings belong
//! in the manifest only.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{ClassMetrics, EvalMetrics};
use crate::train::{EpochStat, MultiRunSummary};

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Per-epoch learning curves: `epoch,train_loss,val_loss,train_acc,val_acc`.
pub fn write_curves_csv(path: &Path, history: &[EpochStat]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "epoch,train_loss,val_loss,train_acc,val_acc").map_err(io)?;
    for s in history {
        writeln!(
            w,
            "{},{},{},{},{}",
            s.epoch, s.train_loss, s.val_loss, s.train_acc, s.val_acc
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<EpochStat>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(file);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| -> Result<f64> {
            let raw = row.get(i).unwrap_or("");
            raw.parse().map_err(|_| Error::BadRow {
                line: row.position().map(|p| p.line()).unwrap_or(0),
                column: format!("field {i}"),
                value: raw.to_string(),
                reason: "not a number".into(),
            })
        };
        out.push(EpochStat {
            epoch: field(0)? as usize,
            train_loss: field(1)?,
            val_loss: field(2)?,
            train_acc: field(3)?,
            val_acc: field(4)?,
        });
    }
    Ok(out)
}

const METRICS_HEADER: &str = "split,n,accuracy,precision_delay_insensitive,\
recall_delay_insensitive,precision_interactive,recall_interactive,\
zero_denominator,cm_00,cm_01,cm_10,cm_11";

/// One row per evaluated split, confusion cells included so the file fully
/// reconstructs the metrics.
pub fn write_metrics_csv(path: &Path, rows: &[(&str, &EvalMetrics)]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{METRICS_HEADER}").map_err(io)?;
    for (split, m) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            split,
            m.n,
            m.accuracy,
            m.per_class[0].precision,
            m.per_class[0].recall,
            m.per_class[1].precision,
            m.per_class[1].recall,
            m.zero_denominator_flag,
            m.confusion[0][0],
            m.confusion[0][1],
            m.confusion[1][0],
            m.confusion[1][1],
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, EvalMetrics)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(Error::MalformedDataset(format!(
            "unexpected metrics header in {}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let bad = |i: usize, reason: &str| Error::BadRow {
            line: row.position().map(|p| p.line()).unwrap_or(0),
            column: format!("field {i}"),
            value: row.get(i).unwrap_or("").to_string(),
            reason: reason.into(),
        };
        let float = |i: usize| -> Result<f64> {
            row.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|_| bad(i, "not a number"))
        };
        let count = |i: usize| -> Result<usize> {
            row.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|_| bad(i, "not a count"))
        };
        let flag: bool = row
            .get(7)
            .unwrap_or("")
            .parse()
            .map_err(|_| bad(7, "not a boolean"))?;
        let confusion = [[count(8)?, count(9)?], [count(10)?, count(11)?]];
        let per_class = [
            ClassMetrics {
                precision: float(3)?,
                recall: float(4)?,
                zero_denominator: flag
                    && (confusion[0][0] + confusion[1][0] == 0
                        || confusion[0][0] + confusion[0][1] == 0),
            },
            ClassMetrics {
                precision: float(5)?,
                recall: float(6)?,
                zero_denominator: flag
                    && (confusion[0][1] + confusion[1][1] == 0
                        || confusion[1][0] + confusion[1][1] == 0),
            },
        ];
        out.push((
            row.get(0).unwrap_or("").to_string(),
            EvalMetrics {
                confusion,
                accuracy: float(2)?,
                per_class,
                n: count(1)?,
                zero_denominator_flag: flag,
            },
        ));
    }
    Ok(out)
}

/// Cross-run summary table: `metric,min,mean,std,max`.
pub fn write_summary_csv(path: &Path, summary: &MultiRunSummary) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "metric,min,mean,std,max").map_err(io)?;
    for (name, s) in &summary.rows {
        writeln!(w, "{name},{},{},{},{}", s.min, s.mean, s.std, s.max).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Plain `key=value` lines, in the given order.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for (k, v) in entries {
        writeln!(w, "{k}={v}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::compute_metrics;
    use crate::train::{summarize, StatLine};

    fn sample_history() -> Vec<EpochStat> {
        vec![
            EpochStat {
                epoch: 0,
                train_loss: 0.1 + 0.2,
                val_loss: 1.0 / 3.0,
                train_acc: 0.625,
                val_acc: 0.5,
            },
            EpochStat {
                epoch: 1,
                train_loss: 0.25,
                val_loss: f64::MIN_POSITIVE,
                train_acc: 1.0,
                val_acc: 0.999_999_999_999_999_9,
            },
        ]
    }

    #[test]
    fn curves_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let history = sample_history();
        write_curves_csv(&path, &history).unwrap();
        let back = read_curves_csv(&path).unwrap();
        assert_eq!(back, history);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss,train_acc,val_acc\n"));
    }

    #[test]
    fn curve_writes_are_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_curves_csv(&a, &sample_history()).unwrap();
        write_curves_csv(&b, &sample_history()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn metrics_roundtrip_exactly() {
        let labels = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let preds = [1, 1, 1, 0, 1, 1, 0, 0, 0, 0];
        let test = compute_metrics(&preds, &labels).unwrap();
        let val = compute_metrics(&[0, 0, 1], &[0, 1, 1]).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&path, &[("val", &val), ("test", &test)]).unwrap();
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "val");
        assert_eq!(back[0].1, val);
        assert_eq!(back[1].0, "test");
        assert_eq!(back[1].1, test);
    }

    #[test]
    fn metrics_reader_rejects_foreign_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("other.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(
            read_metrics_csv(&path),
            Err(Error::MalformedDataset(_))
        ));
    }

    #[test]
    fn summary_table_lists_metric_rows() {
        let stats = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let summary = MultiRunSummary {
            n_runs: 5,
            rows: vec![
                ("test_accuracy".into(), stats),
                (
                    "test_recall_interactive".into(),
                    StatLine {
                        min: 0.5,
                        mean: 0.625,
                        std: 0.0,
                        max: 0.75,
                    },
                ),
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_summary_csv(&path, &summary).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "metric,min,mean,std,max");
        assert_eq!(lines[1], format!("test_accuracy,1,3,{},5", 2.0f64.sqrt()));
        assert_eq!(lines[2], "test_recall_interactive,0.5,0.625,0,0.75");
    }

    #[test]
    fn manifest_preserves_order_and_format() {
        let entries = vec![
            ("seed".to_string(), "42".to_string()),
            ("lr".to_string(), format!("{}", 0.01)),
            ("dataset_hash".to_string(), format!("{:016x}", 0xabcdu64)),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        write_manifest(&path, &entries).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "seed=42\nlr=0.01\ndataset_hash=000000000000abcd\n");
    }
}
