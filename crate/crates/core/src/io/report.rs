//! CSV reports. Floats are written with the shortest representation that
//! parses back to the same value.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::atomic::write_atomic;
use crate::dataprep::FoldAssignment;
use crate::ensemble::SweepRow;
use crate::error::{Error, Result};
use crate::metrics::{CategoryStats, SetReport, Subset};

fn write_csv<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<&mut dyn std::io::Write>) -> csv::Result<()>,
{
    write_atomic(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        fill(&mut wr).map_err(std::io::Error::other)?;
        wr.flush()
    })
}

/// Reads every row of a headed CSV file.
pub fn read_csv_rows<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::InvalidParameter(format!("{}: {other:?}", path.display())),
        })?;
    rd.deserialize()
        .collect::<csv::Result<Vec<T>>>()
        .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
}

/// One line of a metrics report: a case, or an aggregate named `mean[subset]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsCsvRow {
    pub case_id: String,
    pub dice: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub max_gt_volume: Option<usize>,
    pub mini: Option<bool>,
}

pub fn aggregate_row_id(subset: Subset) -> String {
    format!("mean[{subset}]")
}

pub fn write_metrics_csv(path: impl AsRef<Path>, report: &SetReport) -> Result<()> {
    let mut rows = Vec::with_capacity(report.cases.len() + report.aggregates.len());
    for c in &report.cases {
        let m = &c.metrics;
        rows.push(MetricsCsvRow {
            case_id: c.case_id.clone(),
            dice: m.dice,
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            max_gt_volume: Some(c.max_gt_volume),
            mini: Some(c.mini),
        });
    }
    for a in &report.aggregates {
        rows.push(MetricsCsvRow {
            case_id: aggregate_row_id(a.subset),
            dice: a.dice,
            tp: a.tp,
            fp: a.fp,
            fn_: a.fn_,
            precision: a.precision,
            recall: a.recall,
            f1: a.f1,
            max_gt_volume: None,
            mini: None,
        });
    }
    write_csv(path.as_ref(), |w| rows.iter().try_for_each(|r| w.serialize(r)))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsCsvRow>> {
    read_csv_rows(path)
}

#[derive(Serialize, Deserialize)]
struct SweepCsvRow {
    lambda: f64,
    p_t: f64,
    subset: Subset,
    dice: f64,
    f1: f64,
    precision: f64,
    recall: f64,
    rank: f64,
}

/// Columns: `lambda,p_t,subset,dice,f1,precision,recall,rank`.
pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    write_csv(path.as_ref(), |w| {
        rows.iter().try_for_each(|r| {
            w.serialize(SweepCsvRow {
                lambda: r.lambda,
                p_t: r.p_t,
                subset: r.subset,
                dice: r.dice,
                f1: r.f1,
                precision: r.precision,
                recall: r.recall,
                rank: r.rank,
            })
        })
    })
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    Ok(read_csv_rows::<SweepCsvRow>(path)?
        .into_iter()
        .map(|r| SweepRow {
            lambda: r.lambda,
            p_t: r.p_t,
            subset: r.subset,
            dice: r.dice,
            f1: r.f1,
            precision: r.precision,
            recall: r.recall,
            rank: r.rank,
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct FoldRow {
    case_id: String,
    fold: usize,
}

/// Columns: `case_id,fold`, sorted by case id.
pub fn write_folds_csv(path: impl AsRef<Path>, folds: &FoldAssignment) -> Result<()> {
    write_csv(path.as_ref(), |w| {
        folds.folds.iter().try_for_each(|(id, &fold)| {
            w.serialize(FoldRow {
                case_id: id.clone(),
                fold,
            })
        })
    })
}

pub fn read_folds_csv(path: impl AsRef<Path>, k: usize) -> Result<FoldAssignment> {
    let rows: Vec<FoldRow> = read_csv_rows(path)?;
    let mut folds = BTreeMap::new();
    for r in rows {
        if r.fold >= k {
            return Err(Error::InvalidParameter(format!("case {} in fold {} >= k = {k}", r.case_id, r.fold)));
        }
        if folds.insert(r.case_id.clone(), r.fold).is_some() {
            return Err(Error::DuplicateCase(r.case_id));
        }
    }
    Ok(FoldAssignment { k, folds })
}

#[derive(Serialize)]
struct StatsRow<'a> {
    strategy: String,
    connectivity: u32,
    scans: usize,
    category: &'a str,
    lesions: Option<usize>,
    voxels: usize,
    mean_voxels_per_scan: f64,
}

/// One row per category.
pub fn write_stats_csv(path: impl AsRef<Path>, stats: &CategoryStats) -> Result<()> {
    write_csv(path.as_ref(), |w| {
        for (c, name) in stats.category_names.iter().enumerate() {
            w.serialize(StatsRow {
                strategy: stats.strategy.to_string(),
                connectivity: stats.connectivity.neighbors(),
                scans: stats.scans,
                category: name,
                lesions: stats.lesion_counts.as_ref().map(|l| l[c]),
                voxels: stats.voxel_counts[c],
                mean_voxels_per_scan: stats.mean_voxels_per_scan[c],
            })?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{evaluate_set, EvalCase, EvalOptions};
    use crate::Mask;

    #[test]
    fn metrics_round_trip() {
        let mut a = Mask::zeros([6, 6, 6]).unwrap();
        a.set(1, 1, 1, 1);
        let mut b = a.clone();
        b.set(4, 4, 4, 1);
        let cases = [
            EvalCase {
                case_id: "b",
                pred: &a,
                gt: &b,
            },
            EvalCase {
                case_id: "a",
                pred: &a,
                gt: &a,
            },
        ];
        let report = evaluate_set(&cases, &EvalOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &report).unwrap();
        let rows = read_metrics_csv(&p).unwrap();
        assert_eq!(rows[0].case_id, "a");
        assert_eq!(rows[1].dice, report.cases[1].metrics.dice);
        assert_eq!(rows[2].case_id, "mean[all]");
        assert_eq!(rows[2].max_gt_volume, None);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("case_id,dice,tp,fp,fn,precision,recall,f1,max_gt_volume,mini\n"));
    }

    #[test]
    fn sweep_floats_are_exact() {
        let rows = vec![SweepRow {
            lambda: 0.1 + 0.2,
            p_t: 0.7000000000000001,
            subset: Subset::Mini,
            dice: 1.0 / 3.0,
            f1: 0.0,
            precision: 1.0,
            recall: 2.0 / 7.0,
            rank: 1.5,
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_sweep_csv(&p, &rows).unwrap();
        assert_eq!(read_sweep_csv(&p).unwrap(), rows);
    }

    #[test]
    fn folds_round_trip() {
        let mut folds = BTreeMap::new();
        folds.insert("x".to_string(), 1);
        folds.insert("y".to_string(), 0);
        let fa = FoldAssignment { k: 2, folds };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_folds_csv(&p, &fa).unwrap();
        assert_eq!(read_folds_csv(&p, 2).unwrap(), fa);
        assert!(read_folds_csv(&p, 1).is_err());
    }
}
