//! `evaluate` and `stats`: per-image IoU tables and their comparison.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use metamorph_core::dataset::{load_dataset, DatasetLayout};
use metamorph_core::imaging::{self, IoUReport};
use metamorph_core::oracle::SegmentationOracle;
use metamorph_core::stats::{
    cohens_d, summarize_distribution, wilcoxon_signed_rank, CohensDResult, DistributionSummary, PairedSamples,
    WilcoxonMode, WilcoxonResult, QUANTILE_METHOD,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{io_err, CliError};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub report: IoUReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    /// Mean of per-image means; `None` for an empty dataset.
    pub miou: Option<f64>,
}

pub fn evaluate_dataset(
    root: &Path,
    layout: &DatasetLayout,
    oracle: &dyn SegmentationOracle,
) -> Result<EvalTable, CliError> {
    let index = load_dataset(root, layout)?;
    let rows: Vec<EvalRow> = index
        .entries
        .par_iter()
        .map(|e| {
            let (img, labels) = e.load()?;
            let pred = oracle.segment(&img)?;
            let report = imaging::iou(&pred, &labels).map_err(|err| CliError::Failed(err.to_string()))?;
            Ok(EvalRow {
                id: e.id.clone(),
                report,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let miou = (!rows.is_empty()).then(|| rows.iter().map(|r| r.report.mean_iou).sum::<f64>() / rows.len() as f64);
    Ok(EvalTable { rows, miou })
}

fn per_class_field(r: &IoUReport) -> String {
    r.per_class
        .iter()
        .map(|(c, v)| format!("{c}:{v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// CSV with header `id,mean_iou,per_class`; `per_class` is `class:iou;...`.
pub fn write_eval_csv<W: std::io::Write>(table: &EvalTable, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "mean_iou", "per_class"])?;
    for r in &table.rows {
        w.write_record([r.id.clone(), r.report.mean_iou.to_string(), per_class_field(&r.report)])?;
    }
    w.flush().map_err(|e| CliError::Failed(e.to_string()))?;
    Ok(())
}

/// Reads `id,mean_iou` pairs from an evaluate table (extra columns ignored).
pub fn read_iou_table(path: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        mean_iou: f64,
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in r.deserialize::<Row>() {
        let row = row?;
        if out.insert(row.id.clone(), row.mean_iou).is_some() {
            return Err(CliError::Config(format!("{}: duplicate id `{}`", path.display(), row.id)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub method_a: String,
    pub method_b: String,
    pub wilcoxon: WilcoxonResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub pairs: Vec<PairResult>,
    /// Method A against the concatenated per-image scores of every B method.
    pub cohens_d: Option<CohensDResult>,
    pub cohens_d_grouping: String,
    pub summaries: BTreeMap<String, DistributionSummary>,
    pub quantile_method: String,
    pub images: Vec<String>,
}

/// A named per-image score table.
pub type Method = (String, BTreeMap<String, f64>);

/// Paired comparisons of `a` against each of `bs`; all tables must cover
/// the same ids.
pub fn compare(a: &Method, bs: &[Method], mode: WilcoxonMode) -> Result<StatsReport, CliError> {
    let ids: Vec<String> = a.1.keys().cloned().collect();
    let values = |m: &Method| -> Result<Vec<f64>, CliError> {
        if m.1.len() != ids.len() || !ids.iter().all(|id| m.1.contains_key(id)) {
            return Err(CliError::Config(format!(
                "method `{}` does not cover the same images as `{}`",
                m.0, a.0
            )));
        }
        Ok(ids.iter().map(|id| m.1[id]).collect())
    };
    let va = values(a)?;
    let mut pairs = Vec::new();
    let mut pooled = Vec::new();
    let mut summaries = BTreeMap::new();
    summaries.insert(a.0.clone(), summarize_distribution(&va)?);
    for b in bs {
        let vb = values(b)?;
        let samples = PairedSamples::labeled(va.clone(), vb.clone(), &a.0, &b.0)?;
        pairs.push(PairResult {
            method_a: a.0.clone(),
            method_b: b.0.clone(),
            wilcoxon: wilcoxon_signed_rank(&samples, mode)?,
        });
        summaries.insert(b.0.clone(), summarize_distribution(&vb)?);
        pooled.extend(vb);
    }
    Ok(StatsReport {
        pairs,
        cohens_d: cohens_d(&va, &pooled).ok(),
        cohens_d_grouping: "pooled: method A vs concatenated per-image scores of all B methods".into(),
        summaries,
        quantile_method: QUANTILE_METHOD.into(),
        images: ids,
    })
}

/// Writes `stats.csv`, `report.json` and `violin.csv` into `dir`.
pub fn write_stats(dir: &Path, report: &StatsReport, methods: &[&Method]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut w = csv::Writer::from_path(dir.join("stats.csv"))?;
    w.write_record(["method_a", "method_b", "statistic", "p_value", "mode", "n_effective"])?;
    for p in &report.pairs {
        w.write_record([
            p.method_a.clone(),
            p.method_b.clone(),
            p.wilcoxon.statistic.to_string(),
            p.wilcoxon.p_value.to_string(),
            p.wilcoxon.mode.as_str().to_string(),
            p.wilcoxon.n_effective.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(dir))?;

    let mut v = csv::Writer::from_path(dir.join("violin.csv"))?;
    v.write_record(["method", "image", "iou"])?;
    for (name, table) in methods {
        for (id, iou) in table {
            v.write_record([name.as_str(), id.as_str(), &iou.to_string()])?;
        }
    }
    v.flush().map_err(io_err(dir))?;

    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&json_path, json).map_err(io_err(&json_path))
}
