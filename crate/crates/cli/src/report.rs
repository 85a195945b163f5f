//! Biased vs. unbiased comparison: per-cell Welch tests plus the accuracy
//! matrix, AOPC table and provenance, bundled into `report.json`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use biasbench_core::metrics::welch_t_test;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SeedsConfig};
use crate::pipeline::{ACCURACY_CSV, AOPC_CSV, EVALUATION_JSON, METRICS_CSV, SAMPLES_CSV};
use crate::tables::{read_csv, write_csv, write_json, AccuracyRow, AopcRow, MetricRow, SampleRow, TTestRow};

pub const TTEST_CSV: &str = "ttest.csv";
pub const REPORT_JSON: &str = "report.json";

/// `(gt_object, method, metric, class)`
pub type Cell = (String, String, String, usize);

/// Per-sample RMA/RRA values of one network condition, keyed by cell.
/// Cells without samples are present with no values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultSet {
    pub cells: BTreeMap<Cell, Vec<f64>>,
}

impl ResultSet {
    /// Collects the `biased` (or unbiased) networks' rows. `metrics` fixes
    /// the cell set, `samples` supplies the values pooled over networks.
    pub fn collect(metrics: &[MetricRow], samples: &[SampleRow], biased: bool) -> Self {
        let mut cells: BTreeMap<Cell, Vec<f64>> = BTreeMap::new();
        for m in metrics.iter().filter(|m| m.biased == biased) {
            cells.entry((m.gt_object.clone(), m.method.clone(), m.metric.clone(), m.class)).or_default();
        }
        for s in samples.iter().filter(|s| s.biased == biased && (s.metric == "rma" || s.metric == "rra")) {
            cells
                .entry((s.gt_object.clone(), s.method.clone(), s.metric.clone(), s.class))
                .or_default()
                .push(s.value);
        }
        Self { cells }
    }
}

fn cell_name(c: &Cell) -> String {
    format!("{}/{}/{}/class{}", c.1, c.2, c.0, c.3)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Welch test per cell. Both sets must cover the same cells.
pub fn compare(biased: &ResultSet, unbiased: &ResultSet, alpha: f64) -> Result<Vec<TTestRow>> {
    let only = |a: &ResultSet, b: &ResultSet| -> Vec<String> {
        a.cells.keys().filter(|k| !b.cells.contains_key(*k)).map(cell_name).collect()
    };
    let (only_b, only_u) = (only(biased, unbiased), only(unbiased, biased));
    if !only_b.is_empty() || !only_u.is_empty() {
        let mut msg = String::from("result sets cover different cells");
        if !only_b.is_empty() {
            msg += &format!("; only in biased: {}", only_b.join(", "));
        }
        if !only_u.is_empty() {
            msg += &format!("; only in unbiased: {}", only_u.join(", "));
        }
        bail!(msg);
    }
    biased
        .cells
        .iter()
        .map(|(cell, a)| {
            let b = &unbiased.cells[cell];
            let test = if a.len() >= 2 && b.len() >= 2 {
                Some(welch_t_test(a, b).with_context(|| format!("t-test for {} failed", cell_name(cell)))?)
            } else {
                None
            };
            let p = test.as_ref().map(|t| t.p);
            Ok(TTestRow {
                gt_object: cell.0.clone(),
                method: cell.1.clone(),
                metric: cell.2.clone(),
                class: cell.3,
                t: test.as_ref().map(|t| t.t),
                df: test.as_ref().map(|t| t.df),
                p,
                p_underflow: test.as_ref().is_some_and(|t| t.p_underflow),
                reject: p.is_some_and(|p| p <= alpha),
                n_biased: a.len(),
                n_unbiased: b.len(),
                mean_biased: mean(a),
                mean_unbiased: mean(b),
            })
        })
        .collect()
}

/// Mean accuracy over networks, indexed `[network_biased][dataset_biased]`
/// with `true` first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub biased_network: AccuracyPair,
    pub unbiased_network: AccuracyPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPair {
    pub biased_test: Option<f64>,
    pub unbiased_test: Option<f64>,
}

pub fn accuracy_matrix(rows: &[AccuracyRow]) -> AccuracyMatrix {
    let cell = |net: bool, data: bool| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.network_biased == net && r.dataset_biased == data)
            .map(|r| r.accuracy)
            .collect();
        mean(&v)
    };
    let pair = |net| AccuracyPair {
        biased_test: cell(net, true),
        unbiased_test: cell(net, false),
    };
    AccuracyMatrix {
        biased_network: pair(true),
        unbiased_network: pair(false),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub config: RunConfig,
    pub seeds: SeedsConfig,
    pub versions: BTreeMap<String, String>,
    pub files: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub scenario: String,
    pub alpha: f64,
    pub accuracy_matrix: AccuracyMatrix,
    pub accuracy: Vec<AccuracyRow>,
    pub metrics: Vec<MetricRow>,
    pub ttests: Vec<TTestRow>,
    pub aopc: Vec<AopcRow>,
    pub provenance: Provenance,
}

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("biasbench".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("model_format".to_string(), biasbench_core::nn::MODEL_VERSION.to_string()),
        ("tensor_format".to_string(), biasbench_core::binio::TENSOR_VERSION.to_string()),
    ])
}

fn digest(dir: &Path, name: &str) -> Result<FileDigest> {
    let bytes = std::fs::read(dir.join(name)).with_context(|| format!("cannot read {}", dir.join(name).display()))?;
    Ok(FileDigest {
        name: name.to_string(),
        sha256: hex::encode(Sha256::digest(bytes)),
    })
}

/// Reads the evaluation tables from `results`, runs the comparison and
/// writes `ttest.csv` and `report.json` next to them.
pub fn report(cfg: &RunConfig, results: &Path) -> Result<ReportBundle> {
    for name in [SAMPLES_CSV, METRICS_CSV, AOPC_CSV, ACCURACY_CSV] {
        let path = results.join(name);
        if !path.exists() {
            bail!("missing {} (run `evaluate` first)", path.display());
        }
    }
    let samples: Vec<SampleRow> = read_csv(&results.join(SAMPLES_CSV))?;
    let metrics: Vec<MetricRow> = read_csv(&results.join(METRICS_CSV))?;
    let aopc: Vec<AopcRow> = read_csv(&results.join(AOPC_CSV))?;
    let accuracy: Vec<AccuracyRow> = read_csv(&results.join(ACCURACY_CSV))?;

    let ttests = compare(
        &ResultSet::collect(&metrics, &samples, true),
        &ResultSet::collect(&metrics, &samples, false),
        cfg.metrics.alpha,
    )?;
    write_csv(&results.join(TTEST_CSV), &ttests)?;

    let files = [SAMPLES_CSV, METRICS_CSV, AOPC_CSV, ACCURACY_CSV, EVALUATION_JSON, TTEST_CSV]
        .into_iter()
        .filter(|n| results.join(n).exists())
        .map(|n| digest(results, n))
        .collect::<Result<Vec<_>>>()?;
    let bundle = ReportBundle {
        scenario: cfg.scenario.to_string(),
        alpha: cfg.metrics.alpha,
        accuracy_matrix: accuracy_matrix(&accuracy),
        accuracy,
        metrics,
        ttests,
        aopc,
        provenance: Provenance {
            config_hash: cfg.hash(),
            config: cfg.clone(),
            seeds: cfg.seeds,
            versions: versions(),
            files,
        },
    };
    write_json(&results.join(REPORT_JSON), &bundle)?;
    Ok(bundle)
}
