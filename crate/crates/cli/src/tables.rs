//! Row types of the CSV and JSON artifacts and their readers/writers.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// One attribution map on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEntry {
    pub network: String,
    pub method: String,
    pub sample_id: String,
    pub class: usize,
    /// Relative to the maps directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSamples {
    pub network: String,
    pub biased: bool,
    pub evaluated: usize,
    /// Correctly predicted sample ids; only these get maps.
    pub correct: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapsManifest {
    pub config_hash: String,
    pub split: String,
    pub networks: Vec<NetworkSamples>,
    pub entries: Vec<MapEntry>,
}

/// `samples.csv`: one metric value for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub network: String,
    pub scenario: String,
    pub biased: bool,
    pub method: String,
    pub class: usize,
    pub gt_object: String,
    pub metric: String,
    pub sample_id: String,
    pub value: f64,
}

/// `metrics.csv`: mean and sample standard deviation per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub network: String,
    pub scenario: String,
    pub biased: bool,
    pub method: String,
    pub class: usize,
    pub gt_object: String,
    pub metric: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

/// `aopc.csv`: mean relevance-ordered and random-order AOPC per class group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AopcRow {
    pub network: String,
    pub scenario: String,
    pub biased: bool,
    pub method: String,
    pub group: String,
    pub value: Option<f64>,
    pub n: usize,
    pub random: Option<f64>,
    /// Mean number of perturbation steps that fit.
    pub steps: Option<f64>,
}

/// `accuracy.csv`: one network on one test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub network: String,
    pub network_biased: bool,
    pub dataset_biased: bool,
    pub split: String,
    pub accuracy: f64,
    pub n: usize,
}

/// `ttest.csv`: biased vs. unbiased networks for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestRow {
    pub gt_object: String,
    pub method: String,
    pub metric: String,
    pub class: usize,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    pub p_underflow: bool,
    pub reject: bool,
    pub n_biased: usize,
    pub n_unbiased: usize,
    pub mean_biased: Option<f64>,
    pub mean_unbiased: Option<f64>,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for r in rows {
        w.serialize(r).with_context(|| format!("cannot write {}", path.display()))?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .with_context(|| format!("malformed {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))
}
