//! Scores for relevance maps: mass and rank accuracy against ground-truth
//! masks, perturbation curves (AOPC), aggregation and Welch's t-test.

mod aopc;
mod stats;

use serde::{Deserialize, Serialize};

pub use aopc::{aopc, random_perturbation_aopc, AopcConfig, PerturbationCurve};
pub use stats::{aggregate, welch_t_test, GroupKey, MetricRecord, MetricsTable, SummaryRow, TTestResult};

use crate::binio::Mask;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GtProvenance {
    Object,
    Marker,
    Dilated,
}

/// Non-empty ground-truth region.
#[derive(Debug, Clone, PartialEq)]
pub struct GtMask {
    mask: Mask,
    provenance: GtProvenance,
}

impl GtMask {
    pub fn new(mask: Mask, provenance: GtProvenance) -> Result<Self> {
        if mask.count() == 0 {
            return Err(Error::InvalidArgument("ground-truth mask is empty".into()));
        }
        Ok(Self { mask, provenance })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn provenance(&self) -> GtProvenance {
        self.provenance
    }

    /// Number of set pixels, `K`.
    pub fn k(&self) -> usize {
        self.mask.count()
    }
}

fn check_map(map: &Tensor, gt: &GtMask) -> Result<()> {
    map.check_shape(&[gt.mask.width(), gt.mask.height()])?;
    if !map.is_finite() {
        return Err(Error::InvalidArgument("relevance map contains non-finite values".into()));
    }
    Ok(())
}

/// Share of the total relevance that falls inside the mask.
pub fn relevance_mass_accuracy(map: &Tensor, gt: &GtMask) -> Result<f64> {
    check_map(map, gt)?;
    if let Some(v) = map.data().iter().find(|&&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!("relevance map has negative value {v}")));
    }
    let total = map.sum();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    let inside: f64 = map
        .data()
        .iter()
        .zip(gt.mask.bits())
        .filter(|(_, &b)| b)
        .map(|(v, _)| v)
        .sum();
    Ok(inside / total)
}

/// Fraction of the `K` highest-ranked pixels that lie inside the mask, where
/// `K` is the mask size. Equal values rank by pixel index.
pub fn relevance_rank_accuracy(map: &Tensor, gt: &GtMask) -> Result<f64> {
    check_map(map, gt)?;
    let k = gt.k();
    let v = map.data();
    let mut order: Vec<usize> = (0..v.len()).collect();
    // stable sort keeps index order among ties
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    let bits = gt.mask.bits();
    let hits = order[..k].iter().filter(|&&p| bits[p]).count();
    Ok(hits as f64 / k as f64)
}

/// Grows the mask with 3x3 dilations until it holds at least
/// `ceil(area_factor * K)` pixels or fills the image.
pub fn dilate_gt(gt: &GtMask, area_factor: f64) -> Result<GtMask> {
    if !(area_factor >= 1.0 && area_factor.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "area factor must be at least 1, got {area_factor}"
        )));
    }
    let target = (area_factor * gt.k() as f64).ceil() as usize;
    let mut mask = gt.mask.clone();
    let (w, h) = (mask.width(), mask.height());
    while mask.count() < target.min(mask.len()) {
        let prev = mask.clone();
        mask = Mask::from_fn(w, h, |i, j| {
            (i.saturating_sub(1)..=(i + 1).min(w - 1))
                .any(|a| (j.saturating_sub(1)..=(j + 1).min(h - 1)).any(|b| prev.get(a, b)))
        });
    }
    let provenance = if mask == gt.mask { gt.provenance } else { GtProvenance::Dilated };
    Ok(GtMask { mask, provenance })
}
