//! Area over the perturbation curve.
//!
//! Square tiles are removed one by one (replaced with uniform noise) and the
//! drop in the originally predicted class probability is averaged over the
//! steps. Tiles never overlap: a candidate tile touching an already perturbed
//! pixel is skipped, so on small images fewer than the requested number of
//! steps may fit. The curve records how many were actually taken.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, ModelSpec};
use crate::tensor::Tensor;

const STREAM_VALUES: u64 = 0;
const STREAM_ORDER: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AopcConfig {
    pub steps: usize,
    /// Odd tile side length.
    pub region: usize,
}

impl Default for AopcConfig {
    fn default() -> Self {
        Self { steps: 100, region: 9 }
    }
}

impl AopcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.region == 0 || self.region % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "AOPC region must be odd, got {}",
                self.region
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    /// `f(x^(0)), ..., f(x^(P))`: probability of the originally predicted class.
    pub scores: Vec<f64>,
    pub region: usize,
    pub requested_steps: usize,
    /// Steps actually taken (`P`); below `requested_steps` when tiles ran out.
    pub steps: usize,
    pub seed: u64,
    pub predicted_class: usize,
}

impl PerturbationCurve {
    pub fn aopc(&self) -> f64 {
        let f0 = self.scores[0];
        self.scores.iter().map(|f| f0 - f).sum::<f64>() / self.scores.len() as f64
    }
}

/// Clipped `region x region` window centred on pixel `(i, j)`.
fn tile(i: usize, j: usize, half: usize, w: usize, h: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    (
        i.saturating_sub(half)..(i + half + 1).min(w),
        j.saturating_sub(half)..(j + half + 1).min(h),
    )
}

/// Tile sums for every centre via a summed-area table.
fn tile_sums(map: &Tensor, half: usize) -> Vec<f64> {
    let (w, h) = (map.shape()[0], map.shape()[1]);
    let mut sat = vec![0.0; (w + 1) * (h + 1)];
    for i in 0..w {
        for j in 0..h {
            sat[(i + 1) * (h + 1) + j + 1] =
                map.data()[i * h + j] + sat[i * (h + 1) + j + 1] + sat[(i + 1) * (h + 1) + j] - sat[i * (h + 1) + j];
        }
    }
    let s = |i: usize, j: usize| sat[i * (h + 1) + j];
    let mut out = Vec::with_capacity(w * h);
    for i in 0..w {
        for j in 0..h {
            let (ri, rj) = tile(i, j, half, w, h);
            out.push(s(ri.end, rj.end) - s(ri.start, rj.end) - s(ri.end, rj.start) + s(ri.start, rj.start));
        }
    }
    out
}

fn perturb(
    model: &ModelSpec,
    x: &Tensor,
    centres: &[usize],
    cfg: &AopcConfig,
    seed: u64,
) -> Result<PerturbationCurve> {
    cfg.validate()?;
    x.check_shape(&model.input_shape())?;
    let [w, h, c] = model.input_shape();
    let probs = nn::predict(model, x)?;
    let class = probs.argmax();
    let mut scores = Vec::with_capacity(cfg.steps + 1);
    scores.push(probs.data()[class]);

    let mut values = ChaCha8Rng::seed_from_u64(seed);
    values.set_stream(STREAM_VALUES);
    let mut taken = vec![false; w * h];
    let mut current = x.clone();
    let half = cfg.region / 2;
    for &centre in centres {
        if scores.len() > cfg.steps {
            break;
        }
        let (ri, rj) = tile(centre / h, centre % h, half, w, h);
        if ri.clone().any(|i| rj.clone().any(|j| taken[i * h + j])) {
            continue;
        }
        for i in ri {
            for j in rj.clone() {
                taken[i * h + j] = true;
                for v in &mut current.data_mut()[(i * h + j) * c..][..c] {
                    *v = values.random_range(0.0..=1.0);
                }
            }
        }
        scores.push(nn::predict(model, &current)?.data()[class]);
    }
    Ok(PerturbationCurve {
        steps: scores.len() - 1,
        scores,
        region: cfg.region,
        requested_steps: cfg.steps,
        seed,
        predicted_class: class,
    })
}

/// AOPC with tiles taken in decreasing order of summed relevance
/// (most relevant first). Equal sums go to the lower pixel index.
pub fn aopc(model: &ModelSpec, x: &Tensor, map: &Tensor, cfg: &AopcConfig, seed: u64) -> Result<(f64, PerturbationCurve)> {
    let [w, h, _] = model.input_shape();
    map.check_shape(&[w, h])?;
    if !map.is_finite() {
        return Err(Error::InvalidArgument("relevance map contains non-finite values".into()));
    }
    cfg.validate()?;
    let sums = tile_sums(map, cfg.region / 2);
    let mut order: Vec<usize> = (0..w * h).collect();
    order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]));
    let curve = perturb(model, x, &order, cfg, seed)?;
    Ok((curve.aopc(), curve))
}

/// AOPC with tiles visited in a seeded uniformly random order.
pub fn random_perturbation_aopc(model: &ModelSpec, x: &Tensor, cfg: &AopcConfig, seed: u64) -> Result<(f64, PerturbationCurve)> {
    let [w, h, _] = model.input_shape();
    let mut order: Vec<usize> = (0..w * h).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_ORDER);
    order.shuffle(&mut rng);
    let curve = perturb(model, x, &order, cfg, seed)?;
    Ok((curve.aopc(), curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_sums_match_direct_summation() {
        let map = Tensor::from_fn(&[7, 5], |i| ((i * 37) % 11) as f64);
        let sums = tile_sums(&map, 1);
        for i in 0..7 {
            for j in 0..5 {
                let (ri, rj) = tile(i, j, 1, 7, 5);
                let direct: f64 = ri.flat_map(|a| rj.clone().map(move |b| (a, b))).map(|(a, b)| map.get(&[a, b])).sum();
                assert_eq!(sums[i * 5 + j], direct);
            }
        }
    }

    #[test]
    fn tiles_are_clipped_at_borders() {
        assert_eq!(tile(0, 0, 4, 64, 64), (0..5, 0..5));
        assert_eq!(tile(63, 30, 4, 64, 64), (59..64, 26..35));
    }

    #[test]
    fn even_region_is_rejected() {
        assert!(AopcConfig { steps: 10, region: 4 }.validate().is_err());
    }
}
