//! Class activation maps over the last convolutional block.

use rayon::prelude::*;

use super::{check_class, AttributionMap, Method};
use crate::error::{Error, Result};
use crate::nn::{self, ModelSpec};
use crate::tensor::Tensor;

/// Align-corners bilinear resize of a `[sw, sh]` grid to `[w, h]`.
pub fn upsample_bilinear(map: &Tensor, w: usize, h: usize) -> Result<Tensor> {
    let &[sw, sh] = map.shape() else {
        return Err(Error::InvalidArgument(format!(
            "upsampling needs a 2-D grid, got shape {:?}",
            map.shape()
        )));
    };
    if w < sw || h < sh {
        return Err(Error::InvalidArgument(format!(
            "cannot upsample {sw}x{sh} to the smaller {w}x{h}"
        )));
    }
    // source coordinate of each target index: lower cell and weight of the upper one
    let axis = |src: usize, dst: usize| -> Vec<(usize, f64)> {
        (0..dst)
            .map(|t| {
                if src == 1 || dst == 1 {
                    return (0, 0.0);
                }
                let pos = t as f64 * (src - 1) as f64 / (dst - 1) as f64;
                let lo = (pos.floor() as usize).min(src - 2);
                (lo, pos - lo as f64)
            })
            .collect()
    };
    let (ai, aj) = (axis(sw, w), axis(sh, h));
    let g = map.data();
    let at = |i: usize, j: usize| g[i * sh + j];
    let mut out = Vec::with_capacity(w * h);
    for &(i0, fi) in &ai {
        let i1 = (i0 + 1).min(sw - 1);
        for &(j0, fj) in &aj {
            let j1 = (j0 + 1).min(sh - 1);
            let top = at(i0, j0) * (1.0 - fj) + at(i0, j1) * fj;
            let bottom = at(i1, j0) * (1.0 - fj) + at(i1, j1) * fj;
            out.push(top * (1.0 - fi) + bottom * fi);
        }
    }
    Tensor::new(vec![w, h], out)
}

fn feature_layer(model: &ModelSpec, method: &'static str) -> Result<usize> {
    model.feature_layer_index().ok_or_else(|| Error::UnsupportedLayer {
        method,
        kind: "model without a convolutional layer".into(),
    })
}

/// Channel `k` of a `[fw, fh, K]` feature tensor as a `[fw, fh]` grid.
fn channel(features: &Tensor, k: usize) -> Tensor {
    let (fw, fh, kk) = (features.shape()[0], features.shape()[1], features.shape()[2]);
    let data = features.data().iter().skip(k).step_by(kk).copied().collect();
    Tensor::new(vec![fw, fh], data).expect("channel slice")
}

/// Grad-CAM: spatially averaged score gradients weight the feature maps.
pub fn grad_cam(model: &ModelSpec, x: &Tensor, class: usize) -> Result<AttributionMap> {
    check_class(model, class)?;
    let fi = feature_layer(model, "gradcam")?;
    let (_, trace) = nn::forward(model, x)?;
    let grads = nn::backward(model, &trace, class)?;
    let a = trace.layer_output(fi);
    let g = &grads.layer_outputs[fi];
    let (fw, fh, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = (fw * fh) as f64;
    let mut weights = vec![0.0; k];
    for px in g.data().chunks_exact(k) {
        for (wk, &gv) in weights.iter_mut().zip(px) {
            *wk += gv;
        }
    }
    weights.iter_mut().for_each(|v| *v /= n);
    let cam = a
        .data()
        .chunks_exact(k)
        .map(|px| px.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>().max(0.0))
        .collect();
    let cam = Tensor::new(vec![fw, fh], cam)?;
    let [w, h, _] = model.input_shape();
    AttributionMap::new(upsample_bilinear(&cam, w, h)?, Method::GradCam, class)
}

/// Min-max scaling to `[0, 1]`; a constant grid becomes all zeros.
fn normalize(t: &Tensor) -> Tensor {
    let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        t.map(|v| (v - lo) / (hi - lo))
    } else {
        t.map(|_| 0.0)
    }
}

/// Score-CAM: each feature map, used as an input mask, is weighted by the
/// softmax of the class scores the masked inputs receive.
pub fn score_cam(model: &ModelSpec, x: &Tensor, class: usize) -> Result<AttributionMap> {
    check_class(model, class)?;
    let fi = feature_layer(model, "scorecam")?;
    let (_, trace) = nn::forward(model, x)?;
    let a = trace.layer_output(fi);
    let k = a.shape()[2];
    let [w, h, c] = model.input_shape();
    let masks: Vec<Tensor> = (0..k)
        .map(|ch| Ok(normalize(&upsample_bilinear(&channel(a, ch), w, h)?)))
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = masks
        .par_iter()
        .map(|m| {
            let masked = Tensor::from_fn(&[w, h, c], |idx| x.data()[idx] * m.data()[idx / c]);
            Ok(nn::logits(model, &masked)?.data()[class])
        })
        .collect::<Result<_>>()?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut out = vec![0.0; w * h];
    for (m, e) in masks.iter().zip(&exps) {
        let wk = e / total;
        for (o, &v) in out.iter_mut().zip(m.data()) {
            *o += wk * v;
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    AttributionMap::new(Tensor::new(vec![w, h], out)?, Method::ScoreCam, class)
}
