use rayon::prelude::*;

use super::{check_class, AttributionMap, Method, MethodConfig};
use crate::error::Result;
use crate::nn::{self, ModelSpec};
use crate::tensor::Tensor;

/// Integrated Gradients with a constant baseline and a right-Riemann sum
/// over `cfg.ig_steps` points on the straight path from baseline to `x`.
pub fn integrated_gradients(model: &ModelSpec, x: &Tensor, class: usize, cfg: &MethodConfig) -> Result<AttributionMap> {
    cfg.validate()?;
    check_class(model, class)?;
    x.check_shape(&model.input_shape())?;
    let m = cfg.ig_steps;
    let b = cfg.ig_baseline;
    let grads: Vec<Tensor> = (1..=m)
        .into_par_iter()
        .map(|k| {
            let alpha = k as f64 / m as f64;
            let point = x.map(|v| b + alpha * (v - b));
            let (_, trace) = nn::forward(model, &point)?;
            Ok(nn::backward(model, &trace, class)?.input)
        })
        .collect::<Result<_>>()?;
    // summed in step order so the result does not depend on scheduling
    let mut avg = vec![0.0; x.len()];
    for g in &grads {
        for (a, &v) in avg.iter_mut().zip(g.data()) {
            *a += v;
        }
    }
    let data = avg
        .iter()
        .zip(x.data())
        .map(|(g, &v)| (v - b) * g / m as f64)
        .collect();
    AttributionMap::new(Tensor::new(x.shape().to_vec(), data)?, Method::Ig, class)
}
