use super::{check_class, AttributionMap, Method, MethodConfig};
use crate::error::{Error, Result};
use crate::nn::{self, global_avg_pool_spread, maxpool_route, Layer, ModelSpec};
use crate::tensor::Tensor;

/// `z + eps * sign(z)` with `sign(0) = +1`.
fn stabilize(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

/// Epsilon rule for a linear layer: `R_j = a_j * sum_k w_jk R_k / stab(z_k)`.
/// `transpose` applies `W^T` to a vector over the layer's outputs.
pub(crate) fn epsilon_rule(
    a: &[f64],
    z: &[f64],
    r_out: &[f64],
    eps: f64,
    transpose: impl FnOnce(&[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let s: Vec<f64> = z.iter().zip(r_out).map(|(&z, &r)| r / stabilize(z, eps)).collect();
    transpose(&s).iter().zip(a).map(|(c, a)| a * c).collect()
}

/// Epsilon-LRP starting from the pre-softmax score of `class`.
pub fn lrp_epsilon(model: &ModelSpec, x: &Tensor, class: usize, cfg: &MethodConfig) -> Result<AttributionMap> {
    cfg.validate()?;
    check_class(model, class)?;
    let eps = cfg.lrp_epsilon;
    let (_, trace) = nn::forward(model, x)?;
    let softmax_idx = model.num_layers() - 1;
    let mut r = vec![0.0; model.num_classes()];
    r[class] = trace.logits().data()[class];
    for idx in (0..softmax_idx).rev() {
        let a = trace.layer_input(idx).data();
        let z = trace.layer_output(idx).data();
        let s = model.layer_input_shape(idx);
        r = match &model.layers()[idx] {
            Layer::Dense(d) => epsilon_rule(a, z, &r, eps, |v| d.input_grad(v)),
            Layer::Conv2d(c) => epsilon_rule(a, z, &r, eps, |v| c.input_grad(v, s[0], s[1])),
            Layer::Relu => r,
            Layer::Maxpool2 => maxpool_route(a, &r, s[0], s[1], s[2]),
            Layer::GlobalAvgPool => {
                let n = s[0] * s[1];
                global_avg_pool_spread(&r, n, 1.0 / n as f64)
            }
            other => {
                return Err(Error::UnsupportedLayer {
                    method: "lrp",
                    kind: other.kind().name().to_string(),
                })
            }
        };
    }
    AttributionMap::new(Tensor::new(x.shape().to_vec(), r)?, Method::Lrp, class)
}
