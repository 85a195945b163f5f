//! Forward evaluation with recorded activations and exact reverse-mode
//! gradients.

use super::layer::{self, Layer};
use super::model::ModelSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Activations of one forward pass.
///
/// `activations[0]` is the input and `activations[i + 1]` the output of layer
/// `i`, so the input of layer `i` is `activations[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    activations: Vec<Tensor>,
    last_conv: Option<usize>,
}

impl ForwardTrace {
    /// Number of recorded layers.
    pub fn len(&self) -> usize {
        self.activations.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn layer_input(&self, idx: usize) -> &Tensor {
        &self.activations[idx]
    }

    pub fn layer_output(&self, idx: usize) -> &Tensor {
        &self.activations[idx + 1]
    }

    pub fn last_conv_index(&self) -> Option<usize> {
        self.last_conv
    }

    /// Pre-softmax scores: the input of the final softmax layer.
    pub fn logits(&self) -> &Tensor {
        &self.activations[self.activations.len() - 2]
    }

    pub fn probs(&self) -> &Tensor {
        &self.activations[self.activations.len() - 1]
    }
}

fn apply_layer(model: &ModelSpec, idx: usize, x: &Tensor) -> Tensor {
    let in_shape = model.layer_input_shape(idx);
    let out_shape = model.layer_output_shape(idx);
    let data = match &model.layers()[idx] {
        Layer::Conv2d(c) => c.forward(x.data(), in_shape[0], in_shape[1]),
        Layer::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
        Layer::Maxpool2 => layer::maxpool_forward(x.data(), in_shape[0], in_shape[1], in_shape[2]),
        Layer::GlobalAvgPool => layer::global_avg_pool(x.data(), in_shape[2]),
        Layer::Dense(d) => d.forward(x.data()),
        Layer::Softmax => layer::softmax(x.data()),
    };
    Tensor::new(out_shape.to_vec(), data).expect("layer output matches validated shape")
}

fn check_input(model: &ModelSpec, x: &Tensor) -> Result<()> {
    x.check_shape(&model.input_shape())?;
    if !x.is_finite() {
        return Err(Error::InvalidArgument("input contains non-finite values".into()));
    }
    Ok(())
}

/// Runs the model and records every layer's output.
pub fn forward(model: &ModelSpec, x: &Tensor) -> Result<(Tensor, ForwardTrace)> {
    check_input(model, x)?;
    let mut activations = Vec::with_capacity(model.num_layers() + 1);
    activations.push(x.clone());
    for idx in 0..model.num_layers() {
        let next = apply_layer(model, idx, &activations[idx]);
        activations.push(next);
    }
    let probs = activations.last().expect("non-empty model").clone();
    Ok((
        probs,
        ForwardTrace {
            activations,
            last_conv: model.last_conv_index(),
        },
    ))
}

/// Runs the model up to (excluding) the softmax and returns the scores.
pub fn logits(model: &ModelSpec, x: &Tensor) -> Result<Tensor> {
    check_input(model, x)?;
    let mut current = x.clone();
    for idx in 0..model.num_layers() - 1 {
        current = apply_layer(model, idx, &current);
    }
    Ok(current)
}

/// Class probabilities without keeping intermediate activations.
pub fn predict(model: &ModelSpec, x: &Tensor) -> Result<Tensor> {
    let z = logits(model, x)?;
    let n = z.len();
    Tensor::new(vec![n], layer::softmax(z.data()))
}

/// Gradients of one class score.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Gradient with respect to the network input, shaped like it.
    pub input: Tensor,
    /// Gradient with respect to the output of each conv layer, in layer order.
    pub features: Vec<Tensor>,
    /// Gradient with respect to the output of every layer before the softmax.
    pub layer_outputs: Vec<Tensor>,
}

/// Result of [`backprop`]. `params` follows the order of
/// [`ModelSpec::parameters`]; when it is requested, `input` is left zero if
/// the first layer is a convolution.
pub(crate) struct Backprop {
    pub layer_outputs: Vec<Tensor>,
    pub input: Tensor,
    pub params: Option<Vec<f64>>,
}

/// Propagates `seed` (a gradient with respect to the pre-softmax scores)
/// down to the input.
pub(crate) fn backprop(
    model: &ModelSpec,
    trace: &ForwardTrace,
    seed: &[f64],
    with_params: bool,
) -> Backprop {
    let n_layers = model.num_layers();
    let softmax_idx = n_layers - 1;
    let mut param_grads = with_params.then(|| vec![0.0; model.param_count()]);
    // Offsets of each layer's parameters in the flattened vector.
    let mut offsets = Vec::with_capacity(n_layers);
    let mut acc = 0;
    for l in model.layers() {
        offsets.push(acc);
        acc += l.param_count();
    }

    let mut layer_outputs: Vec<Tensor> = Vec::with_capacity(softmax_idx);
    let mut grad = seed.to_vec();
    for idx in (0..softmax_idx).rev() {
        let out_shape = model.layer_output_shape(idx).to_vec();
        layer_outputs.push(Tensor::new(out_shape, grad.clone()).expect("validated shape"));
        let x = trace.layer_input(idx).data();
        let in_shape = model.layer_input_shape(idx);
        grad = match &model.layers()[idx] {
            Layer::Conv2d(c) => {
                if let Some(pg) = param_grads.as_mut() {
                    let (gw, gb) = pg[offsets[idx]..][..c.weight.len() + c.bias.len()].split_at_mut(c.weight.len());
                    c.accumulate_param_grad(x, &grad, in_shape[0], in_shape[1], gw, gb);
                }
                if idx == 0 && with_params {
                    // training never reads the input gradient
                    vec![0.0; x.len()]
                } else {
                    c.input_grad(&grad, in_shape[0], in_shape[1])
                }
            }
            Layer::Relu => x
                .iter()
                .zip(&grad)
                .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
                .collect(),
            Layer::Maxpool2 => layer::maxpool_route(x, &grad, in_shape[0], in_shape[1], in_shape[2]),
            Layer::GlobalAvgPool => {
                let n = in_shape[0] * in_shape[1];
                layer::global_avg_pool_spread(&grad, n, 1.0 / n as f64)
            }
            Layer::Dense(d) => {
                if let Some(pg) = param_grads.as_mut() {
                    let (gw, gb) = pg[offsets[idx]..][..d.weight.len() + d.bias.len()].split_at_mut(d.weight.len());
                    d.accumulate_param_grad(x, &grad, gw, gb);
                }
                d.input_grad(&grad)
            }
            Layer::Softmax => unreachable!("softmax is always the last layer"),
        };
    }
    layer_outputs.reverse();
    let input = Tensor::new(model.input_shape().to_vec(), grad).expect("validated shape");
    Backprop {
        layer_outputs,
        input,
        params: param_grads,
    }
}

/// Gradient of the pre-softmax score of `class` with respect to the input
/// and to every conv layer's output.
pub fn backward(model: &ModelSpec, trace: &ForwardTrace, class: usize) -> Result<Gradients> {
    let num_classes = model.num_classes();
    if class >= num_classes {
        return Err(Error::ClassOutOfRange { class, num_classes });
    }
    if trace.len() != model.num_layers() {
        return Err(Error::InvalidArgument(format!(
            "trace has {} layers, model has {}",
            trace.len(),
            model.num_layers()
        )));
    }
    let mut seed = vec![0.0; num_classes];
    seed[class] = 1.0;
    let bp = backprop(model, trace, &seed, false);
    let features = model
        .conv_indices()
        .into_iter()
        .map(|i| bp.layer_outputs[i].clone())
        .collect();
    Ok(Gradients {
        input: bp.input,
        features,
        layer_outputs: bp.layer_outputs,
    })
}

/// `-ln p`, clamped away from zero; NaN stays NaN.
pub(crate) fn cross_entropy(p: f64) -> f64 {
    if p.is_nan() {
        f64::NAN
    } else {
        -p.max(f64::MIN_POSITIVE).ln()
    }
}

/// Softmax cross-entropy loss of one sample and its parameter gradient.
pub(crate) fn loss_and_param_grad(model: &ModelSpec, x: &Tensor, label: usize) -> Result<(f64, Vec<f64>)> {
    let (probs, trace) = forward(model, x)?;
    let p = probs.data();
    let loss = cross_entropy(p[label]);
    let mut seed = p.to_vec();
    seed[label] -= 1.0;
    let bp = backprop(model, &trace, &seed, true);
    Ok((loss, bp.params.expect("requested parameter gradients")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::Dense;

    #[test]
    fn zero_model_is_uniform() {
        let m = ModelSpec::desk_cnn([8, 8, 3], 4, 1).unwrap().zeroed();
        let x = Tensor::from_fn(&[8, 8, 3], |i| (i % 7) as f64 / 7.0);
        let (p, _) = forward(&m, &x).unwrap();
        for &v in p.data() {
            assert_eq!(v, 0.25);
        }
        let (_, trace) = forward(&m, &x).unwrap();
        let g = backward(&m, &trace, 2).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_model_gradient_is_weight_row() {
        let mut d = Dense::zeros(4, 3);
        for (i, w) in d.weight.iter_mut().enumerate() {
            *w = i as f64 * 0.5 - 2.0;
        }
        let m = ModelSpec::new([2, 2, 1], vec![Layer::Dense(d.clone()), Layer::Softmax]).unwrap();
        let x = Tensor::from_fn(&[2, 2, 1], |i| i as f64);
        let (_, trace) = forward(&m, &x).unwrap();
        for c in 0..3 {
            let g = backward(&m, &trace, c).unwrap();
            assert_eq!(g.input.data(), d.row(c));
        }
    }

    #[test]
    fn class_out_of_range() {
        let m = ModelSpec::desk_cnn([8, 8, 1], 2, 1).unwrap();
        let x = Tensor::zeros(&[8, 8, 1]);
        let (_, trace) = forward(&m, &x).unwrap();
        assert!(matches!(
            backward(&m, &trace, 2),
            Err(Error::ClassOutOfRange { class: 2, num_classes: 2 })
        ));
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let m = ModelSpec::desk_cnn([8, 8, 1], 2, 1).unwrap();
        assert!(matches!(
            forward(&m, &Tensor::zeros(&[8, 8, 3])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn trace_records_every_layer() {
        let m = ModelSpec::desk_cnn([8, 8, 3], 2, 5).unwrap();
        let x = Tensor::from_fn(&[8, 8, 3], |i| ((i * 37) % 11) as f64 / 11.0);
        let (p, trace) = forward(&m, &x).unwrap();
        assert_eq!(trace.len(), m.num_layers());
        assert_eq!(trace.probs(), &p);
        assert_eq!(predict(&m, &x).unwrap(), p);
        assert_eq!(logits(&m, &x).unwrap(), *trace.logits());
        // replay each layer from its recorded input
        for i in 0..m.num_layers() {
            assert_eq!(&apply_layer(&m, i, trace.layer_input(i)), trace.layer_output(i));
        }
    }
}
