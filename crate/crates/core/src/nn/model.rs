use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{Conv2d, Dense, Layer, LayerKind};
use crate::error::{Error, Result};

/// A validated layer sequence together with its input shape.
///
/// Construction checks that every layer accepts its predecessor's output,
/// that exactly one softmax exists and closes the network, and that a
/// global average pool (when present) is preceded by a convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
    /// Output shape of every layer.
    shapes: Vec<Vec<usize>>,
}

impl ModelSpec {
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        if input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidModel(format!(
                "input shape {input_shape:?} has a zero dimension"
            )));
        }
        let softmaxes = layers.iter().filter(|l| matches!(l, Layer::Softmax)).count();
        if softmaxes != 1 || !matches!(layers.last(), Some(Layer::Softmax)) {
            return Err(Error::InvalidModel(
                "exactly one softmax is required and it must be the last layer".into(),
            ));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.to_vec();
        let mut seen_conv = false;
        for (idx, layer) in layers.iter().enumerate() {
            let bad = |why: String| Error::InvalidModel(format!("layer {idx} ({}): {why}", layer.kind().name()));
            current = match layer {
                Layer::Conv2d(c) => {
                    if current.len() != 3 {
                        return Err(bad(format!("needs a [W, H, C] input, got {current:?}")));
                    }
                    if c.kernel % 2 == 0 || c.kernel == 0 {
                        return Err(bad(format!("kernel size {} must be odd", c.kernel)));
                    }
                    if current[2] != c.in_channels {
                        return Err(bad(format!(
                            "expects {} input channels, previous layer yields {}",
                            c.in_channels, current[2]
                        )));
                    }
                    if c.weight.len() != c.kernel * c.kernel * c.in_channels * c.out_channels
                        || c.bias.len() != c.out_channels
                        || c.out_channels == 0
                    {
                        return Err(bad("weight/bias sizes inconsistent with channel counts".into()));
                    }
                    seen_conv = true;
                    vec![current[0], current[1], c.out_channels]
                }
                Layer::Relu => current,
                Layer::Maxpool2 => {
                    if current.len() != 3 || current[0] < 2 || current[1] < 2 {
                        return Err(bad(format!("needs a spatial input of at least 2x2, got {current:?}")));
                    }
                    vec![current[0] / 2, current[1] / 2, current[2]]
                }
                Layer::GlobalAvgPool => {
                    if current.len() != 3 {
                        return Err(bad(format!("needs a [W, H, C] input, got {current:?}")));
                    }
                    if !seen_conv {
                        return Err(bad("must be preceded by a conv2d layer".into()));
                    }
                    vec![current[2]]
                }
                Layer::Dense(d) => {
                    let n: usize = current.iter().product();
                    if n != d.inputs {
                        return Err(bad(format!("expects {} inputs, previous layer yields {n}", d.inputs)));
                    }
                    if d.weight.len() != d.inputs * d.outputs || d.bias.len() != d.outputs || d.outputs == 0 {
                        return Err(bad("weight/bias sizes inconsistent with unit counts".into()));
                    }
                    vec![d.outputs]
                }
                Layer::Softmax => {
                    if current.len() != 1 {
                        return Err(bad(format!("needs a vector input, got {current:?}")));
                    }
                    current
                }
            };
            shapes.push(current.clone());
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    /// The fixed desk architecture:
    /// conv3x3(8)-relu-maxpool2-conv3x3(16)-relu-maxpool2-conv3x3(32)-relu-gap-dense-softmax,
    /// Glorot-uniform initialized from `seed` with zero biases.
    pub fn desk_cnn(input_shape: [usize; 3], num_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = |cin: usize, cout: usize| {
            let mut c = Conv2d::zeros(3, cin, cout);
            let limit = (6.0 / (9 * cin + 9 * cout) as f64).sqrt();
            c.weight.iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
            Layer::Conv2d(c)
        };
        let c1 = conv(input_shape[2], 8);
        let c2 = conv(8, 16);
        let c3 = conv(16, 32);
        let mut dense = Dense::zeros(32, num_classes);
        let limit = (6.0 / (32 + num_classes) as f64).sqrt();
        dense.weight.iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
        Self::new(
            input_shape,
            vec![
                c1,
                Layer::Relu,
                Layer::Maxpool2,
                c2,
                Layer::Relu,
                Layer::Maxpool2,
                c3,
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::Dense(dense),
                Layer::Softmax,
            ],
        )
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    /// Shape fed into layer `idx`.
    pub fn layer_input_shape(&self, idx: usize) -> &[usize] {
        if idx == 0 {
            &self.input_shape
        } else {
            &self.shapes[idx - 1]
        }
    }

    pub fn layer_output_shape(&self, idx: usize) -> &[usize] {
        &self.shapes[idx]
    }

    pub fn last_conv_index(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.kind() == LayerKind::Conv2d)
    }

    pub fn conv_indices(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].kind() == LayerKind::Conv2d)
            .collect()
    }

    /// The layer whose output holds the last convolutional block's feature
    /// maps: the last conv itself, or its ReLU when one directly follows.
    pub fn feature_layer_index(&self) -> Option<usize> {
        let conv = self.last_conv_index()?;
        match self.layers.get(conv + 1) {
            Some(Layer::Relu) => Some(conv + 1),
            _ => Some(conv),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// All trainable values flattened layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    out.extend_from_slice(&c.weight);
                    out.extend_from_slice(&c.bias);
                }
                Layer::Dense(d) => {
                    out.extend_from_slice(&d.weight);
                    out.extend_from_slice(&d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut rest = params;
        let mut take = |dst: &mut Vec<f64>| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    take(&mut c.weight);
                    take(&mut c.bias);
                }
                Layer::Dense(d) => {
                    take(&mut d.weight);
                    take(&mut d.bias);
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Mutable access for hand-built fixtures; shapes must stay unchanged.
    pub fn layer_mut(&mut self, idx: usize) -> &mut Layer {
        &mut self.layers[idx]
    }

    /// Copy of the model with every bias set to zero.
    pub fn without_biases(&self) -> Self {
        let mut m = self.clone();
        for layer in &mut m.layers {
            match layer {
                Layer::Conv2d(c) => c.bias.iter_mut().for_each(|b| *b = 0.0),
                Layer::Dense(d) => d.bias.iter_mut().for_each(|b| *b = 0.0),
                _ => {}
            }
        }
        m
    }

    /// Copy of the model with every parameter set to zero.
    pub fn zeroed(&self) -> Self {
        let mut m = self.clone();
        let zeros = vec![0.0; m.param_count()];
        m.set_parameters(&zeros).expect("same parameter count");
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_cnn_shapes() {
        let m = ModelSpec::desk_cnn([64, 64, 3], 2, 1).unwrap();
        assert_eq!(m.num_classes(), 2);
        assert_eq!(m.layer_output_shape(6), &[16, 16, 32]);
        assert_eq!(m.last_conv_index(), Some(6));
        assert_eq!(m.feature_layer_index(), Some(7));
        assert_eq!(m.conv_indices(), vec![0, 3, 6]);
    }

    #[test]
    fn rejects_misplaced_softmax() {
        let layers = vec![Layer::Softmax, Layer::Dense(Dense::zeros(4, 2))];
        assert!(ModelSpec::new([2, 2, 1], layers).is_err());
        let layers = vec![Layer::Dense(Dense::zeros(4, 2))];
        assert!(ModelSpec::new([2, 2, 1], layers).is_err());
    }

    #[test]
    fn rejects_channel_mismatch() {
        let layers = vec![
            Layer::Conv2d(Conv2d::zeros(3, 2, 4)),
            Layer::GlobalAvgPool,
            Layer::Dense(Dense::zeros(4, 2)),
            Layer::Softmax,
        ];
        let err = ModelSpec::new([4, 4, 1], layers).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn rejects_gap_without_conv() {
        let layers = vec![Layer::GlobalAvgPool, Layer::Dense(Dense::zeros(1, 2)), Layer::Softmax];
        assert!(ModelSpec::new([4, 4, 1], layers).is_err());
    }

    #[test]
    fn parameter_round_trip() {
        let mut m = ModelSpec::desk_cnn([8, 8, 1], 2, 3).unwrap();
        let p = m.parameters();
        let doubled: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        m.set_parameters(&doubled).unwrap();
        assert_eq!(m.parameters(), doubled);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = ModelSpec::desk_cnn([16, 16, 3], 5, 9).unwrap();
        let b = ModelSpec::desk_cnn([16, 16, 3], 5, 9).unwrap();
        let c = ModelSpec::desk_cnn([16, 16, 3], 5, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
