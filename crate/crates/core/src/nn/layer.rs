//! Layer definitions and the per-layer numeric kernels.
//!
//! Convolution weights are stored as `[k, k, in, out]` so that the innermost
//! loops run over contiguous output channels. Dense weights are `[out, in]`,
//! i.e. `y = W x + b`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    Relu,
    Maxpool2,
    GlobalAvgPool,
    Dense,
    Softmax,
}

impl LayerKind {
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Conv2d => 0,
            LayerKind::Relu => 1,
            LayerKind::Maxpool2 => 2,
            LayerKind::GlobalAvgPool => 3,
            LayerKind::Dense => 4,
            LayerKind::Softmax => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => LayerKind::Conv2d,
            1 => LayerKind::Relu,
            2 => LayerKind::Maxpool2,
            3 => LayerKind::GlobalAvgPool,
            4 => LayerKind::Dense,
            5 => LayerKind::Softmax,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool2 => "maxpool2",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Dense => "dense",
            LayerKind::Softmax => "softmax",
        }
    }
}

/// Stride-1 convolution with zero padding that preserves the spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel,
            in_channels,
            out_channels,
            weight: vec![0.0; kernel * kernel * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        }
    }

    #[inline]
    pub fn weight_index(&self, di: usize, dj: usize, cin: usize, cout: usize) -> usize {
        ((di * self.kernel + dj) * self.in_channels + cin) * self.out_channels + cout
    }

    /// `x` is `[w, h, in]`, the result `[w, h, out]`.
    pub(crate) fn forward(&self, x: &[f64], w: usize, h: usize) -> Vec<f64> {
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        let pad = k / 2;
        let mut y = vec![0.0; w * h * cout];
        for i in 0..w {
            for j in 0..h {
                let out = &mut y[(i * h + j) * cout..][..cout];
                out.copy_from_slice(&self.bias);
                for di in 0..k {
                    let Some(ii) = (i + di).checked_sub(pad).filter(|&v| v < w) else {
                        continue;
                    };
                    for dj in 0..k {
                        let Some(jj) = (j + dj).checked_sub(pad).filter(|&v| v < h) else {
                            continue;
                        };
                        let xin = &x[(ii * h + jj) * cin..][..cin];
                        let wbase = &self.weight[(di * k + dj) * cin * cout..][..cin * cout];
                        for (c, &a) in xin.iter().enumerate() {
                            if a == 0.0 {
                                continue;
                            }
                            let wr = &wbase[c * cout..][..cout];
                            for (o, &wv) in out.iter_mut().zip(wr) {
                                *o += a * wv;
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Gradient with respect to the input given the output gradient `gy`.
    /// Equivalently, applies the transpose of the (bias-free) linear map.
    pub(crate) fn input_grad(&self, gy: &[f64], w: usize, h: usize) -> Vec<f64> {
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        let pad = k / 2;
        let mut gx = vec![0.0; w * h * cin];
        for i in 0..w {
            for j in 0..h {
                let g = &gy[(i * h + j) * cout..][..cout];
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for di in 0..k {
                    let Some(ii) = (i + di).checked_sub(pad).filter(|&v| v < w) else {
                        continue;
                    };
                    for dj in 0..k {
                        let Some(jj) = (j + dj).checked_sub(pad).filter(|&v| v < h) else {
                            continue;
                        };
                        let gxin = &mut gx[(ii * h + jj) * cin..][..cin];
                        let wbase = &self.weight[(di * k + dj) * cin * cout..][..cin * cout];
                        for (c, gv) in gxin.iter_mut().enumerate() {
                            let wr = &wbase[c * cout..][..cout];
                            *gv += g.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
        }
        gx
    }

    /// Accumulates weight and bias gradients into `gw` / `gb`.
    pub(crate) fn accumulate_param_grad(
        &self,
        x: &[f64],
        gy: &[f64],
        w: usize,
        h: usize,
        gw: &mut [f64],
        gb: &mut [f64],
    ) {
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        let pad = k / 2;
        for i in 0..w {
            for j in 0..h {
                let g = &gy[(i * h + j) * cout..][..cout];
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (b, &gv) in gb.iter_mut().zip(g) {
                    *b += gv;
                }
                for di in 0..k {
                    let Some(ii) = (i + di).checked_sub(pad).filter(|&v| v < w) else {
                        continue;
                    };
                    for dj in 0..k {
                        let Some(jj) = (j + dj).checked_sub(pad).filter(|&v| v < h) else {
                            continue;
                        };
                        let xin = &x[(ii * h + jj) * cin..][..cin];
                        let gwbase = &mut gw[(di * k + dj) * cin * cout..][..cin * cout];
                        for (c, &a) in xin.iter().enumerate() {
                            if a == 0.0 {
                                continue;
                            }
                            let gwr = &mut gwbase[c * cout..][..cout];
                            for (dst, &gv) in gwr.iter_mut().zip(g) {
                                *dst += a * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn row(&self, output: usize) -> &[f64] {
        &self.weight[output * self.inputs..][..self.inputs]
    }

    pub fn row_mut(&mut self, output: usize) -> &mut [f64] {
        &mut self.weight[output * self.inputs..][..self.inputs]
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                self.bias[o]
                    + self
                        .row(o)
                        .iter()
                        .zip(x)
                        .map(|(w, a)| w * a)
                        .sum::<f64>()
            })
            .collect()
    }

    pub(crate) fn input_grad(&self, gy: &[f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.inputs];
        for (o, &g) in gy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (dst, &w) in gx.iter_mut().zip(self.row(o)) {
                *dst += g * w;
            }
        }
        gx
    }

    pub(crate) fn accumulate_param_grad(
        &self,
        x: &[f64],
        gy: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
    ) {
        for (o, &g) in gy.iter().enumerate() {
            gb[o] += g;
            let row = &mut gw[o * self.inputs..][..self.inputs];
            for (dst, &a) in row.iter_mut().zip(x) {
                *dst += g * a;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu,
    Maxpool2,
    GlobalAvgPool,
    Dense(Dense),
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::Maxpool2 => LayerKind::Maxpool2,
            Layer::GlobalAvgPool => LayerKind::GlobalAvgPool,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Softmax => LayerKind::Softmax,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(c) => c.weight.len() + c.bias.len(),
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            _ => 0,
        }
    }
}

/// Position within a 2x2 window of the element maxpool selects. The scan is
/// row-major and strict, so ties go to the first maximal element.
#[inline]
pub(crate) fn maxpool_winner(x: &[f64], h: usize, ch: usize, i: usize, j: usize, c: usize) -> usize {
    let mut best = ((2 * i) * h + 2 * j) * ch + c;
    for (a, b) in [(0, 1), (1, 0), (1, 1)] {
        let idx = ((2 * i + a) * h + 2 * j + b) * ch + c;
        if x[idx] > x[best] {
            best = idx;
        }
    }
    best
}

pub(crate) fn maxpool_forward(x: &[f64], w: usize, h: usize, ch: usize) -> Vec<f64> {
    let (ow, oh) = (w / 2, h / 2);
    let mut y = vec![0.0; ow * oh * ch];
    for i in 0..ow {
        for j in 0..oh {
            for c in 0..ch {
                y[(i * oh + j) * ch + c] = x[maxpool_winner(x, h, ch, i, j, c)];
            }
        }
    }
    y
}

/// Routes each output value (gradient or relevance) to its window winner.
pub(crate) fn maxpool_route(x: &[f64], gy: &[f64], w: usize, h: usize, ch: usize) -> Vec<f64> {
    let (ow, oh) = (w / 2, h / 2);
    let mut gx = vec![0.0; w * h * ch];
    for i in 0..ow {
        for j in 0..oh {
            for c in 0..ch {
                gx[maxpool_winner(x, h, ch, i, j, c)] += gy[(i * oh + j) * ch + c];
            }
        }
    }
    gx
}

pub(crate) fn global_avg_pool(x: &[f64], ch: usize) -> Vec<f64> {
    let n = x.len() / ch;
    let mut y = vec![0.0; ch];
    for px in x.chunks_exact(ch) {
        for (acc, &v) in y.iter_mut().zip(px) {
            *acc += v;
        }
    }
    for v in &mut y {
        *v /= n as f64;
    }
    y
}

/// Spreads each channel value uniformly over the `n` spatial positions,
/// scaled by `scale` (1/n for gradients, 1/n for an equal relevance split).
pub(crate) fn global_avg_pool_spread(gy: &[f64], n: usize, scale: f64) -> Vec<f64> {
    let ch = gy.len();
    let mut gx = vec![0.0; n * ch];
    for px in gx.chunks_exact_mut(ch) {
        for (dst, &g) in px.iter_mut().zip(gy) {
            *dst = g * scale;
        }
    }
    gx
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
