use biasbench_core::nn::{self, backward, forward, Conv2d, Dense, Layer, ModelSpec};
use biasbench_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

/// Desk model with random nonzero biases so every code path is exercised.
fn random_model(input: [usize; 3], classes: usize, seed: u64) -> ModelSpec {
    let mut m = ModelSpec::desk_cnn(input, classes, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for idx in 0..m.num_layers() {
        match m.layer_mut(idx) {
            Layer::Conv2d(c) => c.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1)),
            Layer::Dense(d) => d.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1)),
            _ => {}
        }
    }
    m
}

// Straight-line reference implementation, independent of the engine.

fn naive_conv(x: &[Vec<Vec<f64>>], c: &Conv2d) -> Vec<Vec<Vec<f64>>> {
    let (w, h) = (x.len(), x[0].len());
    let k = c.kernel as isize;
    let pad = k / 2;
    let mut y = vec![vec![vec![0.0; c.out_channels]; h]; w];
    for i in 0..w {
        for j in 0..h {
            for co in 0..c.out_channels {
                let mut acc = c.bias[co];
                for di in 0..k {
                    for dj in 0..k {
                        let ii = i as isize + di - pad;
                        let jj = j as isize + dj - pad;
                        if ii < 0 || jj < 0 || ii >= w as isize || jj >= h as isize {
                            continue;
                        }
                        for ci in 0..c.in_channels {
                            let widx = ((di as usize * c.kernel + dj as usize) * c.in_channels + ci) * c.out_channels + co;
                            acc += c.weight[widx] * x[ii as usize][jj as usize][ci];
                        }
                    }
                }
                y[i][j][co] = acc;
            }
        }
    }
    y
}

fn naive_probs(model: &ModelSpec, x: &Tensor) -> Vec<f64> {
    let [w, h, c] = model.input_shape();
    let mut grid: Vec<Vec<Vec<f64>>> = (0..w)
        .map(|i| (0..h).map(|j| (0..c).map(|k| x.get(&[i, j, k])).collect()).collect())
        .collect();
    let mut flat: Vec<f64> = Vec::new();
    for layer in model.layers() {
        match layer {
            Layer::Conv2d(conv) => grid = naive_conv(&grid, conv),
            Layer::Relu if flat.is_empty() => {
                for v in grid.iter_mut().flatten().flatten() {
                    *v = v.max(0.0);
                }
            }
            Layer::Relu => flat.iter_mut().for_each(|v| *v = v.max(0.0)),
            Layer::Maxpool2 => {
                let (w2, h2) = (grid.len() / 2, grid[0].len() / 2);
                let ch = grid[0][0].len();
                grid = (0..w2)
                    .map(|i| {
                        (0..h2)
                            .map(|j| {
                                (0..ch)
                                    .map(|k| {
                                        let a = grid[2 * i][2 * j][k].max(grid[2 * i][2 * j + 1][k]);
                                        let b = grid[2 * i + 1][2 * j][k].max(grid[2 * i + 1][2 * j + 1][k]);
                                        a.max(b)
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
            }
            Layer::GlobalAvgPool => {
                let ch = grid[0][0].len();
                let n = (grid.len() * grid[0].len()) as f64;
                flat = (0..ch)
                    .map(|k| grid.iter().flatten().map(|px| px[k]).sum::<f64>() / n)
                    .collect();
            }
            Layer::Dense(d) => {
                flat = (0..d.outputs)
                    .map(|o| d.bias[o] + (0..d.inputs).map(|i| d.weight[o * d.inputs + i] * flat[i]).sum::<f64>())
                    .collect();
            }
            Layer::Softmax => {
                let m = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = flat.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                flat = e.iter().map(|v| v / s).collect();
            }
        }
    }
    flat
}

#[test]
fn forward_matches_naive_reference() {
    for seed in 0..5 {
        let model = random_model([8, 8, 1], 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random_input(&[8, 8, 1], &mut rng);
        let (probs, _) = forward(&model, &x).unwrap();
        let expected = naive_probs(&model, &x);
        for (a, b) in probs.data().iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn forward_is_deterministic_and_trace_replays() {
    let model = random_model([12, 12, 3], 5, 3);
    let x = random_input(&[12, 12, 3], &mut ChaCha8Rng::seed_from_u64(9));
    let (p1, t1) = forward(&model, &x).unwrap();
    let (p2, t2) = forward(&model, &x).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(t1, t2);
    assert_eq!(t1.len(), model.num_layers());
    assert_eq!(t1.last_conv_index(), Some(6));
    assert_eq!(nn::logits(&model, &x).unwrap(), *t1.logits());
}

#[test]
fn input_gradient_matches_finite_differences() {
    let step = 1e-5;
    for seed in 0..10 {
        let model = random_model([6, 6, 2], 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let x = random_input(&[6, 6, 2], &mut rng);
        let class = seed as usize % 3;
        let (_, trace) = forward(&model, &x).unwrap();
        let g = backward(&model, &trace, class).unwrap();
        let score = |t: &Tensor| nn::logits(&model, t).unwrap().data()[class];
        let scale = g.input.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for i in 0..x.len() {
            let mut up = x.clone();
            up.data_mut()[i] += step;
            let mut down = x.clone();
            down.data_mut()[i] -= step;
            let fd = (score(&up) - score(&down)) / (2.0 * step);
            let rel = (g.input.data()[i] - fd).abs() / scale.max(1e-12);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "seed {seed}: max relative error {worst}");
    }
}

#[test]
fn feature_gradients_are_shaped_like_conv_outputs() {
    let model = random_model([8, 8, 3], 2, 4);
    let x = random_input(&[8, 8, 3], &mut ChaCha8Rng::seed_from_u64(4));
    let (_, trace) = forward(&model, &x).unwrap();
    let g = backward(&model, &trace, 1).unwrap();
    let convs = model.conv_indices();
    assert_eq!(g.features.len(), convs.len());
    for (f, idx) in g.features.iter().zip(convs) {
        assert_eq!(f.shape(), model.layer_output_shape(idx));
    }
    assert_eq!(g.input.shape(), x.shape());
}

#[test]
fn relu_backward_blocks_non_positive_inputs() {
    // input -> relu -> dense(1 output, all ones): gradient is the step function
    let mut dense = Dense::zeros(4, 2);
    dense.row_mut(0).fill(1.0);
    let model = ModelSpec::new([2, 2, 1], vec![Layer::Relu, Layer::Dense(dense), Layer::Softmax]).unwrap();
    let x = Tensor::new(vec![2, 2, 1], vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
    let (_, trace) = forward(&model, &x).unwrap();
    let g = backward(&model, &trace, 0).unwrap();
    assert_eq!(g.input.data(), &[0.0, 0.0, 1.0, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_is_a_distribution(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let model = random_model([8, 8, 1], 5, seed);
        let x = random_input(&[8, 8, 1], &mut ChaCha8Rng::seed_from_u64(seed)).map(|v| v * scale);
        let (p, _) = forward(&model, &x).unwrap();
        prop_assert!(p.data().iter().all(|&v| v > 0.0));
        prop_assert!((p.sum() - 1.0).abs() <= 1e-9);
    }
}
