use biasbench_core::attrib::{
    attribute, grad_cam, integrated_gradients, lrp_epsilon, score_cam, upsample_bilinear, Method, MethodConfig,
};
use biasbench_core::nn::{self, Conv2d, Dense, Layer, ModelSpec};
use biasbench_core::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

/// Independent align-corners bilinear interpolation.
fn bilinear_oracle(grid: &[Vec<f64>], w: usize, h: usize) -> Vec<Vec<f64>> {
    let (sw, sh) = (grid.len(), grid[0].len());
    let coord = |t: usize, src: usize, dst: usize| t as f64 * (src as f64 - 1.0) / (dst as f64 - 1.0);
    (0..w)
        .map(|i| {
            (0..h)
                .map(|j| {
                    let (u, v) = (coord(i, sw, w), coord(j, sh, h));
                    let (i0, j0) = (u.floor() as usize, v.floor() as usize);
                    let (i1, j1) = ((i0 + 1).min(sw - 1), (j0 + 1).min(sh - 1));
                    let (fu, fv) = (u - i0 as f64, v - j0 as f64);
                    grid[i0][j0] * (1.0 - fu) * (1.0 - fv)
                        + grid[i1][j0] * fu * (1.0 - fv)
                        + grid[i0][j1] * (1.0 - fu) * fv
                        + grid[i1][j1] * fu * fv
                })
                .collect()
        })
        .collect()
}

/// 8x8x1 input -> conv1x1 (weight 1) -> relu -> maxpool -> gap -> dense.
/// The last-conv feature grid is ReLU(x) on 8x8 before pooling.
fn one_channel_model(head: [f64; 2]) -> ModelSpec {
    let mut conv = Conv2d::zeros(1, 1, 1);
    conv.weight[0] = 1.0;
    let mut dense = Dense::zeros(1, 2);
    dense.weight.copy_from_slice(&head);
    ModelSpec::new(
        [8, 8, 1],
        vec![
            Layer::Maxpool2,
            Layer::Conv2d(conv),
            Layer::Relu,
            Layer::GlobalAvgPool,
            Layer::Dense(dense),
            Layer::Softmax,
        ],
    )
    .unwrap()
}

fn signed_input() -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    Tensor::from_fn(&[8, 8, 1], |_| rng.random_range(-1.0..1.0))
}

/// The 4x4 feature grid of [`one_channel_model`]: ReLU of the 2x2 max pool.
fn pooled_relu(x: &Tensor) -> Vec<Vec<f64>> {
    (0..4)
        .map(|i| {
            (0..4)
                .map(|j| {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(a, b)| x.get(&[2 * i + a, 2 * j + b, 0]))
                        .fold(f64::NEG_INFINITY, f64::max);
                    m.max(0.0)
                })
                .collect()
        })
        .collect()
}

fn assert_grid_close(map: &Tensor, expected: &[Vec<f64>], tol: f64) {
    for (i, row) in expected.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            let v = map.get(&[i, j]);
            assert!((v - e).abs() <= tol, "({i},{j}): {v} vs {e}");
        }
    }
}

#[test]
fn gradcam_zero_head_gives_zero_map() {
    let mut model = ModelSpec::desk_cnn([16, 16, 3], 2, 1).unwrap();
    let dense_idx = model.num_layers() - 2;
    if let Layer::Dense(d) = model.layer_mut(dense_idx) {
        d.weight.fill(0.0);
    }
    let map = grad_cam(&model, &random_input(&[16, 16, 3], 1), 0).unwrap();
    assert!(map.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn gradcam_single_channel_hand_computation() {
    let model = one_channel_model([2.0, -1.0]);
    let x = signed_input();
    // d score_0 / d feature = 2 / 16 everywhere, so the weight is 2 / 16
    let grid: Vec<Vec<f64>> = pooled_relu(&x)
        .into_iter()
        .map(|r| r.into_iter().map(|a| (2.0 / 16.0 * a).max(0.0)).collect())
        .collect();
    let map = grad_cam(&model, &x, 0).unwrap();
    assert_eq!(map.values.shape(), &[8, 8]);
    assert_grid_close(&map.values, &bilinear_oracle(&grid, 8, 8), 1e-12);
    // class 1 has a negative weight and the features are non-negative
    let neg = grad_cam(&model, &x, 1).unwrap();
    assert!(neg.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn gradcam_negated_head_row_flips_the_pre_relu_map() {
    let model = ModelSpec::desk_cnn([16, 16, 3], 3, 5).unwrap();
    let x = random_input(&[16, 16, 3], 5);
    let class = 2;
    // pre-ReLU map from public trace and gradients
    let fi = model.feature_layer_index().unwrap();
    let (_, trace) = nn::forward(&model, &x).unwrap();
    let g = nn::backward(&model, &trace, class).unwrap();
    let a = trace.layer_output(fi);
    let (fw, fh, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let weights: Vec<f64> = (0..k)
        .map(|c| (0..fw * fh).map(|p| g.layer_outputs[fi].data()[p * k + c]).sum::<f64>() / (fw * fh) as f64)
        .collect();
    let pre: Vec<Vec<f64>> = (0..fw)
        .map(|i| (0..fh).map(|j| (0..k).map(|c| weights[c] * a.get(&[i, j, c])).sum()).collect())
        .collect();
    let relu = |s: f64| -> Vec<Vec<f64>> { pre.iter().map(|r| r.iter().map(|v| (s * v).max(0.0)).collect()).collect() };

    let map = grad_cam(&model, &x, class).unwrap();
    assert_grid_close(&map.values, &bilinear_oracle(&relu(1.0), 16, 16), 1e-12);

    let mut flipped = model.clone();
    let dense_idx = flipped.num_layers() - 2;
    if let Layer::Dense(d) = flipped.layer_mut(dense_idx) {
        d.row_mut(class).iter_mut().for_each(|w| *w = -*w);
    }
    let map = grad_cam(&flipped, &x, class).unwrap();
    assert_grid_close(&map.values, &bilinear_oracle(&relu(-1.0), 16, 16), 1e-12);
}

#[test]
fn scorecam_zero_activations_give_zero_map() {
    let model = one_channel_model([1.0, -1.0]);
    let x = Tensor::full(&[8, 8, 1], -0.5);
    let map = score_cam(&model, &x, 0).unwrap();
    assert!(map.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn scorecam_single_channel_is_normalized_activation() {
    let model = one_channel_model([1.0, -1.0]);
    let x = signed_input();
    let up = bilinear_oracle(&pooled_relu(&x), 8, 8);
    let lo = up.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = up.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let expected: Vec<Vec<f64>> = up.iter().map(|r| r.iter().map(|v| (v - lo) / (hi - lo)).collect()).collect();
    let map = score_cam(&model, &x, 0).unwrap();
    assert_grid_close(&map.values, &expected, 1e-12);
}

/// 4x4x1 input -> conv1x1 into two channels (x and 1 - x) -> relu -> gap -> dense.
fn two_channel_model() -> ModelSpec {
    let mut conv = Conv2d::zeros(1, 1, 2);
    conv.weight.copy_from_slice(&[1.0, -1.0]);
    conv.bias.copy_from_slice(&[0.0, 1.0]);
    let mut dense = Dense::zeros(2, 2);
    dense.weight.copy_from_slice(&[3.0, 0.5, -1.0, 1.0]);
    ModelSpec::new(
        [4, 4, 1],
        vec![
            Layer::Conv2d(conv),
            Layer::Relu,
            Layer::GlobalAvgPool,
            Layer::Dense(dense),
            Layer::Softmax,
        ],
    )
    .unwrap()
}

#[test]
fn scorecam_two_channel_straight_line_recomputation() {
    let model = two_channel_model();
    let vals: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64 / 15.0).collect();
    let x = Tensor::new(vec![4, 4, 1], vals.clone()).unwrap();

    let features = [vals.clone(), vals.iter().map(|v| (1.0 - v).max(0.0)).collect::<Vec<_>>()];
    let norm: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            f.iter().map(|v| (v - lo) / (hi - lo)).collect()
        })
        .collect();
    let score = |input: &[f64]| {
        let a0: f64 = input.iter().map(|v| v.max(0.0)).sum::<f64>() / 16.0;
        let a1: f64 = input.iter().map(|v| (1.0 - v).max(0.0)).sum::<f64>() / 16.0;
        3.0 * a0 + 0.5 * a1
    };
    let scores: Vec<f64> = norm
        .iter()
        .map(|m| score(&vals.iter().zip(m).map(|(a, b)| a * b).collect::<Vec<_>>()))
        .collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let weights: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
    assert!(weights[0] > weights[1]);
    let expected: Vec<f64> = (0..16).map(|p| (weights[0] * norm[0][p] + weights[1] * norm[1][p]).max(0.0)).collect();

    let map = score_cam(&model, &x, 0).unwrap();
    for (a, b) in map.values.data().iter().zip(&expected) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

fn linear_model(seed: u64) -> (ModelSpec, Vec<f64>) {
    let mut dense = Dense::zeros(3 * 3 * 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dense.weight.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    dense.bias.copy_from_slice(&[0.3, -0.2]);
    let row0 = dense.row(0).to_vec();
    (ModelSpec::new([3, 3, 2], vec![Layer::Dense(dense), Layer::Softmax]).unwrap(), row0)
}

#[test]
fn ig_of_the_baseline_is_zero() {
    let model = ModelSpec::desk_cnn([16, 16, 3], 2, 2).unwrap();
    let cfg = MethodConfig::default();
    let map = integrated_gradients(&model, &Tensor::zeros(&[16, 16, 3]), 1, &cfg).unwrap();
    assert!(map.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn ig_of_a_linear_model_is_weight_times_input() {
    let (model, w) = linear_model(3);
    let x = random_input(&[3, 3, 2], 3);
    for steps in [1, 7, 64] {
        let cfg = MethodConfig {
            ig_steps: steps,
            ..MethodConfig::default()
        };
        let map = integrated_gradients(&model, &x, 0, &cfg).unwrap();
        assert_eq!(map.values.shape(), &[3, 3, 2]);
        for ((r, wi), xi) in map.values.data().iter().zip(&w).zip(x.data()) {
            assert!((r - wi * xi).abs() <= 1e-12);
        }
    }
}

fn completeness_error(model: &ModelSpec, x: &Tensor, class: usize, steps: usize) -> f64 {
    let cfg = MethodConfig {
        ig_steps: steps,
        ..MethodConfig::default()
    };
    let map = integrated_gradients(model, x, class, &cfg).unwrap();
    let fx = nn::logits(model, x).unwrap().data()[class];
    let f0 = nn::logits(model, &Tensor::zeros(x.shape())).unwrap().data()[class];
    (map.values.sum() - (fx - f0)).abs()
}

#[test]
fn ig_completeness_improves_with_steps() {
    let model = ModelSpec::desk_cnn([16, 16, 3], 2, 11).unwrap();
    let mut improved = 0;
    let (mut total_m, mut total_2m) = (0.0, 0.0);
    for s in 0..20 {
        let x = random_input(&[16, 16, 3], 200 + s);
        let e1 = completeness_error(&model, &x, 0, 16);
        let e2 = completeness_error(&model, &x, 0, 32);
        total_m += e1;
        total_2m += e2;
        if e2 <= e1 {
            improved += 1;
        }
    }
    assert!(total_2m < total_m, "{total_2m} >= {total_m}");
    assert!(improved >= 15, "only {improved}/20 samples improved");
}

#[test]
fn lrp_zero_input_without_biases_is_zero() {
    let model = ModelSpec::desk_cnn([16, 16, 3], 2, 4).unwrap().without_biases();
    let map = lrp_epsilon(&model, &Tensor::zeros(&[16, 16, 3]), 0, &MethodConfig::default()).unwrap();
    assert!(map.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn lrp_conserves_the_score_on_bias_free_models() {
    let cfg = MethodConfig {
        lrp_epsilon: 1e-9,
        ..MethodConfig::default()
    };
    for seed in 0..5 {
        let model = ModelSpec::desk_cnn([16, 16, 3], 3, seed).unwrap().without_biases();
        let x = random_input(&[16, 16, 3], seed + 50);
        for class in 0..3 {
            let score = nn::logits(&model, &x).unwrap().data()[class];
            let total = lrp_epsilon(&model, &x, class, &cfg).unwrap().values.sum();
            assert!((total - score).abs() <= 1e-4 * score.abs(), "seed {seed} class {class}: {total} vs {score}");
        }
    }
}

#[test]
fn lrp_dense_only_model_matches_epsilon_rule() {
    let (model, w) = linear_model(8);
    let x = random_input(&[3, 3, 2], 8);
    let eps = 0.5;
    let cfg = MethodConfig {
        lrp_epsilon: eps,
        ..MethodConfig::default()
    };
    let z = nn::logits(&model, &x).unwrap().data()[0];
    let stab = if z >= 0.0 { z + eps } else { z - eps };
    let map = lrp_epsilon(&model, &x, 0, &cfg).unwrap();
    for ((r, wi), xi) in map.values.data().iter().zip(&w).zip(x.data()) {
        assert!((r - xi * wi * z / stab).abs() <= 1e-12);
    }
}

#[test]
fn cams_are_invariant_to_positive_rescaling_of_bias_free_models() {
    for seed in 0..5 {
        let model = ModelSpec::desk_cnn([16, 16, 3], 2, seed + 20).unwrap().without_biases();
        let x = random_input(&[16, 16, 3], seed + 20);
        let scaled = x.map(|v| 2.5 * v);
        for method in [Method::GradCam, Method::ScoreCam] {
            let cfg = MethodConfig::default();
            let a = attribute(&model, &x, 0, method, &cfg).unwrap();
            let b = attribute(&model, &scaled, 0, method, &cfg).unwrap();
            assert_eq!(a.values.argmax(), b.values.argmax(), "seed {seed} {method}");
        }
    }
}

#[test]
fn every_method_is_finite_non_negative_and_pure() {
    let model = ModelSpec::desk_cnn([16, 16, 3], 5, 6).unwrap();
    let x = random_input(&[16, 16, 3], 6);
    let cfg = MethodConfig {
        ig_steps: 8,
        ..MethodConfig::default()
    };
    for method in Method::ALL {
        let a = attribute(&model, &x, 3, method, &cfg).unwrap();
        assert_eq!(a.values.shape(), &[16, 16]);
        assert!(a.values.data().iter().all(|v| v.is_finite() && *v >= 0.0), "{method}");
        assert_eq!(a, attribute(&model, &x, 3, method, &cfg).unwrap());
        assert_eq!(a.method, method);
    }
}

#[test]
fn class_out_of_range_is_rejected() {
    let model = ModelSpec::desk_cnn([16, 16, 3], 2, 6).unwrap();
    let x = random_input(&[16, 16, 3], 6);
    for method in Method::ALL {
        let err = attribute(&model, &x, 2, method, &MethodConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ClassOutOfRange { class: 2, .. }), "{method}: {err}");
    }
}

#[test]
fn cams_need_a_conv_layer() {
    let (model, _) = linear_model(1);
    let x = random_input(&[3, 3, 2], 1);
    assert!(matches!(grad_cam(&model, &x, 0), Err(Error::UnsupportedLayer { .. })));
    assert!(matches!(score_cam(&model, &x, 0), Err(Error::UnsupportedLayer { .. })));
}

#[test]
fn upsampling_constant_grids_stays_constant() {
    let t = Tensor::full(&[4, 3], 0.7);
    let up = upsample_bilinear(&t, 9, 10).unwrap();
    assert!(up.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
}
