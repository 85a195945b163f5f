//! Full-image procedural background textures.
//!
//! Each texture is a scalar pattern in `[0, 1]` blended between two colors of
//! a per-texture palette; the pattern phase and the palette are jittered per
//! sample so no two backgrounds are pixel-identical.

use std::f64::consts::TAU;

use rand::Rng;

pub const TEXTURE_COUNT: usize = 5;

pub const TEXTURE_NAMES: [&str; TEXTURE_COUNT] =
    ["stripes", "checkerboard", "blob_noise", "diagonal_gradient", "dot_grid"];

// Dark, low-contrast palettes: the light foreground object stays the most
// salient structure while hue still identifies the texture.
const PALETTES: [[[f64; 3]; 2]; TEXTURE_COUNT] = [
    [[0.15, 0.35, 0.13], [0.25, 0.50, 0.22]],
    [[0.40, 0.27, 0.16], [0.52, 0.38, 0.25]],
    [[0.18, 0.24, 0.45], [0.30, 0.38, 0.60]],
    [[0.50, 0.32, 0.12], [0.62, 0.44, 0.22]],
    [[0.34, 0.30, 0.40], [0.46, 0.42, 0.54]],
];

/// Renders texture `texture` as a `[w, h, 3]` row-major buffer.
pub fn render<R: Rng>(texture: usize, width: usize, height: usize, rng: &mut R) -> Vec<f64> {
    let jitter = |c: [f64; 3], rng: &mut R| c.map(|v| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
    let lo = jitter(PALETTES[texture][0], rng);
    let hi = jitter(PALETTES[texture][1], rng);
    let pattern: Box<dyn Fn(f64, f64) -> f64> = match texture {
        0 => {
            let period = rng.random_range(6.0..10.0);
            let angle = rng.random_range(-0.3..0.3);
            let phase = rng.random_range(0.0..TAU);
            let (s, c) = f64::sin_cos(angle);
            Box::new(move |i, j| 0.5 + 0.5 * ((c * i + s * j) * TAU / period + phase).sin())
        }
        1 => {
            let cell = rng.random_range(6.0..10.0);
            let (oi, oj) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
            Box::new(move |i, j| {
                let a = ((i + oi) / cell).floor() as i64;
                let b = ((j + oj) / cell).floor() as i64;
                ((a + b).rem_euclid(2)) as f64
            })
        }
        2 => {
            let blobs: Vec<(f64, f64, f64, f64)> = (0..8)
                .map(|_| {
                    (
                        rng.random_range(0.0..width as f64),
                        rng.random_range(0.0..height as f64),
                        rng.random_range(4.0..10.0),
                        rng.random_range(0.5..1.0),
                    )
                })
                .collect();
            Box::new(move |i, j| {
                let v: f64 = blobs
                    .iter()
                    .map(|&(bi, bj, s, a)| a * (-((i - bi).powi(2) + (j - bj).powi(2)) / (2.0 * s * s)).exp())
                    .sum();
                v.min(1.0)
            })
        }
        3 => {
            let angle = rng.random_range(0.0..TAU);
            let phase = rng.random_range(0.0..1.0);
            let (s, c) = f64::sin_cos(angle);
            let span = (width + height) as f64;
            Box::new(move |i, j| {
                let t = (c * i + s * j) / span + phase;
                // triangle wave keeps the gradient seamless
                1.0 - (2.0 * t.rem_euclid(1.0) - 1.0).abs()
            })
        }
        _ => {
            let spacing = rng.random_range(6.0..9.0);
            let (oi, oj) = (rng.random_range(0.0..spacing), rng.random_range(0.0..spacing));
            Box::new(move |i, j| {
                let di = (i + oi).rem_euclid(spacing) - spacing / 2.0;
                let dj = (j + oj).rem_euclid(spacing) - spacing / 2.0;
                if di * di + dj * dj <= 4.0 { 1.0 } else { 0.0 }
            })
        }
    };
    let mut out = Vec::with_capacity(width * height * 3);
    for i in 0..width {
        for j in 0..height {
            let t = pattern(i as f64, j as f64);
            for c in 0..3 {
                out.push(lo[c] + t * (hi[c] - lo[c]));
            }
        }
    }
    out
}
