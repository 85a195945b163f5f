//! Deterministic generation of datasets with a known injected bias.
//!
//! Two scenarios are supported:
//!
//! * **marker bias**: two shape classes (ellipse vs. rounded rectangle);
//!   the biased variant stamps a small dark magenta disc into every class-0
//!   image, never overlapping the object. The marker is the only perfectly
//!   reliable class-0 cue, so a network can solve the task without looking
//!   at the object at all.
//! * **background bias**: five shape classes on five procedural textures;
//!   the biased variant always puts class 0 on texture 0 and never uses
//!   texture 0 for the other classes.
//!
//! Every sample is a pure function of `(config, sample index)`: its random
//! stream is seeded with `seed ^ index`, so generation order and thread count
//! do not matter. The object of sample `i` is drawn from the same stream in
//! the biased and unbiased variants, so the two datasets differ only in the
//! injected cue.

mod shapes;
mod store;
pub mod textures;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use shapes::{Placement, ShapeKind};
pub use store::{load_dataset, save_dataset, DatasetManifest, ManifestEntry, ManifestSplits};

use crate::binio::Mask;
use crate::error::{Error, Result};
use crate::nn::Labeled;
use crate::tensor::Tensor;

pub const MARKER_RADIUS: usize = 4;
pub const MARKER_COLOR: [f64; 3] = [0.6, 0.0, 0.6];
const OBJECT_BASE_COLOR: [f64; 3] = [0.9, 0.88, 0.8];
/// Minimum distance between an object mask and the image border.
pub const BORDER_MARGIN: usize = 2;
const MAX_TRIES: usize = 1000;

const STREAM_OBJECT: u64 = 0;
const STREAM_CUE: u64 = 1;
const STREAM_NOISE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    MarkerBias,
    BackgroundBias,
}

impl Scenario {
    pub fn num_classes(self) -> usize {
        match self {
            Scenario::MarkerBias => 2,
            Scenario::BackgroundBias => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::MarkerBias => "marker_bias",
            Scenario::BackgroundBias => "background_bias",
        }
    }

    /// Default `(train, val, test)` split sizes.
    pub fn default_splits(self) -> (usize, usize, usize) {
        match self {
            Scenario::MarkerBias => (2000, 300, 600),
            Scenario::BackgroundBias => (1500, 500, 500),
        }
    }

    /// Name of the ground-truth object belonging to each class.
    pub fn class_object_names(self) -> &'static [&'static str] {
        match self {
            Scenario::MarkerBias => &["shapeA", "shapeB"],
            Scenario::BackgroundBias => &["disc", "triangle", "cross", "ring", "star"],
        }
    }

    fn class_shape(self, class: usize) -> ShapeKind {
        match (self, class) {
            (Scenario::MarkerBias, 0) => ShapeKind::Ellipse,
            (Scenario::MarkerBias, _) => ShapeKind::RoundedRect,
            (Scenario::BackgroundBias, 0) => ShapeKind::Disc,
            (Scenario::BackgroundBias, 1) => ShapeKind::Triangle,
            (Scenario::BackgroundBias, 2) => ShapeKind::Cross,
            (Scenario::BackgroundBias, 3) => ShapeKind::Ring,
            (Scenario::BackgroundBias, _) => ShapeKind::Star,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marker_bias" => Ok(Scenario::MarkerBias),
            "background_bias" => Ok(Scenario::BackgroundBias),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario '{other}' (expected marker_bias or background_bias)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub scenario: Scenario,
    pub biased: bool,
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    /// 64x64 images with the scenario's default split sizes.
    pub fn new(scenario: Scenario, biased: bool, seed: u64) -> Self {
        let (train, val, test) = scenario.default_splits();
        Self {
            scenario,
            biased,
            width: 64,
            height: 64,
            num_classes: scenario.num_classes(),
            train,
            val,
            test,
            seed,
        }
    }

    pub fn with_splits(mut self, train: usize, val: usize, test: usize) -> Self {
        self.train = train;
        self.val = val;
        self.test = test;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != self.scenario.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "{} needs {} classes, config has {}",
                self.scenario,
                self.scenario.num_classes(),
                self.num_classes
            )));
        }
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(Error::InvalidArgument("split sizes must be positive".into()));
        }
        if self.width < 24 || self.height < 24 {
            return Err(Error::InvalidArgument(format!(
                "images must be at least 24x24, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    fn split_of(&self, index: usize) -> (Split, usize) {
        if index < self.train {
            (Split::Train, index)
        } else if index < self.train + self.val {
            (Split::Val, index - self.train)
        } else {
            (Split::Test, index - self.train - self.val)
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// One generated image with its label and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Six-digit index, also the file stem on disk.
    pub id: String,
    /// `[W, H, 3]`, values in `[0, 1]`, exactly representable as `f32`.
    pub image: Tensor,
    pub label: usize,
    pub object_mask: Mask,
    pub marker_bbox: Option<[usize; 4]>,
    pub marker_mask: Option<Mask>,
    /// Background texture index (background scenario only).
    pub texture: Option<usize>,
}

impl Labeled for SampleRecord {
    fn image(&self) -> &Tensor {
        &self.image
    }

    fn label(&self) -> usize {
        self.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[SampleRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = &SampleRecord> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

pub fn sample_id(index: usize) -> String {
    format!("{index:06}")
}

fn stream(seed: u64, index: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index as u64);
    rng.set_stream(purpose);
    rng
}

/// Object color: a light base color jittered per sample. It is shared by all
/// classes so only shape separates them, and it is far from the marker color
/// and brighter than every background.
fn object_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    OBJECT_BASE_COLOR.map(|v| v + rng.random_range(-0.06..0.06))
}

/// Places `kind` at random pose with the whole mask at least
/// [`BORDER_MARGIN`] pixels inside the image.
fn place_object<R: Rng>(rng: &mut R, kind: ShapeKind, width: usize, height: usize) -> Result<(Placement, Mask)> {
    let min_dim = width.min(height) as f64;
    for _ in 0..MAX_TRIES {
        // scale is the object's extent as a fraction of the image width
        let radius = rng.random_range(0.2..0.4) * min_dim / 2.0;
        let aspect = rng.random_range(kind.aspect_range());
        let rotation = rng.random_range(0.0..std::f64::consts::PI);
        let lo = BORDER_MARGIN as f64 + radius;
        let ci = rng.random_range(lo..(width as f64 - 1.0 - lo));
        let cj = rng.random_range(lo..(height as f64 - 1.0 - lo));
        let placement = Placement {
            kind,
            center: (ci, cj),
            radius,
            aspect,
            rotation,
        };
        let mask = placement.rasterize(width, height);
        if mask.count() > 0 && respects_margin(&mask) {
            return Ok((placement, mask));
        }
    }
    Err(Error::Generation(format!(
        "could not place a {kind:?} inside a {width}x{height} image"
    )))
}

fn respects_margin(mask: &Mask) -> bool {
    match mask.bbox() {
        None => false,
        Some([x, y, w, h]) => {
            x >= BORDER_MARGIN
                && y >= BORDER_MARGIN
                && x + w + BORDER_MARGIN <= mask.width()
                && y + h + BORDER_MARGIN <= mask.height()
        }
    }
}

fn disc_mask(width: usize, height: usize, ci: usize, cj: usize, r: usize) -> Mask {
    let r2 = (r * r) as i64;
    Mask::from_fn(width, height, |i, j| {
        let di = i as i64 - ci as i64;
        let dj = j as i64 - cj as i64;
        di * di + dj * dj <= r2
    })
}

/// Rejection-samples a marker position whose disc misses `object`.
fn place_marker<R: Rng>(rng: &mut R, object: &Mask) -> Result<Mask> {
    let (w, h) = (object.width(), object.height());
    let r = MARKER_RADIUS;
    for _ in 0..MAX_TRIES {
        let ci = rng.random_range(r..w - r);
        let cj = rng.random_range(r..h - r);
        let m = disc_mask(w, h, ci, cj, r);
        if m.intersection_count(object) == 0 {
            return Ok(m);
        }
    }
    Err(Error::Generation(format!(
        "no marker position avoids the object after {MAX_TRIES} tries"
    )))
}

fn finish_image(pixels: Vec<f64>, width: usize, height: usize, noise: &mut ChaCha8Rng) -> Tensor {
    let data = pixels
        .into_iter()
        .map(|v| {
            let noisy = (v + noise.random_range(-0.03..0.03)).clamp(0.0, 1.0);
            // keep every value exactly representable in the f32 file format
            f64::from(noisy as f32)
        })
        .collect();
    Tensor::new(vec![width, height, 3], data).expect("consistent image shape")
}

fn paint(pixels: &mut [f64], mask: &Mask, color: [f64; 3]) {
    for (idx, &on) in mask.bits().iter().enumerate() {
        if on {
            pixels[idx * 3..idx * 3 + 3].copy_from_slice(&color);
        }
    }
}

fn marker_sample(cfg: &GeneratorConfig, index: usize, label: usize) -> Result<SampleRecord> {
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = stream(cfg.seed, index, STREAM_OBJECT);
    let gray: f64 = rng.random_range(0.3..0.4);
    let bg = [0; 3].map(|_| (gray + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0));
    let color = object_color(&mut rng);
    let (_, object_mask) = place_object(&mut rng, Scenario::MarkerBias.class_shape(label), w, h)?;

    let mut pixels: Vec<f64> = bg.iter().copied().cycle().take(w * h * 3).collect();
    paint(&mut pixels, &object_mask, color);

    let marker_mask = if cfg.biased && label == 0 {
        let mut cue = stream(cfg.seed, index, STREAM_CUE);
        let m = place_marker(&mut cue, &object_mask)?;
        paint(&mut pixels, &m, MARKER_COLOR);
        Some(m)
    } else {
        None
    };
    let mut noise = stream(cfg.seed, index, STREAM_NOISE);
    Ok(SampleRecord {
        id: sample_id(index),
        image: finish_image(pixels, w, h, &mut noise),
        label,
        object_mask,
        marker_bbox: marker_mask.as_ref().and_then(Mask::bbox),
        marker_mask,
        texture: None,
    })
}

fn background_sample(cfg: &GeneratorConfig, index: usize, label: usize) -> Result<SampleRecord> {
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = stream(cfg.seed, index, STREAM_OBJECT);
    let (_, object_mask) = place_object(&mut rng, Scenario::BackgroundBias.class_shape(label), w, h)?;

    let mut cue = stream(cfg.seed, index, STREAM_CUE);
    let n_tex = textures::TEXTURE_COUNT;
    let texture = match (cfg.biased, label) {
        (true, 0) => 0,
        (true, _) => cue.random_range(1..n_tex),
        (false, _) => cue.random_range(0..n_tex),
    };
    let color = object_color(&mut rng);
    let mut pixels = textures::render(texture, w, h, &mut cue);
    paint(&mut pixels, &object_mask, color);

    let mut noise = stream(cfg.seed, index, STREAM_NOISE);
    Ok(SampleRecord {
        id: sample_id(index),
        image: finish_image(pixels, w, h, &mut noise),
        label,
        object_mask,
        marker_bbox: None,
        marker_mask: None,
        texture: Some(texture),
    })
}

/// Generates the single sample with global index `index`.
pub fn generate_sample(cfg: &GeneratorConfig, index: usize) -> Result<SampleRecord> {
    let (_, within) = cfg.split_of(index);
    let label = within % cfg.num_classes;
    match cfg.scenario {
        Scenario::MarkerBias => marker_sample(cfg, index, label),
        Scenario::BackgroundBias => background_sample(cfg, index, label),
    }
}

fn generate(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let samples: Vec<SampleRecord> = (0..cfg.total())
        .into_par_iter()
        .map(|i| generate_sample(cfg, i))
        .collect::<Result<_>>()?;
    let mut it = samples.into_iter();
    let train: Vec<_> = it.by_ref().take(cfg.train).collect();
    let val: Vec<_> = it.by_ref().take(cfg.val).collect();
    let test: Vec<_> = it.collect();
    let manifest = DatasetManifest::describe(cfg, &train, &val, &test)?;
    Ok(Dataset {
        manifest,
        train,
        val,
        test,
    })
}

/// Two-class shape dataset; when biased, every class-0 image carries the marker.
pub fn generate_marker_bias_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    if cfg.scenario != Scenario::MarkerBias {
        return Err(Error::InvalidArgument(format!(
            "expected the marker_bias scenario, got {}",
            cfg.scenario
        )));
    }
    generate(cfg)
}

/// Five-class shape-on-texture dataset; when biased, class 0 always sits on
/// texture 0 and no other class does.
pub fn generate_background_bias_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    if cfg.scenario != Scenario::BackgroundBias {
        return Err(Error::InvalidArgument(format!(
            "expected the background_bias scenario, got {}",
            cfg.scenario
        )));
    }
    generate(cfg)
}

pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    match cfg.scenario {
        Scenario::MarkerBias => generate_marker_bias_dataset(cfg),
        Scenario::BackgroundBias => generate_background_bias_dataset(cfg),
    }
}
