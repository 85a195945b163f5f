//! On-disk dataset layout: `manifest.json` plus `NNNNNN.bten`,
//! `NNNNNN.mask` and, for marker samples, `NNNNNN.marker.mask`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, GeneratorConfig, SampleRecord, Scenario, Split};
use crate::binio::{decode_tensor, encode_mask, encode_tensor, read_mask};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker_bbox: Option<[usize; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<usize>,
    /// Hex SHA-256 of the image file.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSplits {
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub scenario: Scenario,
    pub biased: bool,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub splits: ManifestSplits,
}

impl DatasetManifest {
    pub(super) fn describe(
        cfg: &GeneratorConfig,
        train: &[SampleRecord],
        val: &[SampleRecord],
        test: &[SampleRecord],
    ) -> Result<Self> {
        let entries = |s: &[SampleRecord]| s.iter().map(entry).collect::<Result<Vec<_>>>();
        Ok(Self {
            scenario: cfg.scenario,
            biased: cfg.biased,
            seed: cfg.seed,
            width: cfg.width,
            height: cfg.height,
            classes: cfg.num_classes,
            splits: ManifestSplits {
                train: entries(train)?,
                val: entries(val)?,
                test: entries(test)?,
            },
        })
    }

    pub fn split(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }
}

fn entry(s: &SampleRecord) -> Result<ManifestEntry> {
    Ok(ManifestEntry {
        file: format!("{}.bten", s.id),
        label: s.label,
        marker_bbox: s.marker_bbox,
        texture: s.texture,
        checksum: hex::encode(Sha256::digest(encode_tensor(&s.image)?)),
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `dataset` into `dir`, creating it if needed.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in dataset.samples() {
        write(&dir.join(format!("{}.bten", s.id)), &encode_tensor(&s.image)?)?;
        write(&dir.join(format!("{}.mask", s.id)), &encode_mask(&s.object_mask))?;
        if let Some(m) = &s.marker_mask {
            write(&dir.join(format!("{}.marker.mask", s.id)), &encode_mask(m))?;
        }
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&dataset.manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    write(&path, json.as_bytes())
}

fn load_sample(dir: &Path, manifest: &DatasetManifest, e: &ManifestEntry) -> Result<SampleRecord> {
    let bad = |reason: String| Error::DatasetLoad {
        sample: e.file.clone(),
        reason,
    };
    let id = e
        .file
        .strip_suffix(".bten")
        .ok_or_else(|| bad("file name must end in .bten".into()))?
        .to_string();
    let path = dir.join(&e.file);
    let bytes = fs::read(&path).map_err(|err| bad(format!("cannot read {}: {err}", path.display())))?;
    let checksum = hex::encode(Sha256::digest(&bytes));
    if checksum != e.checksum {
        return Err(bad(format!("checksum mismatch (manifest {}, file {checksum})", e.checksum)));
    }
    let image = decode_tensor(&bytes).map_err(|err| bad(err.to_string()))?;
    let expected = [manifest.width, manifest.height, 3];
    if image.shape() != expected {
        return Err(bad(format!("image shape {:?}, expected {expected:?}", image.shape())));
    }
    if let Some(v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(bad(format!("pixel value {v} outside [0, 1]")));
    }
    if e.label >= manifest.classes {
        return Err(bad(format!("label {} out of range for {} classes", e.label, manifest.classes)));
    }
    let load_mask = |name: String| {
        let m = read_mask(dir.join(&name)).map_err(|err| bad(format!("{name}: {err}")))?;
        if (m.width(), m.height()) != (manifest.width, manifest.height) {
            return Err(bad(format!("{name} is {}x{}", m.width(), m.height())));
        }
        Ok(m)
    };
    let object_mask = load_mask(format!("{id}.mask"))?;
    if object_mask.count() == 0 {
        return Err(bad("object mask is empty".into()));
    }
    let marker_mask = match e.marker_bbox {
        Some(bbox) => {
            let m = load_mask(format!("{id}.marker.mask"))?;
            if m.bbox() != Some(bbox) {
                return Err(bad(format!("marker_bbox {bbox:?} does not match the marker mask")));
            }
            if m.intersection_count(&object_mask) != 0 {
                return Err(bad("marker overlaps the object".into()));
            }
            Some(m)
        }
        None => None,
    };
    Ok(SampleRecord {
        id,
        image,
        label: e.label,
        object_mask,
        marker_bbox: e.marker_bbox,
        marker_mask,
        texture: e.texture,
    })
}

/// Reads and validates a dataset written by [`save_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    if manifest.classes != manifest.scenario.num_classes() {
        return Err(Error::format(
            "classes",
            format!("{} has {} classes, manifest says {}", manifest.scenario, manifest.scenario.num_classes(), manifest.classes),
        ));
    }
    let load = |split: Split| {
        manifest
            .split(split)
            .iter()
            .map(|e| load_sample(dir, &manifest, e))
            .collect::<Result<Vec<_>>>()
    };
    Ok(Dataset {
        train: load(Split::Train)?,
        val: load(Split::Val)?,
        test: load(Split::Test)?,
        manifest,
    })
}
