//! The four pipeline stages: synthesize, train, attribute, evaluate.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use biasbench_core::attrib::{attribute as attribute_map, Method};
use biasbench_core::binio::{read_tensor, write_tensor};
use biasbench_core::metrics::{
    aggregate, aopc, dilate_gt, random_perturbation_aopc, relevance_mass_accuracy, relevance_rank_accuracy, GroupKey,
    GtMask, GtProvenance, MetricRecord,
};
use biasbench_core::nn::{evaluate_accuracy, load_model, predict, save_model, train_with_progress, ModelSpec, TrainingConfig};
use biasbench_core::synth::{generate_dataset, load_dataset, save_dataset, Dataset, SampleRecord, Scenario, Split};
use biasbench_core::{Error, Mask};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{condition, Layout, RunConfig};
use crate::tables::{
    read_json, write_csv, write_json, AccuracyRow, AopcRow, MapEntry, MapsManifest, MetricRow, NetworkSamples, SampleRow,
};

pub const MAPS_MANIFEST: &str = "manifest.json";
pub const RANDOM_BASELINE: &str = "random";

/// A trained network: its id, training condition and seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    pub id: String,
    pub biased: bool,
    pub seed: u64,
}

pub fn networks(cfg: &RunConfig) -> Vec<Network> {
    [true, false]
        .into_iter()
        .flat_map(|biased| {
            (0..cfg.networks).map(move |k| Network {
                id: format!("{}-{k}", condition(biased)),
                biased,
                seed: cfg.seeds.train + k as u64,
            })
        })
        .collect()
}

fn load_dataset_at(dir: &Path) -> Result<Dataset> {
    load_dataset(dir).with_context(|| format!("cannot load dataset {}", dir.display()))
}

fn model_path(layout: &Layout, net: &Network) -> std::path::PathBuf {
    layout.models.join(format!("{}.bbm", net.id))
}

fn load_network(layout: &Layout, net: &Network) -> Result<ModelSpec> {
    let path = model_path(layout, net);
    load_model(&path).with_context(|| format!("cannot load model {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// Writes the biased dataset and its unbiased reference.
pub fn synth(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    for biased in [true, false] {
        let ds = generate_dataset(&cfg.generator(biased))?;
        let dir = layout.dataset(biased);
        save_dataset(&ds, &dir).with_context(|| format!("cannot write dataset {}", dir.display()))?;
        eprintln!("wrote {} samples to {}", ds.samples().count(), dir.display());
    }
    Ok(())
}

/// Trains `cfg.networks` models per dataset.
pub fn train(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let datasets = [load_dataset_at(&layout.dataset(true))?, load_dataset_at(&layout.dataset(false))?];
    create_dir(&layout.models)?;
    for net in networks(cfg) {
        let ds = &datasets[usize::from(!net.biased)];
        let input = [ds.manifest.width, ds.manifest.height, 3];
        let init = ModelSpec::desk_cnn(input, ds.manifest.classes, net.seed)?;
        let tcfg = TrainingConfig {
            seed: net.seed,
            ..cfg.training.clone()
        };
        let (model, history) = train_with_progress(&init, &ds.train, &ds.val, &tcfg, |e| {
            eprintln!(
                "{} epoch {}: train loss {:.4}, val loss {:.4}, val accuracy {:.4}",
                net.id, e.epoch, e.train_loss, e.val_loss, e.val_accuracy
            )
        })
        .with_context(|| format!("training {} failed", net.id))?;
        let path = model_path(layout, &net);
        save_model(&model, &path).with_context(|| format!("cannot write {}", path.display()))?;
        write_json(&layout.models.join(format!("{}.history.json", net.id)), &history)?;
    }
    Ok(())
}

fn eval_samples<'a>(cfg: &RunConfig, ds: &'a Dataset) -> &'a [SampleRecord] {
    let all = ds.split(cfg.eval_split());
    &all[..cfg.eval_limit.unwrap_or(all.len()).min(all.len())]
}

fn is_correct(model: &ModelSpec, s: &SampleRecord) -> biasbench_core::Result<bool> {
    Ok(predict(model, &s.image)?.argmax() == s.label)
}

/// Attribution maps for every correctly predicted evaluation sample.
pub fn attribute(cfg: &RunConfig, layout: &Layout) -> Result<MapsManifest> {
    let ds = load_dataset_at(&layout.dataset(true))?;
    let samples = eval_samples(cfg, &ds);
    let mcfg = cfg.metrics.method_config();
    let mut manifest = MapsManifest {
        config_hash: cfg.hash(),
        split: cfg.eval_split().as_str().to_string(),
        networks: Vec::new(),
        entries: Vec::new(),
    };
    for net in networks(cfg) {
        let model = load_network(layout, &net)?;
        let flags = samples
            .par_iter()
            .map(|s| is_correct(&model, s))
            .collect::<biasbench_core::Result<Vec<_>>>()?;
        let correct: Vec<&SampleRecord> = samples.iter().zip(&flags).filter(|(_, &ok)| ok).map(|(s, _)| s).collect();
        eprintln!("{}: {}/{} evaluation samples predicted correctly", net.id, correct.len(), samples.len());
        for &method in &cfg.methods {
            let rel_dir = format!("{}/{}", net.id, method);
            let dir = layout.maps.join(&rel_dir);
            create_dir(&dir)?;
            let files = correct
                .par_iter()
                .map(|s| {
                    let map = attribute_map(&model, &s.image, s.label, method, &mcfg)?;
                    let file = format!("{rel_dir}/{}.bten", s.id);
                    write_tensor(layout.maps.join(&file), &map.values)?;
                    Ok(file)
                })
                .collect::<biasbench_core::Result<Vec<_>>>()
                .with_context(|| format!("{method} maps for {} failed", net.id))?;
            manifest.entries.extend(correct.iter().zip(files).map(|(s, file)| MapEntry {
                network: net.id.clone(),
                method: method.to_string(),
                sample_id: s.id.clone(),
                class: s.label,
                file,
            }));
        }
        manifest.networks.push(NetworkSamples {
            network: net.id.clone(),
            biased: net.biased,
            evaluated: samples.len(),
            correct: correct.iter().map(|s| s.id.clone()).collect(),
        });
    }
    write_json(&layout.maps.join(MAPS_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// `(class, ground-truth object)` cells of a scenario.
pub fn gt_cells(scenario: Scenario) -> Vec<(usize, &'static str)> {
    let names = scenario.class_object_names();
    match scenario {
        Scenario::MarkerBias => vec![(0, names[0]), (0, "marker"), (1, names[1])],
        Scenario::BackgroundBias => names.iter().copied().enumerate().collect(),
    }
}

fn sample_gts<'a>(scenario: Scenario, s: &'a SampleRecord) -> Vec<(&'static str, &'a Mask, GtProvenance)> {
    let mut out = vec![(scenario.class_object_names()[s.label], &s.object_mask, GtProvenance::Object)];
    if let Some(m) = &s.marker_mask {
        out.push(("marker", m, GtProvenance::Marker));
    }
    out
}

/// AOPC class group: every class for the two-class scenario, class 0 vs.
/// the rest otherwise.
pub fn aopc_group(scenario: Scenario, class: usize) -> String {
    match (scenario, class) {
        (Scenario::BackgroundBias, c) if c > 0 => "rest".to_string(),
        (_, c) => format!("class{c}"),
    }
}

fn aopc_groups(scenario: Scenario) -> Vec<String> {
    match scenario {
        Scenario::MarkerBias => vec!["class0".into(), "class1".into()],
        Scenario::BackgroundBias => vec!["class0".into(), "rest".into()],
    }
}

fn sample_seed(base: u64, id: &str) -> Result<u64> {
    let idx: u64 = id.parse().with_context(|| format!("sample id {id} is not numeric"))?;
    Ok(base ^ idx)
}

/// Bookkeeping written next to the CSVs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub maps: usize,
    /// Maps with no relevance at all; they have no RMA/RRA.
    pub zero_mass_maps: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub samples: Vec<SampleRow>,
    pub metrics: Vec<MetricRow>,
    pub aopc: Vec<AopcRow>,
    pub accuracy: Vec<AccuracyRow>,
    pub summary: EvaluationSummary,
}

pub const SAMPLES_CSV: &str = "samples.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const AOPC_CSV: &str = "aopc.csv";
pub const ACCURACY_CSV: &str = "accuracy.csv";
pub const EVALUATION_JSON: &str = "evaluation.json";

/// Scores every map and writes the result tables. Nothing is written unless
/// every map could be scored.
pub fn evaluate(cfg: &RunConfig, layout: &Layout) -> Result<Evaluation> {
    let manifest_path = layout.maps.join(MAPS_MANIFEST);
    ensure!(
        manifest_path.exists(),
        "no attribution maps in {} (run `attribute` first)",
        layout.maps.display()
    );
    let manifest: MapsManifest = read_json(&manifest_path)?;
    ensure!(!manifest.entries.is_empty(), "{} lists no maps", manifest_path.display());
    if manifest.config_hash != cfg.hash() {
        bail!(
            "maps in {} were produced with a different configuration (hash {})",
            layout.maps.display(),
            manifest.config_hash
        );
    }
    let biased_ds = load_dataset_at(&layout.dataset(true))?;
    let unbiased_ds = load_dataset_at(&layout.dataset(false))?;
    let scenario = cfg.scenario;
    let by_id: HashMap<&str, &SampleRecord> = biased_ds.samples().map(|s| (s.id.as_str(), s)).collect();
    let nets = networks(cfg);
    let models: HashMap<&str, ModelSpec> = nets
        .iter()
        .map(|n| Ok((n.id.as_str(), load_network(layout, n)?)))
        .collect::<Result<_>>()?;
    let biased_of: HashMap<&str, bool> = nets.iter().map(|n| (n.id.as_str(), n.biased)).collect();
    let aopc_methods: Vec<String> = cfg.aopc_methods().iter().map(Method::to_string).collect();
    let acfg = cfg.metrics.aopc_config();
    let dims = [biased_ds.manifest.width, biased_ds.manifest.height];

    let row = |e: &MapEntry, gt: &str, metric: &str, value: f64| SampleRow {
        network: e.network.clone(),
        scenario: scenario.to_string(),
        biased: biased_of[e.network.as_str()],
        method: e.method.clone(),
        class: e.class,
        gt_object: gt.to_string(),
        metric: metric.to_string(),
        sample_id: e.sample_id.clone(),
        value,
    };

    // (rows, zero-mass) per map, in manifest order
    let scored = manifest
        .entries
        .par_iter()
        .map(|e| -> Result<(Vec<SampleRow>, bool)> {
            let s = by_id
                .get(e.sample_id.as_str())
                .with_context(|| format!("map {} refers to unknown sample {}", e.file, e.sample_id))?;
            let model = models
                .get(e.network.as_str())
                .with_context(|| format!("map {} refers to unknown network {}", e.file, e.network))?;
            let map = read_tensor(layout.maps.join(&e.file)).with_context(|| format!("cannot read map {}", e.file))?;
            ensure!(
                map.shape() == [dims[0], dims[1], 1],
                "map {} has shape {:?}, expected {}x{}",
                e.file,
                map.shape(),
                dims[0],
                dims[1]
            );
            let map = map.reshape(&dims)?;
            let mut rows = Vec::new();
            let mut zero_mass = false;
            for (name, mask, prov) in sample_gts(scenario, s) {
                let gt = dilate_gt(&GtMask::new(mask.clone(), prov)?, cfg.metrics.dilation)?;
                match relevance_mass_accuracy(&map, &gt) {
                    Ok(v) => {
                        rows.push(row(e, name, "rma", v));
                        rows.push(row(e, name, "rra", relevance_rank_accuracy(&map, &gt)?));
                    }
                    Err(Error::ZeroMass) => zero_mass = true,
                    Err(err) => return Err(err.into()),
                }
            }
            if aopc_methods.contains(&e.method) {
                let seed = sample_seed(cfg.seeds.perturbation, &e.sample_id)?;
                let (v, curve) = aopc(model, &s.image, &map, &acfg, seed)?;
                rows.push(row(e, "", "aopc", v));
                rows.push(row(e, "", "aopc_steps", curve.steps as f64));
            }
            Ok((rows, zero_mass))
        })
        .collect::<Result<Vec<_>>>()?;

    // the random-order baseline does not depend on the method
    let random_jobs: Vec<(&NetworkSamples, &String)> = if aopc_methods.is_empty() {
        Vec::new()
    } else {
        manifest.networks.iter().flat_map(|n| n.correct.iter().map(move |id| (n, id))).collect()
    };
    let random_rows = random_jobs
        .par_iter()
        .map(|&(n, id)| -> Result<SampleRow> {
            let s = by_id.get(id.as_str()).with_context(|| format!("unknown sample {id}"))?;
            let seed = sample_seed(cfg.seeds.perturbation, id)?;
            let (v, _) = random_perturbation_aopc(&models[n.network.as_str()], &s.image, &acfg, seed)?;
            Ok(SampleRow {
                network: n.network.clone(),
                scenario: scenario.to_string(),
                biased: n.biased,
                method: RANDOM_BASELINE.to_string(),
                class: s.label,
                gt_object: String::new(),
                metric: "aopc".to_string(),
                sample_id: id.clone(),
                value: v,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = EvaluationSummary {
        maps: manifest.entries.len(),
        zero_mass_maps: Vec::new(),
    };
    let mut samples = Vec::new();
    for (e, (rows, zero)) in manifest.entries.iter().zip(scored) {
        if zero {
            summary.zero_mass_maps.push(e.file.clone());
        }
        samples.extend(rows);
    }
    samples.extend(random_rows);

    let metrics = metric_rows(cfg, &nets, &samples);
    let aopc = aopc_rows(cfg, &nets, &samples);

    let accuracy = nets
        .iter()
        .flat_map(|n| [(n, true, &biased_ds), (n, false, &unbiased_ds)])
        .map(|(n, dataset_biased, ds)| {
            let test = ds.split(Split::Test);
            Ok(AccuracyRow {
                network: n.id.clone(),
                network_biased: n.biased,
                dataset_biased,
                split: Split::Test.as_str().to_string(),
                accuracy: evaluate_accuracy(&models[n.id.as_str()], test)?,
                n: test.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let out = Evaluation {
        samples,
        metrics,
        aopc,
        accuracy,
        summary,
    };
    create_dir(&layout.results)?;
    write_csv(&layout.results.join(SAMPLES_CSV), &out.samples)?;
    write_csv(&layout.results.join(METRICS_CSV), &out.metrics)?;
    write_csv(&layout.results.join(AOPC_CSV), &out.aopc)?;
    write_csv(&layout.results.join(ACCURACY_CSV), &out.accuracy)?;
    write_json(&layout.results.join(EVALUATION_JSON), &out.summary)?;
    Ok(out)
}

fn metric_rows(cfg: &RunConfig, nets: &[Network], samples: &[SampleRow]) -> Vec<MetricRow> {
    let key = |network: &str, method: &str, class: usize, gt: &str, metric: &str| GroupKey {
        network: network.to_string(),
        method: method.to_string(),
        group: class.to_string(),
        gt_object: gt.to_string(),
        metric: metric.to_string(),
    };
    let mut expected = Vec::new();
    for n in nets {
        for m in &cfg.methods {
            for (class, gt) in gt_cells(cfg.scenario) {
                for metric in ["rma", "rra"] {
                    expected.push(key(&n.id, m.as_str(), class, gt, metric));
                }
            }
        }
    }
    let records: Vec<MetricRecord> = samples
        .iter()
        .filter(|r| r.metric == "rma" || r.metric == "rra")
        .map(|r| MetricRecord {
            key: key(&r.network, &r.method, r.class, &r.gt_object, &r.metric),
            sample_id: r.sample_id.clone(),
            value: r.value,
        })
        .collect();
    let biased: HashMap<&str, bool> = nets.iter().map(|n| (n.id.as_str(), n.biased)).collect();
    aggregate(&records, &expected)
        .rows
        .into_iter()
        .map(|r| MetricRow {
            biased: biased[r.key.network.as_str()],
            scenario: cfg.scenario.to_string(),
            class: r.key.group.parse().expect("class groups are indices"),
            network: r.key.network,
            method: r.key.method,
            gt_object: r.key.gt_object,
            metric: r.key.metric,
            mean: r.mean,
            std: r.std,
            n: r.n,
        })
        .collect()
}

fn aopc_rows(cfg: &RunConfig, nets: &[Network], samples: &[SampleRow]) -> Vec<AopcRow> {
    let key = |network: &str, method: &str, group: String, metric: &str| GroupKey {
        network: network.to_string(),
        method: method.to_string(),
        group,
        gt_object: String::new(),
        metric: metric.to_string(),
    };
    let records: Vec<MetricRecord> = samples
        .iter()
        .filter(|r| r.metric.starts_with("aopc"))
        .map(|r| MetricRecord {
            key: key(&r.network, &r.method, aopc_group(cfg.scenario, r.class), &r.metric),
            sample_id: r.sample_id.clone(),
            value: r.value,
        })
        .collect();
    let table = aggregate(&records, &[]);
    let mean = |k: &GroupKey| table.get(k).and_then(|r| r.mean);
    let mut rows = Vec::new();
    for n in nets {
        for m in cfg.aopc_methods() {
            for group in aopc_groups(cfg.scenario) {
                let value_key = key(&n.id, m.as_str(), group.clone(), "aopc");
                rows.push(AopcRow {
                    network: n.id.clone(),
                    scenario: cfg.scenario.to_string(),
                    biased: n.biased,
                    method: m.to_string(),
                    value: mean(&value_key),
                    n: table.get(&value_key).map_or(0, |r| r.n),
                    random: mean(&key(&n.id, RANDOM_BASELINE, group.clone(), "aopc")),
                    steps: mean(&key(&n.id, m.as_str(), group.clone(), "aopc_steps")),
                    group,
                });
            }
        }
    }
    rows
}
