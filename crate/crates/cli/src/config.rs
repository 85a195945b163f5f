use std::path::{Path, PathBuf};

use anyhow::Context;
use biasbench_core::attrib::{Method, MethodConfig};
use biasbench_core::metrics::AopcConfig;
use biasbench_core::nn::TrainingConfig;
use biasbench_core::synth::{GeneratorConfig, Scenario, Split};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub datasets: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub maps: Option<PathBuf>,
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub ig_steps: usize,
    pub lrp_epsilon: f64,
    pub aopc_steps: usize,
    pub aopc_region: usize,
    /// Area factor applied to every ground-truth mask.
    pub dilation: f64,
    pub alpha: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ig_steps: 64,
            lrp_epsilon: 10.0,
            aopc_steps: 100,
            aopc_region: 9,
            dilation: 1.5,
            alpha: 0.05,
        }
    }
}

impl MetricsConfig {
    pub fn method_config(&self) -> MethodConfig {
        MethodConfig {
            ig_steps: self.ig_steps,
            lrp_epsilon: self.lrp_epsilon,
            ..MethodConfig::default()
        }
    }

    pub fn aopc_config(&self) -> AopcConfig {
        AopcConfig {
            steps: self.aopc_steps,
            region: self.aopc_region,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsConfig {
    pub data: u64,
    pub train: u64,
    pub perturbation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitsConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    /// Methods that also get AOPC curves; defaults to `methods`.
    #[serde(default)]
    pub aopc_methods: Option<Vec<Method>>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub seeds: SeedsConfig,
    /// Defaults to the scenario's split sizes.
    #[serde(default)]
    pub splits: Option<SplitsConfig>,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default)]
    pub training: TrainingConfig,
    /// Networks trained per dataset, with consecutive training seeds.
    #[serde(default = "default_networks")]
    pub networks: usize,
    /// Only the first `eval_limit` samples of the evaluation split are used.
    #[serde(default)]
    pub eval_limit: Option<usize>,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_image_size() -> usize {
    64
}

fn default_networks() -> usize {
    1
}

impl RunConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            paths: PathsConfig::default(),
            methods: all_methods(),
            aopc_methods: None,
            metrics: MetricsConfig::default(),
            seeds: SeedsConfig::default(),
            splits: None,
            image_size: default_image_size(),
            training: TrainingConfig::default(),
            networks: default_networks(),
            eval_limit: None,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(CliError::Usage)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))
            .map_err(CliError::Usage)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |msg: String| Err(CliError::Usage(anyhow::anyhow!(msg)));
        if self.methods.is_empty() {
            return usage("methods must not be empty".into());
        }
        if let Some(extra) = self.aopc_methods().iter().find(|m| !self.methods.contains(m)) {
            return usage(format!("aopc method {extra} is not among the selected methods"));
        }
        if !(self.metrics.alpha > 0.0 && self.metrics.alpha < 1.0) {
            return usage(format!("alpha must lie in (0, 1), got {}", self.metrics.alpha));
        }
        if !(self.metrics.dilation >= 1.0) {
            return usage(format!("dilation must be at least 1, got {}", self.metrics.dilation));
        }
        if self.networks == 0 {
            return usage("networks must be at least 1".into());
        }
        if self.eval_limit == Some(0) {
            return usage("eval_limit must be positive".into());
        }
        let checks = [
            self.metrics.method_config().validate(),
            self.metrics.aopc_config().validate(),
            self.training.validate(),
            self.generator(true).validate(),
        ];
        for c in checks {
            c.map_err(|e| CliError::Usage(e.into()))?;
        }
        Ok(())
    }

    pub fn aopc_methods(&self) -> Vec<Method> {
        self.aopc_methods.clone().unwrap_or_else(|| self.methods.clone())
    }

    /// Overrides every seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seeds = SeedsConfig {
            data: seed,
            train: seed,
            perturbation: seed,
        };
    }

    pub fn generator(&self, biased: bool) -> GeneratorConfig {
        let mut g = GeneratorConfig::new(self.scenario, biased, self.seeds.data);
        if let Some(s) = self.splits {
            g = g.with_splits(s.train, s.val, s.test);
        }
        g.width = self.image_size;
        g.height = self.image_size;
        g
    }

    /// Marker runs are evaluated on the validation split, background runs on
    /// the test split.
    pub fn eval_split(&self) -> Split {
        match self.scenario {
            Scenario::MarkerBias => Split::Val,
            Scenario::BackgroundBias => Split::Test,
        }
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Resolved artifact directories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub datasets: PathBuf,
    pub models: PathBuf,
    pub maps: PathBuf,
    pub results: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig, out: &Path) -> Self {
        let pick = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| out.join(name));
        Self {
            datasets: pick(&cfg.paths.datasets, "datasets"),
            models: pick(&cfg.paths.models, "models"),
            maps: pick(&cfg.paths.maps, "maps"),
            results: pick(&cfg.paths.results, "results"),
        }
    }

    pub fn dataset(&self, biased: bool) -> PathBuf {
        self.datasets.join(condition(biased))
    }
}

pub fn condition(biased: bool) -> &'static str {
    if biased {
        "biased"
    } else {
        "unbiased"
    }
}
