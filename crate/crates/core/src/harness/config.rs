//! The experiment configuration file.
//!
//! One JSON document with four sections. Every field has a default, so `{}` is
//! a complete config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::curves::FitMode;
use crate::dataset::{self, CsvSchema, Dataset};
use crate::nnet::{Activation, Layer, NetworkSpec, TrainConfig};
use crate::reduction::{KMeansConfig, LossDirection, Strategy};

pub const DEFAULT_FRACTIONS: [f64; 7] = [0.005, 0.01, 0.05, 0.1, 0.3, 0.5, 0.7];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub network: NetworkSection,
    /// Shared by every run. The seeds in here are ignored; each repetition
    /// sets its own.
    pub training: TrainConfig,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetSource,
    /// Share of every class held out for validation.
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            source: DatasetSource::default(),
            val_fraction: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Blobs {
        #[serde(default = "blob_defaults::n_per_class")]
        n_per_class: usize,
        #[serde(default = "blob_defaults::num_classes")]
        num_classes: usize,
        #[serde(default = "blob_defaults::dim")]
        dim: usize,
        #[serde(default = "blob_defaults::spread")]
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

mod blob_defaults {
    pub fn n_per_class() -> usize {
        500
    }
    pub fn num_classes() -> usize {
        10
    }
    pub fn dim() -> usize {
        16
    }
    pub fn spread() -> f64 {
        4.0
    }
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Blobs {
            n_per_class: blob_defaults::n_per_class(),
            num_classes: blob_defaults::num_classes(),
            dim: blob_defaults::dim(),
            spread: blob_defaults::spread(),
            seed: 0,
        }
    }
}

impl DatasetSource {
    /// Relative CSV paths are resolved against `base` (the config file's
    /// directory).
    pub fn load(&self, base: Option<&Path>) -> Result<Dataset> {
        match self {
            DatasetSource::Blobs {
                n_per_class,
                num_classes,
                dim,
                spread,
                seed,
            } => Ok(dataset::generate_blobs(*n_per_class, *num_classes, *dim, *spread, *seed)?),
            DatasetSource::Csv { path, schema } => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                Ok(dataset::load_csv(path, schema)?)
            }
        }
    }
}

/// Either an explicit layer list or a dense classifier built from
/// `hidden` and `activation`. Input width and class count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub layers: Option<Vec<Layer>>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Relu,
            layers: None,
        }
    }
}

impl NetworkSection {
    pub fn build(&self, data: &Dataset) -> NetworkSpec {
        match &self.layers {
            Some(layers) => NetworkSpec::new(data.feature_shape(), layers.clone()),
            None => NetworkSpec::dense_classifier(data.feature_shape(), &self.hidden, self.activation, data.num_classes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Table columns, in this order.
    pub strategies: Vec<Strategy>,
    /// Table rows; strictly ascending, each in (0, 1).
    pub fractions: Vec<f64>,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Network initializations averaged into the loss profile.
    pub profile_seeds: usize,
    pub fit_mode: FitMode,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
    pub kmeans: KMeansConfig,
    pub loss_direction: LossDirection,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            fractions: DEFAULT_FRACTIONS.to_vec(),
            repetitions: 40,
            base_seed: 0,
            profile_seeds: 10,
            fit_mode: FitMode::AverageThenFit,
            workers: None,
            kmeans: KMeansConfig::default(),
            loss_direction: LossDirection::Highest,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Pretty JSON with every default filled in.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let e = &self.experiment;
        if e.strategies.is_empty() {
            return bad("experiment.strategies is empty".into());
        }
        for (i, s) in e.strategies.iter().enumerate() {
            if e.strategies[..i].contains(s) {
                return bad(format!("strategy {s} listed twice"));
            }
        }
        if e.fractions.is_empty() {
            return bad("experiment.fractions is empty".into());
        }
        if let Some(f) = e.fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return bad(format!("fraction {f} is outside (0, 1)"));
        }
        if e.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("fractions must be strictly ascending: {:?}", e.fractions));
        }
        if e.repetitions == 0 {
            return bad("experiment.repetitions must be at least 1".into());
        }
        if e.profile_seeds == 0 && e.strategies.contains(&Strategy::Loss) {
            return bad("experiment.profile_seeds must be at least 1 for the loss strategy".into());
        }
        if e.workers == Some(0) {
            return bad("experiment.workers must be positive".into());
        }
        e.kmeans.validate().map_err(|err| HarnessError::Config(err.to_string()))?;
        self.training
            .validate()
            .map_err(|err| HarnessError::Config(err.to_string()))?;
        let v = self.dataset.val_fraction;
        if !(v > 0.0 && v < 1.0) {
            return bad(format!("dataset.val_fraction {v} is outside (0, 1)"));
        }
        Ok(())
    }
}
