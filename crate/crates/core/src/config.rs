//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! rounds = 40
//! clients = 30
//! selection_fraction = 0.3334
//! alpha = 0.5
//! eta = 0.3
//!
//! [dataset]
//! kind = "synth"
//! classes = 10
//! per_class = 200
//!
//! [attack]
//! kind = "multiple"
//!
//! [defense]
//! kind = "trigger_gen"
//! ```
//!
//! Every omitted key takes the default shown by [`ExperimentConfig::default`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind};
use crate::data::{load_idx, synth_dataset, Dataset, TriggerSpec};
use crate::defenses::DefenseConfig;
use crate::error::{Error, Result};
use crate::nn::{ClassifierSpec, SgdConfig};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synth {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        #[serde(default = "default_side")]
        height: usize,
        #[serde(default = "default_side")]
        width: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Keep only the first `n` training samples.
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

fn default_classes() -> usize {
    10
}

fn default_per_class() -> usize {
    200
}

fn default_test_per_class() -> usize {
    50
}

fn default_side() -> usize {
    16
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synth {
            classes: default_classes(),
            per_class: default_per_class(),
            test_per_class: default_test_per_class(),
            height: default_side(),
            width: default_side(),
        }
    }
}

impl DatasetConfig {
    /// Loads or generates the `(train, test)` pair.
    pub fn load(&self, master_seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetConfig::Synth {
                classes,
                per_class,
                test_per_class,
                height,
                width,
            } => {
                let shape = (*height, *width, 1);
                let train = synth_dataset(
                    *classes,
                    *per_class,
                    shape,
                    derive_seed(master_seed, "train-data", 0, 0),
                )?;
                let test = synth_dataset(
                    *classes,
                    *test_per_class,
                    shape,
                    derive_seed(master_seed, "test-data", 0, 0),
                )?;
                Ok((train, test))
            }
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
            } => {
                let mut train = load_idx(train_images, train_labels)?;
                let mut test = load_idx(test_images, test_labels)?;
                if let Some(n) = train_limit {
                    train = train.take(*n)?;
                }
                if let Some(n) = test_limit {
                    test = test.take(*n)?;
                }
                Ok((train, test))
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = self
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![128, 64],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerConfig {
    pub size: usize,
    /// Distance from the bottom and right edges.
    pub margin: usize,
    pub value: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            size: 3,
            margin: 1,
            value: 1.0,
        }
    }
}

impl TriggerConfig {
    pub fn build(&self, shape: (usize, usize, usize)) -> Result<TriggerSpec> {
        TriggerSpec::corner_block(shape, self.size, self.margin, self.value)
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Benign clients: one local epoch at lr 0.05. Faster local steps leave
/// non-IID clients overconfident on near-blank inputs of their majority
/// class, which the trigger filter then flags.
pub fn default_benign_sgd() -> SgdConfig {
    SgdConfig {
        lr: 0.05,
        momentum: 0.9,
        weight_decay: 0.001,
        epochs: 1,
        batch_size: 32,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: usize,
    pub clients: usize,
    /// Fraction of the pool selected each round (rounded, at least 1).
    pub selection_fraction: f64,
    /// Dirichlet concentration of the label split.
    pub alpha: f64,
    /// Fraction of the pool that is adversarial (ignored by `single`,
    /// which always uses one adversary).
    pub eta: f64,
    /// Evaluate every `eval_every` rounds; the last round is always evaluated.
    pub eval_every: usize,
    pub output_dir: PathBuf,
    /// Write measured wall time to the CSV; off keeps the file
    /// byte-deterministic.
    pub record_wall_time: bool,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub training: SgdConfig,
    pub attack: AttackConfig,
    pub trigger: TriggerConfig,
    pub defense: DefenseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            rounds: 40,
            clients: 30,
            selection_fraction: 1.0 / 3.0,
            alpha: 0.5,
            eta: 0.3,
            eval_every: 1,
            output_dir: PathBuf::from("out"),
            record_wall_time: false,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            training: default_benign_sgd(),
            attack: AttackConfig::default(),
            trigger: TriggerConfig::default(),
            defense: DefenseConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative dataset paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.dataset.resolve(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.clients == 0 {
            return bad("clients must be ≥ 1".into());
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return bad(format!(
                "selection_fraction must be in (0, 1], got {}",
                self.selection_fraction
            ));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must be in [0, 1], got {}", self.eta));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be ≥ 1".into());
        }
        if self.model.hidden.contains(&0) {
            return bad("hidden widths must be ≥ 1".into());
        }
        if let DatasetConfig::Synth {
            classes,
            per_class,
            test_per_class,
            height,
            width,
        } = &self.dataset
        {
            if *classes < 2 || *per_class == 0 || *test_per_class == 0 {
                return bad("synth dataset needs ≥ 2 classes and ≥ 1 sample per class".into());
            }
            if *height == 0 || *width == 0 {
                return bad("synth image sides must be ≥ 1".into());
            }
            self.attack.validate(*classes)?;
            self.trigger.build((*height, *width, 1))?;
        }
        self.training
            .validate()
            .map_err(|e| Error::Config(format!("training: {e}")))?;
        self.defense.validate()
    }

    pub fn selected_per_round(&self) -> usize {
        ((self.selection_fraction * self.clients as f64).round() as usize).clamp(1, self.clients)
    }

    pub fn adversary_count(&self) -> usize {
        match self.attack.kind {
            AttackKind::None => 0,
            AttackKind::Single => 1,
            _ => (self.eta * self.clients as f64).round() as usize,
        }
    }

    pub fn classifier_spec(&self, train: &Dataset) -> ClassifierSpec {
        let (height, width, channels) = train.image_shape();
        ClassifierSpec {
            height,
            width,
            channels,
            hidden: self.model.hidden.clone(),
            classes: train.classes(),
        }
    }
}
