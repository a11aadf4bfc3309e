//! Experiment configuration and its `key=value` text form.
//!
//! A config file holds one `key=value` per line; blank lines and lines
//! starting with `#` are ignored. The same keys appear at the top of every
//! result record, so the configuration part of a record can be fed back as
//! a config file.

use std::path::{Path, PathBuf};

use crate::dbn::FineTuneConfig;
use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoiseSpec, DEFAULT_AWGN_SIGMA, DEFAULT_BLUR_ANGLE, DEFAULT_BLUR_LENGTH, DEFAULT_CONTRAST_SCALE};
use crate::quadtree::{Criterion, HomogeneityThreshold, DEFAULT_CANVAS, DEFAULT_TAU};
use crate::rbm::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetVariant {
    Mnist,
    NmnistAwgn,
    NmnistBlur,
    NmnistAwgnContrast,
}

impl DatasetVariant {
    pub const ALL: [DatasetVariant; 4] = [
        DatasetVariant::Mnist,
        DatasetVariant::NmnistAwgn,
        DatasetVariant::NmnistBlur,
        DatasetVariant::NmnistAwgnContrast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetVariant::Mnist => "mnist",
            DatasetVariant::NmnistAwgn => "nmnist_awgn",
            DatasetVariant::NmnistBlur => "nmnist_blur",
            DatasetVariant::NmnistAwgnContrast => "nmnist_awgn_contrast",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            DatasetVariant::Mnist => "MNIST",
            DatasetVariant::NmnistAwgn => "n-MNIST with AWGN",
            DatasetVariant::NmnistBlur => "n-MNIST with Motion Blur",
            DatasetVariant::NmnistAwgnContrast => "n-MNIST with AWGN and Reduced Contrast",
        }
    }

    pub fn noise_kind(self) -> Option<NoiseKind> {
        match self {
            DatasetVariant::Mnist => None,
            DatasetVariant::NmnistAwgn => Some(NoiseKind::Awgn),
            DatasetVariant::NmnistBlur => Some(NoiseKind::MotionBlur),
            DatasetVariant::NmnistAwgnContrast => Some(NoiseKind::AwgnReducedContrast),
        }
    }
}

impl std::str::FromStr for DatasetVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown dataset {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pipeline {
    RawDbn,
    QuadtreeDbn,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::RawDbn => "raw_dbn",
            Pipeline::QuadtreeDbn => "quadtree_dbn",
        }
    }
}

impl std::str::FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw_dbn" => Ok(Pipeline::RawDbn),
            "quadtree_dbn" => Ok(Pipeline::QuadtreeDbn),
            other => Err(Error::invalid(format!("unknown pipeline {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        }
    }

    pub fn architectures(self) -> Vec<Vec<usize>> {
        match self {
            Scale::Desk => vec![vec![100, 100], vec![200, 200]],
            Scale::Full => (1..=10).map(|k| vec![50 * k, 50 * k]).collect(),
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(Error::invalid(format!("unknown scale {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetVariant,
    pub pipeline: Pipeline,
    pub hidden_layers: Vec<usize>,
    pub tau: HomogeneityThreshold,
    pub canvas_size: usize,
    pub criterion: Criterion,
    pub awgn_sigma: f64,
    pub blur_length: usize,
    pub blur_angle: f64,
    pub contrast_scale: f64,
    /// `seed` is overwritten per run from [`ExperimentConfig::seed`].
    pub rbm: TrainConfig,
    /// `seed` is overwritten per run from [`ExperimentConfig::seed`].
    pub fine_tune: FineTuneConfig,
    /// `None` uses the whole training split.
    pub train_subsample: Option<usize>,
    pub test_subsample: Option<usize>,
    pub seed: u64,
    /// When set, timing is left out of result records so they compare
    /// byte for byte.
    pub deterministic: bool,
    pub mnist_dir: PathBuf,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetVariant::Mnist,
            pipeline: Pipeline::QuadtreeDbn,
            hidden_layers: vec![500, 500],
            tau: HomogeneityThreshold::new(DEFAULT_TAU).unwrap(),
            canvas_size: DEFAULT_CANVAS,
            criterion: Criterion::Range,
            awgn_sigma: DEFAULT_AWGN_SIGMA,
            blur_length: DEFAULT_BLUR_LENGTH,
            blur_angle: DEFAULT_BLUR_ANGLE,
            contrast_scale: DEFAULT_CONTRAST_SCALE,
            rbm: TrainConfig::default(),
            fine_tune: FineTuneConfig::default(),
            train_subsample: None,
            test_subsample: None,
            seed: 0,
            deterministic: true,
            mnist_dir: PathBuf::from("data/mnist"),
            output_dir: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

fn parse_count(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "all" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

pub fn parse_layers(value: &str) -> Result<Vec<usize>> {
    let layers = value
        .split(',')
        .map(|s| parse::<usize>("hidden_layers", s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if layers.is_empty() || layers.contains(&0) {
        return Err(Error::invalid(format!("bad hidden_layers {value:?}")));
    }
    Ok(layers)
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn count_str(v: Option<usize>) -> String {
    v.map_or_else(|| "all".to_string(), |n| n.to_string())
}

impl ExperimentConfig {
    /// Desk preset: 10k stratified training samples, full test split,
    /// 10 pretraining and 10 fine-tuning epochs with momentum 0.9.
    pub fn desk() -> Self {
        let base = Self::default();
        Self {
            hidden_layers: vec![100, 100],
            train_subsample: Some(10_000),
            rbm: TrainConfig { epochs: 10, ..base.rbm.clone() },
            // Plain SGD at this epoch budget stops well short of convergence.
            fine_tune: FineTuneConfig { epochs: 10, momentum: 0.9, ..base.fine_tune.clone() },
            ..base
        }
    }

    pub fn full() -> Self {
        Self::default()
    }

    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Full => Self::full(),
        }
    }

    pub fn noise_spec(&self, seed: u64) -> Option<NoiseSpec> {
        self.dataset.noise_kind().map(|kind| NoiseSpec {
            kind,
            awgn_sigma: self.awgn_sigma,
            blur_length: self.blur_length,
            blur_angle: self.blur_angle,
            contrast_scale: self.contrast_scale,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::invalid("hidden layers must be non-empty and >= 1"));
        }
        if !self.canvas_size.is_power_of_two() {
            return Err(Error::invalid(format!("canvas size {} is not a power of two", self.canvas_size)));
        }
        self.rbm.validate()?;
        self.fine_tune.validate()?;
        if let Some(spec) = self.noise_spec(0) {
            spec.validate()?;
        }
        Ok(())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = v.parse()?,
            "pipeline" => self.pipeline = v.parse()?,
            "hidden_layers" => self.hidden_layers = parse_layers(v)?,
            "tau" => self.tau = HomogeneityThreshold::new(parse(key, v)?)?,
            "canvas_size" => self.canvas_size = parse(key, v)?,
            "criterion" => self.criterion = v.parse()?,
            "awgn_sigma" => self.awgn_sigma = parse(key, v)?,
            "blur_length" => self.blur_length = parse(key, v)?,
            "blur_angle" => self.blur_angle = parse(key, v)?,
            "contrast_scale" => self.contrast_scale = parse(key, v)?,
            "rbm_learning_rate" => self.rbm.learning_rate = parse(key, v)?,
            "rbm_epochs" => self.rbm.epochs = parse(key, v)?,
            "rbm_batch_size" => self.rbm.batch_size = parse(key, v)?,
            "cd_steps" => self.rbm.cd_steps = parse(key, v)?,
            "rbm_initial_momentum" => self.rbm.initial_momentum = parse(key, v)?,
            "rbm_momentum" => self.rbm.momentum = parse(key, v)?,
            "rbm_momentum_switch_epoch" => self.rbm.momentum_switch_epoch = parse(key, v)?,
            "rbm_weight_decay" => self.rbm.weight_decay = parse(key, v)?,
            "ft_learning_rate" => self.fine_tune.learning_rate = parse(key, v)?,
            "ft_epochs" => self.fine_tune.epochs = parse(key, v)?,
            "ft_batch_size" => self.fine_tune.batch_size = parse(key, v)?,
            "ft_momentum" => self.fine_tune.momentum = parse(key, v)?,
            "ft_shuffle" => self.fine_tune.shuffle = parse(key, v)?,
            "train_subsample" => self.train_subsample = parse_count(key, v)?,
            "test_subsample" => self.test_subsample = parse_count(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "deterministic" => self.deterministic = parse(key, v)?,
            "mnist_dir" => self.mnist_dir = PathBuf::from(v),
            "output_dir" => self.output_dir = Some(PathBuf::from(v)),
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key=value", n + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::invalid(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Configuration as ordered `(key, value)` pairs; paths are omitted so
    /// records do not depend on where the data lives.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dataset", self.dataset.name().to_string()),
            ("pipeline", self.pipeline.name().to_string()),
            ("hidden_layers", join(&self.hidden_layers)),
            ("tau", self.tau.value().to_string()),
            ("canvas_size", self.canvas_size.to_string()),
            (
                "criterion",
                match self.criterion {
                    Criterion::Range => "range",
                    Criterion::StdDev => "stddev",
                }
                .to_string(),
            ),
            ("awgn_sigma", self.awgn_sigma.to_string()),
            ("blur_length", self.blur_length.to_string()),
            ("blur_angle", self.blur_angle.to_string()),
            ("contrast_scale", self.contrast_scale.to_string()),
            ("rbm_learning_rate", self.rbm.learning_rate.to_string()),
            ("rbm_epochs", self.rbm.epochs.to_string()),
            ("rbm_batch_size", self.rbm.batch_size.to_string()),
            ("cd_steps", self.rbm.cd_steps.to_string()),
            ("rbm_initial_momentum", self.rbm.initial_momentum.to_string()),
            ("rbm_momentum", self.rbm.momentum.to_string()),
            ("rbm_momentum_switch_epoch", self.rbm.momentum_switch_epoch.to_string()),
            ("rbm_weight_decay", self.rbm.weight_decay.to_string()),
            ("ft_learning_rate", self.fine_tune.learning_rate.to_string()),
            ("ft_epochs", self.fine_tune.epochs.to_string()),
            ("ft_batch_size", self.fine_tune.batch_size.to_string()),
            ("ft_momentum", self.fine_tune.momentum.to_string()),
            ("ft_shuffle", self.fine_tune.shuffle.to_string()),
            ("train_subsample", count_str(self.train_subsample)),
            ("test_subsample", count_str(self.test_subsample)),
            ("seed", self.seed.to_string()),
            ("deterministic", self.deterministic.to_string()),
        ]
    }
}
