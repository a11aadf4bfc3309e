//! One end-to-end run: data preparation, optional quadtree encoding, DBN
//! pretraining, fine-tuning and evaluation.

use std::fmt::Write as _;
use std::time::Instant;

use crate::dbn::{evaluate, pretrain, transfer_to_feedforward, DbnArchitecture, FeedForwardNet};
use crate::error::{Error, Result};
use crate::ingest::{load_mnist, subsample, LabeledDataset, NUM_CLASSES};
use crate::noise::synthesize_nmnist;
use crate::quadtree::{encode_dataset, QuadTree, TreeLearner};
use crate::rng::derive_seed;

use super::config::{ExperimentConfig, Pipeline};

// Salts for the per-stage seeds derived from the experiment seed.
const SALT_SUBSAMPLE_TRAIN: u64 = 1;
const SALT_SUBSAMPLE_TEST: u64 = 2;
const SALT_NOISE_TRAIN: u64 = 3;
const SALT_NOISE_TEST: u64 = 4;
const SALT_PRETRAIN: u64 = 5;
const SALT_FINE_TUNE: u64 = 6;

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub train_samples: usize,
    pub test_samples: usize,
    pub input_dim: usize,
    /// Quadtree pipeline only.
    pub leaf_count: Option<usize>,
    pub pretrain_errors: Vec<Vec<f64>>,
    pub finetune_losses: Vec<f64>,
    pub test_error_percent: f64,
    pub wall_time_seconds: f64,
    pub model: FeedForwardNet,
    pub tree: Option<QuadTree>,
}

fn floats(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentResult {
    /// `key=value` record. Timing is included only for non-deterministic
    /// configs.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.config.to_pairs() {
            let _ = writeln!(out, "{k}={v}");
        }
        let _ = writeln!(out, "train_samples={}", self.train_samples);
        let _ = writeln!(out, "test_samples={}", self.test_samples);
        let _ = writeln!(out, "input_dim={}", self.input_dim);
        if let Some(n) = self.leaf_count {
            let _ = writeln!(out, "leaf_count={n}");
        }
        for (k, errors) in self.pretrain_errors.iter().enumerate() {
            let _ = writeln!(out, "pretrain_layer{k}_errors={}", floats(errors));
        }
        let _ = writeln!(out, "finetune_losses={}", floats(&self.finetune_losses));
        let _ = writeln!(out, "test_error_percent={}", self.test_error_percent);
        if !self.config.deterministic {
            let _ = writeln!(out, "wall_time_seconds={}", self.wall_time_seconds);
        }
        out
    }
}

/// Loads MNIST from `config.mnist_dir` and runs the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let (train, test) = load_mnist(&config.mnist_dir).map_err(|e| e.in_stage("load"))?;
    run_experiment_on(config, &train, &test)
}

/// Training and test splits after subsampling and noise synthesis.
pub fn prepare_splits(
    config: &ExperimentConfig,
    clean_train: &LabeledDataset,
    clean_test: &LabeledDataset,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let pick = |data: &LabeledDataset, n: Option<usize>, salt| match n {
        Some(n) if n < data.len() => subsample(data, n, derive_seed(config.seed, salt)),
        Some(n) if n > data.len() => Err(Error::invalid(format!("cannot subsample {n} rows from {}", data.len()))),
        _ => Ok(data.clone()),
    };
    let train = pick(clean_train, config.train_subsample, SALT_SUBSAMPLE_TRAIN).map_err(|e| e.in_stage("subsample"))?;
    let test = pick(clean_test, config.test_subsample, SALT_SUBSAMPLE_TEST).map_err(|e| e.in_stage("subsample"))?;
    let noisy = |data: LabeledDataset, salt| match config.noise_spec(derive_seed(config.seed, salt)) {
        Some(spec) => synthesize_nmnist(&data, &spec).map_err(|e| e.in_stage("noise")),
        None => Ok(data),
    };
    Ok((noisy(train, SALT_NOISE_TRAIN)?, noisy(test, SALT_NOISE_TEST)?))
}

/// Runs the experiment on already loaded clean splits.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    clean_train: &LabeledDataset,
    clean_test: &LabeledDataset,
) -> Result<ExperimentResult> {
    let started = Instant::now();
    config.validate().map_err(|e| e.in_stage("config"))?;
    let (train, test) = prepare_splits(config, clean_train, clean_test)?;

    let (train, test, tree) = match config.pipeline {
        Pipeline::RawDbn => (train, test, None),
        Pipeline::QuadtreeDbn => {
            let learner = TreeLearner::new(config.tau, config.canvas_size).criterion(config.criterion);
            let tree = learner.learn_dataset(&train).map_err(|e| e.in_stage("learn_tree"))?;
            let enc_train = encode_dataset(&tree, &train).map_err(|e| e.in_stage("encode"))?;
            let enc_test = encode_dataset(&tree, &test).map_err(|e| e.in_stage("encode"))?;
            (enc_train, enc_test, Some(tree))
        }
    };

    let expected_dim = match (&tree, train.image_shape()) {
        (Some(t), _) => t.leaf_count(),
        (None, Some((h, w))) => h * w,
        (None, None) => train.dim(),
    };
    let arch = DbnArchitecture::new(expected_dim, config.hidden_layers.clone(), NUM_CLASSES)
        .map_err(|e| e.in_stage("build"))?;

    let mut rbm = config.rbm.clone();
    rbm.seed = derive_seed(config.seed, SALT_PRETRAIN);
    let (model, report) = pretrain(train.features().view(), &arch, &rbm).map_err(|e| e.in_stage("pretrain"))?;
    if model.input_dim() != expected_dim {
        return Err(Error::DimensionMismatch {
            what: "DBN input dimension",
            expected: expected_dim,
            actual: model.input_dim(),
        }
        .in_stage("build"));
    }

    let mut net = transfer_to_feedforward(model);
    let mut ft = config.fine_tune.clone();
    ft.seed = derive_seed(config.seed, SALT_FINE_TUNE);
    let losses = net.fine_tune(&train, &ft).map_err(|e| e.in_stage("fine_tune"))?;
    let test_error = evaluate(&net, &test).map_err(|e| e.in_stage("evaluate"))?;

    let result = ExperimentResult {
        config: config.clone(),
        train_samples: train.len(),
        test_samples: test.len(),
        input_dim: expected_dim,
        leaf_count: tree.as_ref().map(QuadTree::leaf_count),
        pretrain_errors: report.layer_errors,
        finetune_losses: losses,
        test_error_percent: test_error,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        model: net,
        tree,
    };
    if let Some(dir) = &config.output_dir {
        write_outputs(&result, dir).map_err(|e| e.in_stage("write"))?;
    }
    Ok(result)
}

fn write_outputs(result: &ExperimentResult, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    result.model.model().save(dir.join("model.qdbn"))?;
    if let Some(tree) = &result.tree {
        tree.save(dir.join("tree.pqt"))?;
    }
    let path = dir.join("result.txt");
    std::fs::write(&path, result.to_record()).map_err(|e| Error::io(path, e))
}
