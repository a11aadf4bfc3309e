//! Command-line entry point.
//!
//! Failures print one line to stderr,
//! `error stage=<stage> kind=<kind> message=<text>`, and exit with status 1.
//! Usage errors exit with status 2.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::dbn::{evaluate, pretrain, transfer_to_feedforward, DbnArchitecture, DbnModel};
use crate::error::{Error, Result};
use crate::ingest::{read_idx_dataset, write_idx_dataset_images, write_idx_features, write_idx_labels, LabeledDataset, NUM_CLASSES};
use crate::noise::{synthesize_nmnist, NoiseKind, NoiseSpec};
use crate::quadtree::{encode_dataset, QuadTree, TreeLearner};

use super::config::{ExperimentConfig, Scale};
use super::experiment::run_experiment;
use super::tables::reproduce_tables_on;

#[derive(Parser, Debug)]
#[command(
    name = "pqdbn",
    version,
    about = "Probabilistic quadtree features and deep belief networks for digit classification",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a noisy copy of an IDX image set.
    GenNoise(GenNoiseArgs),
    /// Learn a quadtree from an IDX image set and save it as PQT1.
    LearnTree(LearnTreeArgs),
    /// Encode an IDX image set with a saved quadtree.
    Encode(EncodeArgs),
    /// Pretrain and fine-tune a DBN on IDX files and save it as QDBN.
    Train(TrainArgs),
    /// Report the test error of a saved model.
    Evaluate(EvaluateArgs),
    /// Run one experiment on MNIST and print its result record.
    Run(RunArgs),
    /// Run the architecture sweep and write the comparison tables.
    Reproduce(ReproduceArgs),
}

/// Overrides for configuration keys; each flag maps to one `key=value`.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// Declarative key=value config file, applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hidden layer sizes, e.g. 100,100.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    canvas: Option<usize>,
    /// range or stddev.
    #[arg(long)]
    criterion: Option<String>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    rbm_learning_rate: Option<f64>,
    #[arg(long)]
    ft_learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    cd_steps: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    blur_length: Option<usize>,
    #[arg(long)]
    blur_angle: Option<f64>,
    #[arg(long)]
    contrast_scale: Option<f64>,
}

impl ConfigFlags {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |key: &'static str, value: Option<String>| {
            if let Some(v) = value {
                out.push((key, v));
            }
        };
        push("hidden_layers", self.hidden.clone());
        push("tau", self.tau.map(|v| v.to_string()));
        push("canvas_size", self.canvas.map(|v| v.to_string()));
        push("criterion", self.criterion.clone());
        push("rbm_epochs", self.pretrain_epochs.map(|v| v.to_string()));
        push("ft_epochs", self.finetune_epochs.map(|v| v.to_string()));
        push("rbm_learning_rate", self.rbm_learning_rate.map(|v| v.to_string()));
        push("ft_learning_rate", self.ft_learning_rate.map(|v| v.to_string()));
        push("rbm_batch_size", self.batch_size.map(|v| v.to_string()));
        push("ft_batch_size", self.batch_size.map(|v| v.to_string()));
        push("cd_steps", self.cd_steps.map(|v| v.to_string()));
        push("awgn_sigma", self.sigma.map(|v| v.to_string()));
        push("blur_length", self.blur_length.map(|v| v.to_string()));
        push("blur_angle", self.blur_angle.map(|v| v.to_string()));
        push("contrast_scale", self.contrast_scale.map(|v| v.to_string()));
        out
    }

    fn build(&self, mut base: ExperimentConfig, extra: &[(&'static str, String)]) -> Result<ExperimentConfig> {
        if let Some(path) = &self.config {
            base.apply_file(path)?;
        }
        for (k, v) in self.overrides().iter().chain(extra) {
            base.set(k, v)?;
        }
        base.validate()?;
        Ok(base)
    }
}

#[derive(Args, Debug)]
struct GenNoiseArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out_images: PathBuf,
    #[arg(long)]
    out_labels: PathBuf,
    /// awgn, motion_blur or awgn_reduced_contrast.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct LearnTreeArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Output feature matrix (IDX, doubles).
    #[arg(long)]
    out: PathBuf,
    /// Optional copy of the labels next to the features.
    #[arg(long)]
    out_labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train_images: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    /// Encode inputs with this quadtree first.
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    tree: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    pipeline: Option<String>,
    /// Start from the desk or full preset.
    #[arg(long, default_value = "desk")]
    scale: String,
    #[arg(long)]
    train_subsample: Option<String>,
    #[arg(long)]
    test_subsample: Option<String>,
    /// Directory for model.qdbn, tree.pqt and result.txt.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    #[arg(long, default_value = "desk")]
    scale: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// Table output file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    train_subsample: Option<String>,
    #[arg(long)]
    test_subsample: Option<String>,
    #[command(flatten)]
    flags: ConfigFlags,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit status.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

/// One-line machine-readable rendering of an error.
pub fn error_line(e: &Error) -> String {
    let message = e.to_string().replace(['\n', '\r'], " ");
    format!("error stage={} kind={} message={message}", e.stage().unwrap_or("cli"), e.kind())
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        staged @ Error::Stage { .. } => staged,
        other => other.in_stage(name),
    })
}

fn load_images(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    stage("load", read_idx_dataset(images, labels))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenNoise(args) => {
            let config = stage("config", args.flags.build(ExperimentConfig::default(), &[]))?;
            let kind: NoiseKind = stage("config", args.kind.parse())?;
            let spec = NoiseSpec {
                kind,
                awgn_sigma: config.awgn_sigma,
                blur_length: config.blur_length,
                blur_angle: config.blur_angle,
                contrast_scale: config.contrast_scale,
                seed: args.seed,
            };
            let data = load_images(&args.images, &args.labels)?;
            let noisy = stage("noise", synthesize_nmnist(&data, &spec))?;
            stage("write", write_idx_dataset_images(&noisy, &args.out_images))?;
            stage("write", write_idx_labels(noisy.labels(), &args.out_labels))?;
            println!("samples={}", noisy.len());
        }
        Command::LearnTree(args) => {
            let config = stage("config", args.flags.build(ExperimentConfig::default(), &[]))?;
            let data = load_images(&args.images, &args.labels)?;
            let tree = stage(
                "learn_tree",
                TreeLearner::new(config.tau, config.canvas_size)
                    .criterion(config.criterion)
                    .learn_dataset(&data),
            )?;
            stage("write", tree.save(&args.out))?;
            println!("leaf_count={}", tree.leaf_count());
        }
        Command::Encode(args) => {
            let tree = stage("load", QuadTree::load(&args.tree))?;
            let data = load_images(&args.images, &args.labels)?;
            let encoded = stage("encode", encode_dataset(&tree, &data))?;
            stage("write", write_idx_features(encoded.features(), &args.out))?;
            if let Some(path) = &args.out_labels {
                stage("write", write_idx_labels(encoded.labels(), path))?;
            }
            println!("samples={} dim={}", encoded.len(), encoded.dim());
        }
        Command::Train(args) => {
            let config = stage(
                "config",
                args.flags.build(ExperimentConfig::default(), &[("seed", args.seed.to_string())]),
            )?;
            let mut data = load_images(&args.train_images, &args.train_labels)?;
            if let Some(path) = &args.tree {
                let tree = stage("load", QuadTree::load(path))?;
                data = stage("encode", encode_dataset(&tree, &data))?;
            }
            let arch = stage(
                "build",
                DbnArchitecture::new(data.dim(), config.hidden_layers.clone(), NUM_CLASSES),
            )?;
            let mut rbm = config.rbm.clone();
            rbm.seed = config.seed;
            let (model, report) = stage("pretrain", pretrain(data.features().view(), &arch, &rbm))?;
            let mut net = transfer_to_feedforward(model);
            let mut ft = config.fine_tune.clone();
            ft.seed = config.seed;
            let losses = stage("fine_tune", net.fine_tune(&data, &ft))?;
            stage("write", net.model().save(&args.out))?;
            println!("input_dim={}", data.dim());
            for (k, errs) in report.layer_errors.iter().enumerate() {
                println!("pretrain_layer{k}_errors={}", join(errs));
            }
            println!("finetune_losses={}", join(&losses));
        }
        Command::Evaluate(args) => {
            let model = stage("load", DbnModel::load(&args.model))?;
            let mut data = load_images(&args.images, &args.labels)?;
            if let Some(path) = &args.tree {
                let tree = stage("load", QuadTree::load(path))?;
                data = stage("encode", encode_dataset(&tree, &data))?;
            }
            let net = transfer_to_feedforward(model);
            let err = stage("evaluate", evaluate(&net, &data))?;
            println!("test_error_percent={err}");
        }
        Command::Run(args) => {
            let scale: Scale = stage("config", args.scale.parse())?;
            let mut extra = vec![("seed", args.seed.to_string())];
            let optional = [
                ("mnist_dir", args.mnist_dir.map(|p| p.display().to_string())),
                ("dataset", args.dataset),
                ("pipeline", args.pipeline),
                ("train_subsample", args.train_subsample),
                ("test_subsample", args.test_subsample),
                ("output_dir", args.out_dir.map(|p| p.display().to_string())),
            ];
            extra.extend(optional.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
            let config = stage("config", args.flags.build(ExperimentConfig::preset(scale), &extra))?;
            let result = run_experiment(&config)?;
            print!("{}", result.to_record());
        }
        Command::Reproduce(args) => {
            let scale: Scale = stage("config", args.scale.parse())?;
            let mut extra = vec![("seed", args.seed.to_string())];
            let optional = [
                ("mnist_dir", args.mnist_dir.map(|p| p.display().to_string())),
                ("train_subsample", args.train_subsample),
                ("test_subsample", args.test_subsample),
            ];
            extra.extend(optional.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
            let base = stage("config", args.flags.build(ExperimentConfig::preset(scale), &extra))?;
            let (train, test) = stage("load", crate::ingest::load_mnist(&base.mnist_dir))?;
            let report = reproduce_tables_on(scale, &base, &train, &test, |c, cell| {
                let arch = c.hidden_layers.iter().map(usize::to_string).collect::<Vec<_>>().join("-");
                eprintln!("{} {} {} {:?}", c.dataset.name(), c.pipeline.name(), arch, cell);
            });
            let text = report.render();
            stage(
                "write",
                std::fs::write(&args.out, &text).map_err(|e| Error::io(&args.out, e)),
            )?;
            print!("{text}");
        }
    }
    Ok(())
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}
