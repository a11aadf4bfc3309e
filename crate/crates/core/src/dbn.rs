//! Deep belief networks: greedy layer-wise RBM pretraining followed by
//! supervised fine-tuning of the equivalent sigmoid feedforward network.
//!
//! # File format
//!
//! `QDBN` magic, version byte (1), layer count as little-endian u32, one
//! `QRBM` block per layer, then the output layer as rows and cols
//! (little-endian u32), the weights (row-major) and the bias as
//! little-endian f64.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::codec::{len_u32, put_f64s_le, put_u32_le, read_file, write_file, ByteReader};
use crate::error::{ensure_dim, Error, Result};
use crate::ingest::LabeledDataset;
use crate::rbm::{hidden_probs_batch, train_rbm, RbmParameters, TrainConfig, INIT_WEIGHT_STDDEV};
use crate::rng::{purpose_stream, Purpose};

pub const DBN_MAGIC: &[u8; 4] = b"QDBN";
pub const DBN_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbnArchitecture {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub num_classes: usize,
}

impl DbnArchitecture {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, num_classes: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_layers,
            num_classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.is_empty() {
            return Err(Error::invalid("architecture needs at least one hidden layer"));
        }
        if self.input_dim == 0 || self.num_classes == 0 || self.hidden_layers.contains(&0) {
            return Err(Error::invalid(format!("all layer sizes must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `[input, hidden..., classes]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim];
        sizes.extend(&self.hidden_layers);
        sizes.push(self.num_classes);
        sizes
    }
}

/// Stacked RBMs plus a softmax output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DbnModel {
    rbm_layers: Vec<RbmParameters>,
    output_weights: Array2<f64>,
    output_bias: Array1<f64>,
}

impl DbnModel {
    pub fn new(rbm_layers: Vec<RbmParameters>, output_weights: Array2<f64>, output_bias: Array1<f64>) -> Result<Self> {
        if rbm_layers.is_empty() {
            return Err(Error::invalid("model needs at least one RBM layer"));
        }
        for pair in rbm_layers.windows(2) {
            ensure_dim("layer chain", pair[0].n_hidden(), pair[1].n_visible())?;
        }
        ensure_dim("output layer rows", rbm_layers.last().unwrap().n_hidden(), output_weights.nrows())?;
        ensure_dim("output bias length", output_weights.ncols(), output_bias.len())?;
        if output_weights.ncols() == 0 {
            return Err(Error::invalid("output layer needs at least one class"));
        }
        let model = Self {
            rbm_layers,
            output_weights,
            output_bias,
        };
        model.check_finite("DBN output layer")?;
        Ok(model)
    }

    pub fn rbm_layers(&self) -> &[RbmParameters] {
        &self.rbm_layers
    }

    pub fn output_weights(&self) -> &Array2<f64> {
        &self.output_weights
    }

    pub fn output_bias(&self) -> &Array1<f64> {
        &self.output_bias
    }

    /// Mutable access to the output layer `(weights, bias)`.
    pub fn output_mut(&mut self) -> (&mut Array2<f64>, &mut Array1<f64>) {
        (&mut self.output_weights, &mut self.output_bias)
    }

    /// Mutable access to layer `k` as `(weights, visible_bias, hidden_bias)`.
    pub fn layer_mut(&mut self, k: usize) -> (&mut Array2<f64>, &mut Array1<f64>, &mut Array1<f64>) {
        self.rbm_layers[k].parts_mut()
    }

    pub fn architecture(&self) -> DbnArchitecture {
        DbnArchitecture {
            input_dim: self.rbm_layers[0].n_visible(),
            hidden_layers: self.rbm_layers.iter().map(|l| l.n_hidden()).collect(),
            num_classes: self.output_weights.ncols(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.rbm_layers[0].n_visible()
    }

    pub fn num_classes(&self) -> usize {
        self.output_weights.ncols()
    }

    fn check_finite(&self, context: &str) -> Result<()> {
        let out_ok = self.output_weights.iter().chain(&self.output_bias).all(|v| v.is_finite());
        if out_ok && self.rbm_layers.iter().all(|l| l.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(DBN_MAGIC);
        out.push(DBN_VERSION);
        put_u32_le(&mut out, len_u32("layer count", self.rbm_layers.len())?);
        for layer in &self.rbm_layers {
            layer.write_to(&mut out)?;
        }
        put_u32_le(&mut out, len_u32("output rows", self.output_weights.nrows())?);
        put_u32_le(&mut out, len_u32("output cols", self.output_weights.ncols())?);
        put_f64s_le(&mut out, self.output_weights.iter().copied());
        put_f64s_le(&mut out, self.output_bias.iter().copied());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(DBN_MAGIC)?;
        let version = r.u8()?;
        if version != DBN_VERSION {
            return Err(Error::Format(format!("unsupported QDBN version {version}")));
        }
        let count = r.u32_le()? as usize;
        let layers = (0..count)
            .map(|_| RbmParameters::read_from(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let rows = r.u32_le()? as usize;
        let cols = r.u32_le()? as usize;
        let w = r.f64s_le(rows.checked_mul(cols).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let b = r.f64s_le(cols)?;
        r.finish()?;
        let weights = Array2::from_shape_vec((rows, cols), w).expect("length checked");
        Self::new(layers, weights, Array1::from(b)).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

/// Per-layer, per-epoch reconstruction errors from pretraining.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainReport {
    pub layer_errors: Vec<Vec<f64>>,
}

/// Greedy layer-wise pretraining; the output layer is initialised but not
/// trained.
pub fn pretrain(
    data: ArrayView2<'_, f64>,
    arch: &DbnArchitecture,
    config: &TrainConfig,
) -> Result<(DbnModel, PretrainReport)> {
    pretrain_observed(data, arch, config, |_, _| {})
}

/// As [`pretrain`], calling `observe(layer, inputs)` with the training input
/// of each layer before it is trained.
pub fn pretrain_observed(
    data: ArrayView2<'_, f64>,
    arch: &DbnArchitecture,
    config: &TrainConfig,
    mut observe: impl FnMut(usize, ArrayView2<'_, f64>),
) -> Result<(DbnModel, PretrainReport)> {
    arch.validate()?;
    config.validate()?;
    ensure_dim("input dimension", arch.input_dim, data.ncols())?;
    let mut layers = Vec::with_capacity(arch.hidden_layers.len());
    let mut report = PretrainReport::default();
    let mut inputs: Option<Array2<f64>> = None;
    for (k, &n_hidden) in arch.hidden_layers.iter().enumerate() {
        let view = inputs.as_ref().map_or(data, |a| a.view());
        observe(k, view);
        let (params, errors) = train_rbm(view, n_hidden, config, k as u32)?;
        let next = hidden_probs_batch(&params, view)?;
        layers.push(params);
        report.layer_errors.push(errors);
        inputs = Some(next);
    }
    let (weights, bias) = init_output(arch, config.seed)?;
    Ok((DbnModel::new(layers, weights, bias)?, report))
}

fn init_output(arch: &DbnArchitecture, seed: u64) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut rng = purpose_stream(seed, Purpose::OutputInit, 0);
    let normal = Normal::new(0.0, INIT_WEIGHT_STDDEV).map_err(|e| Error::invalid(e.to_string()))?;
    let last = *arch.hidden_layers.last().unwrap();
    let weights = Array2::from_shape_simple_fn((last, arch.num_classes), || normal.sample(&mut rng));
    Ok((weights, Array1::zeros(arch.num_classes)))
}

/// A DBN viewed as a feedforward classifier.
///
/// Layer `k` computes `sigmoid(b_k + W_k^T x)` with the RBM's hidden-direction
/// weights, followed by a softmax output layer. Before fine-tuning the hidden
/// activations are exactly the stacked RBM mean-field probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    model: DbnModel,
}

pub fn transfer_to_feedforward(model: DbnModel) -> FeedForwardNet {
    FeedForwardNet { model }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// Hidden layer outputs, first layer first.
    pub hidden: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
    pub probabilities: Array2<f64>,
}

/// Gradients of the mean cross-entropy, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `(weights, hidden_bias)` per RBM layer.
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    /// Reshuffle the training rows every epoch with the seeded stream.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 100,
            momentum: 0.0,
            shuffle: true,
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    probs
}

fn log_softmax_at(row: ndarray::ArrayView1<'_, f64>, class: usize) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[class] - lse
}

/// First index of the maximum.
fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl FeedForwardNet {
    pub fn model(&self) -> &DbnModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut DbnModel {
        &mut self.model
    }

    pub fn into_model(self) -> DbnModel {
        self.model
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Activations> {
        ensure_dim("input dimension", self.model.input_dim(), x.ncols())?;
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(self.model.rbm_layers.len());
        for layer in &self.model.rbm_layers {
            let input = hidden.last().map_or(x, |h| h.view());
            let out = hidden_probs_batch(layer, input)?;
            hidden.push(out);
        }
        let mut logits = hidden.last().unwrap().dot(&self.model.output_weights);
        logits += &self.model.output_bias;
        let probabilities = softmax_rows(&logits);
        Ok(Activations {
            hidden,
            logits,
            probabilities,
        })
    }

    pub fn class_probabilities(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.probabilities)
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        let x = ndarray::ArrayView1::from(features).insert_axis(Axis(0));
        Ok(self.predict_batch(x)?[0])
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let act = self.forward(x)?;
        Ok(act.logits.rows().into_iter().map(argmax).collect())
    }

    fn check_labels(&self, labels: &[u8]) -> Result<()> {
        let classes = self.model.num_classes();
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::invalid(format!("label {l} outside 0..{classes}")));
        }
        Ok(())
    }

    /// Mean cross-entropy of `labels` under the softmax outputs.
    pub fn loss(&self, x: ArrayView2<'_, f64>, labels: &[u8]) -> Result<f64> {
        ensure_dim("label count", x.nrows(), labels.len())?;
        self.check_labels(labels)?;
        let act = self.forward(x)?;
        Ok(Self::cross_entropy(&act.logits, labels))
    }

    fn cross_entropy(logits: &Array2<f64>, labels: &[u8]) -> f64 {
        let total: f64 = logits
            .rows()
            .into_iter()
            .zip(labels)
            .map(|(row, &l)| -log_softmax_at(row, l as usize))
            .sum();
        total / labels.len() as f64
    }

    /// Loss and backpropagated gradients for one batch.
    pub fn gradients(&self, x: ArrayView2<'_, f64>, labels: &[u8]) -> Result<(f64, Gradients)> {
        ensure_dim("label count", x.nrows(), labels.len())?;
        if labels.is_empty() {
            return Err(Error::Empty("batch"));
        }
        self.check_labels(labels)?;
        let act = self.forward(x)?;
        let loss = Self::cross_entropy(&act.logits, labels);

        let scale = 1.0 / labels.len() as f64;
        let mut delta = act.probabilities.clone();
        for (mut row, &l) in delta.rows_mut().into_iter().zip(labels) {
            row[l as usize] -= 1.0;
        }
        delta *= scale;

        let last = act.hidden.last().unwrap();
        let output_weights = last.t().dot(&delta);
        let output_bias = delta.sum_axis(Axis(0));
        let mut delta = delta.dot(&self.model.output_weights.t());

        let n = self.model.rbm_layers.len();
        let mut layers = Vec::with_capacity(n);
        for k in (0..n).rev() {
            let out = &act.hidden[k];
            Zip::from(&mut delta).and(out).for_each(|d, &a| *d *= a * (1.0 - a));
            let input = if k == 0 { x } else { act.hidden[k - 1].view() };
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if k > 0 {
                delta = delta.dot(&self.model.rbm_layers[k].weights().t());
            }
            layers.push((gw, gb));
        }
        layers.reverse();
        Ok((
            loss,
            Gradients {
                layers,
                output_weights,
                output_bias,
            },
        ))
    }

    /// Mini-batch SGD on the cross-entropy; returns the mean training loss
    /// of every epoch.
    pub fn fine_tune(&mut self, dataset: &LabeledDataset, config: &FineTuneConfig) -> Result<Vec<f64>> {
        config.validate()?;
        ensure_dim("input dimension", self.model.input_dim(), dataset.dim())?;
        self.check_labels(dataset.labels())?;
        if dataset.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let mut velocity: Option<Gradients> = None;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut rng = purpose_stream(config.seed, Purpose::FineTuneShuffle, 0);
        let mut history = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            if config.shuffle {
                order.shuffle(&mut rng);
            }
            let mut total = 0.0;
            for chunk in order.chunks(config.batch_size) {
                let x = dataset.features().select(Axis(0), chunk);
                let labels: Vec<u8> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
                let (loss, grads) = self.gradients(x.view(), &labels)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("fine-tuning loss at epoch {epoch}"),
                    });
                }
                total += loss * chunk.len() as f64;
                if config.momentum > 0.0 {
                    let step = match velocity.as_mut() {
                        Some(v) => {
                            accumulate(v, &grads, config.momentum);
                            v
                        }
                        None => velocity.insert(grads),
                    };
                    self.apply(step, config.learning_rate);
                } else {
                    self.apply(&grads, config.learning_rate);
                }
            }
            let mean = total / dataset.len() as f64;
            if !mean.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("fine-tuning loss at epoch {epoch}"),
                });
            }
            self.model.check_finite(&format!("DBN parameters after epoch {epoch}"))?;
            history.push(mean);
        }
        Ok(history)
    }

    fn apply(&mut self, grads: &Gradients, lr: f64) {
        if lr == 0.0 {
            return;
        }
        for (layer, (gw, gb)) in self.model.rbm_layers.iter_mut().zip(&grads.layers) {
            let (w, _, b) = layer.parts_mut();
            w.scaled_add(-lr, gw);
            b.scaled_add(-lr, gb);
        }
        self.model.output_weights.scaled_add(-lr, &grads.output_weights);
        self.model.output_bias.scaled_add(-lr, &grads.output_bias);
    }
}

fn accumulate(velocity: &mut Gradients, grads: &Gradients, momentum: f64) {
    for ((vw, vb), (gw, gb)) in velocity.layers.iter_mut().zip(&grads.layers) {
        *vw *= momentum;
        *vw += gw;
        *vb *= momentum;
        *vb += gb;
    }
    velocity.output_weights *= momentum;
    velocity.output_weights += &grads.output_weights;
    velocity.output_bias *= momentum;
    velocity.output_bias += &grads.output_bias;
}

pub fn fine_tune(net: &mut FeedForwardNet, dataset: &LabeledDataset, config: &FineTuneConfig) -> Result<Vec<f64>> {
    net.fine_tune(dataset, config)
}

/// Misclassification rate in percent.
pub fn evaluate(net: &FeedForwardNet, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let predictions = net.predict_batch(test.features().view())?;
    Ok(error_percent(&predictions, test.labels()))
}

pub fn error_percent(predictions: &[usize], labels: &[u8]) -> f64 {
    let wrong = predictions.iter().zip(labels).filter(|(&p, &l)| p != l as usize).count();
    100.0 * wrong as f64 / labels.len() as f64
}
