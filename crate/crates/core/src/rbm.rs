//! Bernoulli-Bernoulli restricted Boltzmann machines.
//!
//! Energy `E(v, h) = -a.v - b.h - v^T W h` with `W` stored as an `m x n`
//! matrix (visible rows, hidden columns). Conditionals factorise:
//! `P(h_j = 1 | v) = sigmoid(b_j + sum_i w_ij v_i)` and
//! `P(v_i = 1 | h) = sigmoid(a_i + sum_j w_ij h_j)`.
//!
//! Training uses CD-k. Data rows in `[0, 1]` are taken as visible
//! probabilities. Hidden states between Gibbs steps are sampled; the visible
//! reconstruction and the final hidden statistics use probabilities.
//!
//! # File format
//!
//! `QRBM` magic, version byte (1), `m` and `n` as little-endian u32, then
//! `a`, `b` and `W` (row-major) as little-endian f64.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::{len_u32, put_f64s_le, put_u32_le, read_file, write_file, ByteReader};
use crate::error::{ensure_dim, Error, Result};
use crate::rng::{purpose_stream, ChaCha8Rng, Purpose};

pub const RBM_MAGIC: &[u8; 4] = b"QRBM";
pub const RBM_VERSION: u8 = 1;
pub const INIT_WEIGHT_STDDEV: f64 = 0.01;
/// Largest `m + n` accepted by the enumeration routines.
pub const MAX_ENUMERATION_UNITS: usize = 24;

/// Logistic function, split on sign so that `exp` never overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParameters {
    weights: Array2<f64>,
    visible_bias: Array1<f64>,
    hidden_bias: Array1<f64>,
}

impl RbmParameters {
    pub fn new(weights: Array2<f64>, visible_bias: Array1<f64>, hidden_bias: Array1<f64>) -> Result<Self> {
        ensure_dim("visible bias length", weights.nrows(), visible_bias.len())?;
        ensure_dim("hidden bias length", weights.ncols(), hidden_bias.len())?;
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::invalid("RBM layers must have at least one unit"));
        }
        let params = Self {
            weights,
            visible_bias,
            hidden_bias,
        };
        params.check_finite("RBM parameters")?;
        Ok(params)
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Result<Self> {
        Self::new(
            Array2::zeros((n_visible, n_hidden)),
            Array1::zeros(n_visible),
            Array1::zeros(n_hidden),
        )
    }

    /// Gaussian weights (stddev 0.01), zero biases.
    pub fn random(n_visible: usize, n_hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::gaussian(n_visible, n_hidden, INIT_WEIGHT_STDDEV, rng)
    }

    pub fn gaussian(n_visible: usize, n_hidden: usize, stddev: f64, rng: &mut impl Rng) -> Result<Self> {
        let normal = Normal::new(0.0, stddev).map_err(|e| Error::invalid(e.to_string()))?;
        let weights = Array2::from_shape_simple_fn((n_visible, n_hidden), || normal.sample(rng));
        Self::new(weights, Array1::zeros(n_visible), Array1::zeros(n_hidden))
    }

    pub fn n_visible(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn visible_bias(&self) -> &Array1<f64> {
        &self.visible_bias
    }

    pub fn hidden_bias(&self) -> &Array1<f64> {
        &self.hidden_bias
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Array2<f64>, &mut Array1<f64>, &mut Array1<f64>) {
        (&mut self.weights, &mut self.visible_bias, &mut self.hidden_bias)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.visible_bias).chain(&self.hidden_bias).all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    pub fn write_to(&self, out: &mut Vec<u8>) -> Result<()> {
        out.extend_from_slice(RBM_MAGIC);
        out.push(RBM_VERSION);
        put_u32_le(out, len_u32("visible units", self.n_visible())?);
        put_u32_le(out, len_u32("hidden units", self.n_hidden())?);
        put_f64s_le(out, self.visible_bias.iter().copied());
        put_f64s_le(out, self.hidden_bias.iter().copied());
        put_f64s_le(out, self.weights.iter().copied());
        Ok(())
    }

    pub fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(RBM_MAGIC)?;
        let version = r.u8()?;
        if version != RBM_VERSION {
            return Err(Error::Format(format!("unsupported QRBM version {version}")));
        }
        let m = r.u32_le()? as usize;
        let n = r.u32_le()? as usize;
        let a = r.f64s_le(m)?;
        let b = r.f64s_le(n)?;
        let w = r.f64s_le(m.checked_mul(n).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let weights = Array2::from_shape_vec((m, n), w).expect("length checked");
        Self::new(weights, Array1::from(a), Array1::from(b)).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let params = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

/// `E(v, h)` for one joint configuration.
pub fn energy(params: &RbmParameters, v: &[f64], h: &[f64]) -> Result<f64> {
    ensure_dim("visible vector", params.n_visible(), v.len())?;
    ensure_dim("hidden vector", params.n_hidden(), h.len())?;
    let v = ArrayView1::from(v);
    let h = ArrayView1::from(h);
    let interaction = v.dot(&params.weights.dot(&h));
    Ok(-params.visible_bias.dot(&v) - params.hidden_bias.dot(&h) - interaction)
}

pub fn hidden_probs(params: &RbmParameters, v: &[f64]) -> Result<Array1<f64>> {
    ensure_dim("visible vector", params.n_visible(), v.len())?;
    let v = ArrayView1::from(v).insert_axis(Axis(0));
    Ok(hidden_probs_batch(params, v)?.row(0).to_owned())
}

pub fn visible_probs(params: &RbmParameters, h: &[f64]) -> Result<Array1<f64>> {
    ensure_dim("hidden vector", params.n_hidden(), h.len())?;
    let h = ArrayView1::from(h).insert_axis(Axis(0));
    Ok(visible_probs_batch(params, h)?.row(0).to_owned())
}

/// Row-wise `P(h = 1 | v)` for a batch of visible vectors.
pub fn hidden_probs_batch(params: &RbmParameters, v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    ensure_dim("visible vector", params.n_visible(), v.ncols())?;
    let mut act = v.dot(&params.weights);
    act += &params.hidden_bias;
    act.mapv_inplace(sigmoid);
    Ok(act)
}

/// Row-wise `P(v = 1 | h)` for a batch of hidden vectors.
pub fn visible_probs_batch(params: &RbmParameters, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    ensure_dim("hidden vector", params.n_hidden(), h.ncols())?;
    let mut act = h.dot(&params.weights.t());
    act += &params.visible_bias;
    act.mapv_inplace(sigmoid);
    Ok(act)
}

/// Independent Bernoulli draws, returned as 0.0 / 1.0.
pub fn sample_bernoulli(probs: &[f64], rng: &mut impl Rng) -> Result<Array1<f64>> {
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(probs.iter().map(|&p| draw(p, rng)).collect())
}

#[inline]
fn draw(p: f64, rng: &mut impl Rng) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

fn sample_matrix(probs: &Array2<f64>, rng: &mut impl Rng) -> Array2<f64> {
    probs.mapv(|p| draw(p, rng))
}

/// Hyperparameters for CD training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub cd_steps: usize,
    /// Momentum for epochs before `momentum_switch_epoch`.
    pub initial_momentum: f64,
    pub momentum: f64,
    pub momentum_switch_epoch: usize,
    /// L2 penalty on weights only.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 100,
            cd_steps: 1,
            initial_momentum: 0.5,
            momentum: 0.9,
            momentum_switch_epoch: 5,
            weight_decay: 2e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if self.cd_steps == 0 {
            return Err(Error::invalid("cd_steps must be >= 1"));
        }
        for m in [self.initial_momentum, self.momentum] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::invalid(format!("momentum {m} outside [0, 1)")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        Ok(())
    }

    pub fn momentum_at(&self, epoch: usize) -> f64 {
        if epoch < self.momentum_switch_epoch {
            self.initial_momentum
        } else {
            self.momentum
        }
    }
}

/// CD-k estimate of the log-likelihood gradient, averaged over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGradient {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    /// Mean squared difference between the batch and its reconstruction.
    pub reconstruction_error: f64,
}

impl RbmGradient {
    fn zeros(m: usize, n: usize) -> Self {
        Self {
            weights: Array2::zeros((m, n)),
            visible_bias: Array1::zeros(m),
            hidden_bias: Array1::zeros(n),
            reconstruction_error: 0.0,
        }
    }
}

pub fn cd_gradient(
    params: &RbmParameters,
    batch: ArrayView2<'_, f64>,
    cd_steps: usize,
    rng: &mut impl Rng,
) -> Result<RbmGradient> {
    if batch.nrows() == 0 {
        return Err(Error::Empty("training batch"));
    }
    if cd_steps == 0 {
        return Err(Error::invalid("cd_steps must be >= 1"));
    }
    let scale = 1.0 / batch.nrows() as f64;
    let h_data = hidden_probs_batch(params, batch)?;
    let mut h_state = sample_matrix(&h_data, rng);
    let mut v_model = visible_probs_batch(params, h_state.view())?;
    let mut h_model = hidden_probs_batch(params, v_model.view())?;
    for _ in 1..cd_steps {
        h_state = sample_matrix(&h_model, rng);
        v_model = visible_probs_batch(params, h_state.view())?;
        h_model = hidden_probs_batch(params, v_model.view())?;
    }

    let mut weights = batch.t().dot(&h_data);
    weights -= &v_model.t().dot(&h_model);
    weights *= scale;
    let visible_bias = (&batch - &v_model).sum_axis(Axis(0)) * scale;
    let hidden_bias = (&h_data - &h_model).sum_axis(Axis(0)) * scale;
    let reconstruction_error = Zip::from(&batch)
        .and(&v_model)
        .fold(0.0, |acc, &x, &r| acc + (x - r) * (x - r))
        / batch.len() as f64;
    Ok(RbmGradient {
        weights,
        visible_bias,
        hidden_bias,
        reconstruction_error,
    })
}

/// Applies CD updates with momentum and weight decay; owns the velocity and
/// the Gibbs sampling stream for one layer.
#[derive(Debug, Clone)]
pub struct RbmTrainer {
    config: TrainConfig,
    velocity: RbmGradient,
    gibbs: ChaCha8Rng,
    layer: u32,
}

impl RbmTrainer {
    /// `layer` selects the random streams so stacked layers stay independent.
    pub fn new(config: TrainConfig, n_visible: usize, n_hidden: usize, layer: u32) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            gibbs: purpose_stream(config.seed, Purpose::RbmGibbs, layer),
            velocity: RbmGradient::zeros(n_visible, n_hidden),
            config,
            layer,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn velocity(&self) -> (&Array2<f64>, &Array1<f64>, &Array1<f64>) {
        (&self.velocity.weights, &self.velocity.visible_bias, &self.velocity.hidden_bias)
    }

    /// One CD step on `batch`; returns its reconstruction error.
    pub fn cd_update(
        &mut self,
        params: &mut RbmParameters,
        batch: ArrayView2<'_, f64>,
        epoch: usize,
        batch_index: usize,
    ) -> Result<f64> {
        ensure_dim("batch width", params.n_visible(), batch.ncols())?;
        ensure_dim("velocity rows", self.velocity.weights.nrows(), params.n_visible())?;
        ensure_dim("velocity cols", self.velocity.weights.ncols(), params.n_hidden())?;
        let grad = cd_gradient(params, batch, self.config.cd_steps, &mut self.gibbs)?;
        let lr = self.config.learning_rate;
        let mom = self.config.momentum_at(epoch);
        let decay = self.config.weight_decay;
        let (w, a, b) = params.parts_mut();

        Zip::from(&mut self.velocity.weights)
            .and(&grad.weights)
            .and(&*w)
            .for_each(|vel, &g, &wij| *vel = mom * *vel + lr * (g - decay * wij));
        Zip::from(&mut self.velocity.visible_bias)
            .and(&grad.visible_bias)
            .for_each(|vel, &g| *vel = mom * *vel + lr * g);
        Zip::from(&mut self.velocity.hidden_bias)
            .and(&grad.hidden_bias)
            .for_each(|vel, &g| *vel = mom * *vel + lr * g);
        *w += &self.velocity.weights;
        *a += &self.velocity.visible_bias;
        *b += &self.velocity.hidden_bias;

        params.check_finite(&format!(
            "RBM layer {} at epoch {epoch}, batch {batch_index}",
            self.layer
        ))?;
        if !grad.reconstruction_error.is_finite() {
            return Err(Error::NonFinite {
                context: format!("reconstruction error at epoch {epoch}, batch {batch_index}"),
            });
        }
        Ok(grad.reconstruction_error)
    }

    /// Runs `config.epochs` epochs over shuffled mini-batches of `data`.
    /// Returns the mean reconstruction error of each epoch.
    pub fn train(&mut self, params: &mut RbmParameters, data: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if data.nrows() == 0 {
            return Err(Error::Empty("training set"));
        }
        let mut order: Vec<usize> = (0..data.nrows()).collect();
        let mut shuffle = purpose_stream(self.config.seed, Purpose::RbmShuffle, self.layer);
        let mut history = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut shuffle);
            let mut total = 0.0;
            for (bi, chunk) in order.chunks(self.config.batch_size).enumerate() {
                let batch = data.select(Axis(0), chunk);
                total += self.cd_update(params, batch.view(), epoch, bi)? * chunk.len() as f64;
            }
            history.push(total / data.nrows() as f64);
        }
        Ok(history)
    }
}

/// Initialises a layer from its `RbmInit` stream and trains it on `data`.
pub fn train_rbm(
    data: ArrayView2<'_, f64>,
    n_hidden: usize,
    config: &TrainConfig,
    layer: u32,
) -> Result<(RbmParameters, Vec<f64>)> {
    let mut init = purpose_stream(config.seed, Purpose::RbmInit, layer);
    let mut params = RbmParameters::random(data.ncols(), n_hidden, &mut init)?;
    let mut trainer = RbmTrainer::new(config.clone(), data.ncols(), n_hidden, layer)?;
    let history = trainer.train(&mut params, data)?;
    Ok((params, history))
}

fn bits(index: usize, len: usize) -> Vec<f64> {
    (0..len).map(|k| ((index >> k) & 1) as f64).collect()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log P(v)` for each binary row of `data`, computed by enumerating every
/// joint state. Only for `m + n <= 24`.
pub fn exact_log_probabilities(params: &RbmParameters, data: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let (m, n) = (params.n_visible(), params.n_hidden());
    if m + n > MAX_ENUMERATION_UNITS {
        return Err(Error::invalid(format!(
            "exact likelihood needs m + n <= {MAX_ENUMERATION_UNITS}, got {}",
            m + n
        )));
    }
    ensure_dim("visible vector", m, data.ncols())?;
    if let Some(x) = data.iter().find(|&&x| x != 0.0 && x != 1.0) {
        return Err(Error::invalid(format!("exact likelihood needs binary data, found {x}")));
    }
    let hidden_states: Vec<Vec<f64>> = (0..1usize << n).map(|k| bits(k, n)).collect();
    let marginal = |v: &[f64]| -> Result<f64> {
        let neg_energies = hidden_states
            .iter()
            .map(|h| energy(params, v, h).map(|e| -e))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&neg_energies))
    };
    let per_visible = (0..1usize << m)
        .map(|k| marginal(&bits(k, m)))
        .collect::<Result<Vec<_>>>()?;
    let log_z = log_sum_exp(&per_visible);
    data.rows()
        .into_iter()
        .map(|row| {
            let v = row.to_vec();
            let index = v.iter().enumerate().fold(0usize, |acc, (k, &x)| acc | ((x as usize) << k));
            Ok(per_visible[index] - log_z)
        })
        .collect()
}

/// `sum_v log P(v)` over the rows of `data`.
pub fn exact_log_likelihood(params: &RbmParameters, data: ArrayView2<'_, f64>) -> Result<f64> {
    Ok(exact_log_probabilities(params, data)?.iter().sum())
}
