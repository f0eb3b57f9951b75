//! Fully-connected regressor with explicit backpropagation. Reverse mode
//! produces both the weight gradients used for training and the input
//! gradient needed by the sign-gradient attack.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::mix_seed;
use crate::error::{BeamsecError, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Hidden width of the three ReLU layers.
pub const HIDDEN_WIDTH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative(&self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format_version: u32,
    pub layers: Vec<Layer>,
    /// Rate normalization constant carried with the model; present once the
    /// model has been trained.
    pub r_max: Option<f64>,
}

/// Forward-pass mode: training applies inverted dropout to hidden
/// activations, evaluation is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_ratio: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Fraction of samples held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 100,
            dropout_ratio: 0.25,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// Per-layer weight and bias gradients, shaped like the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn zero(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for x in v.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Adam first/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        Self { m: Gradients::zeros_like(model), v: Gradients::zeros_like(model), step: 0 }
    }
}

/// Build a model with explicit layer dims and activations; weights are
/// Glorot-uniform, biases zero, deterministic per seed.
pub fn init_model_with_dims(dims: &[usize], activations: &[Activation], seed: u64) -> MlpModel {
    assert!(dims.len() >= 2 && activations.len() == dims.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x696e_6974));
    let layers = dims
        .windows(2)
        .zip(activations)
        .map(|(w, &activation)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights =
                (0..fan_in * fan_out).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit).collect();
            Layer {
                in_dim: fan_in,
                out_dim: fan_out,
                weights,
                biases: vec![0.0; fan_out],
                activation,
            }
        })
        .collect();
    MlpModel { format_version: MODEL_FORMAT_VERSION, layers, r_max: None }
}

/// The beam-prediction architecture: three ReLU layers of width 100 and a
/// tanh output of width `output_dim`.
pub fn init_model(input_dim: usize, output_dim: usize, seed: u64) -> MlpModel {
    init_model_with_dims(
        &[input_dim, HIDDEN_WIDTH, HIDDEN_WIDTH, HIDDEN_WIDTH, output_dim],
        &[Activation::Relu, Activation::Relu, Activation::Relu, Activation::Tanh],
        seed,
    )
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn is_trained(&self) -> bool {
        self.r_max.is_some()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(BeamsecError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
                context: "model input".into(),
            });
        }
        Ok(())
    }

    /// Validate that consecutive layer dims chain and all parameters are
    /// finite.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(BeamsecError::MalformedData(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        if self.layers.is_empty() {
            return Err(BeamsecError::MalformedData("model has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.biases.len() != l.out_dim {
                return Err(BeamsecError::MalformedData(format!("layer {i} shape mismatch")));
            }
            if i > 0 && self.layers[i - 1].out_dim != l.in_dim {
                return Err(BeamsecError::MalformedData(format!(
                    "layer {i} input dim {} does not chain from previous output {}",
                    l.in_dim,
                    self.layers[i - 1].out_dim
                )));
            }
            if l.weights.iter().chain(&l.biases).any(|w| !w.is_finite()) {
                return Err(BeamsecError::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(())
    }
}

struct ForwardTrace {
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    /// Post-activation, post-dropout outputs per layer (the next layer's
    /// input).
    act: Vec<Vec<f64>>,
    /// Dropout keep masks (already scaled by 1/(1-p)); empty in eval mode.
    masks: Vec<Vec<f64>>,
}

fn forward_trace(
    model: &MlpModel,
    x: &[f64],
    mode: Mode,
    dropout_ratio: f64,
    seed: u64,
) -> ForwardTrace {
    let n_layers = model.layers.len();
    let mut pre = Vec::with_capacity(n_layers);
    let mut act = Vec::with_capacity(n_layers);
    let mut masks = Vec::with_capacity(n_layers);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6472_6f70));
    let mut input = x;
    for (i, layer) in model.layers.iter().enumerate() {
        let mut z = layer.biases.clone();
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(input) {
                acc += w * xi;
            }
            *zo += acc;
        }
        let mut a: Vec<f64> = z.iter().map(|&zi| layer.activation.apply(zi)).collect();
        let is_hidden = i + 1 < n_layers;
        let mask = if mode == Mode::Train && dropout_ratio > 0.0 && is_hidden {
            let keep = 1.0 - dropout_ratio;
            let mask: Vec<f64> = a
                .iter()
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            for (ai, mi) in a.iter_mut().zip(&mask) {
                *ai *= mi;
            }
            mask
        } else {
            Vec::new()
        };
        pre.push(z);
        masks.push(mask);
        act.push(a);
        input = act.last().unwrap();
    }
    ForwardTrace { pre, act, masks }
}

/// Run the network. Train mode draws the dropout mask from `seed`; eval mode
/// is deterministic with no dropout.
pub fn forward(
    model: &MlpModel,
    x: &[f64],
    mode: Mode,
    dropout_ratio: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    model.check_input(x)?;
    let trace = forward_trace(model, x, mode, dropout_ratio, seed);
    Ok(trace.act.last().unwrap().clone())
}

/// Deterministic eval-mode prediction.
pub fn predict(model: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
    forward(model, x, Mode::Eval, 0.0, 0)
}

/// Mean squared error over components.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(BeamsecError::DimensionMismatch {
            expected: target.len(),
            got: pred.len(),
            context: "mse operands".into(),
        });
    }
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
}

/// Reverse-mode core: computes the loss and input gradient, and, when an
/// accumulator is supplied, adds this sample's weight/bias gradients into it.
fn backward_impl(
    model: &MlpModel,
    x: &[f64],
    target: &[f64],
    mode: Mode,
    dropout_ratio: f64,
    seed: u64,
    mut accum: Option<&mut Gradients>,
) -> Result<(Vec<f64>, f64)> {
    model.check_input(x)?;
    if target.len() != model.output_dim() {
        return Err(BeamsecError::DimensionMismatch {
            expected: model.output_dim(),
            got: target.len(),
            context: "backward target".into(),
        });
    }
    let trace = forward_trace(model, x, mode, dropout_ratio, seed);
    let output = trace.act.last().unwrap();
    let loss = mse_loss(output, target)?;

    let p_out = model.output_dim() as f64;
    // dL/da for the output layer
    let mut upstream: Vec<f64> =
        output.iter().zip(target).map(|(o, t)| 2.0 * (o - t) / p_out).collect();

    for i in (0..model.layers.len()).rev() {
        let layer = &model.layers[i];
        // through dropout (mask already folds in the 1/(1-p) scale)
        if !trace.masks[i].is_empty() {
            for (u, m) in upstream.iter_mut().zip(&trace.masks[i]) {
                *u *= m;
            }
        }
        // delta = dL/dz
        let mut act_out = trace.act[i].clone();
        if !trace.masks[i].is_empty() {
            // recover pre-dropout activation for the tanh/relu derivative
            for (a, m) in act_out.iter_mut().zip(&trace.masks[i]) {
                if *m > 0.0 {
                    *a /= m;
                }
            }
        }
        let delta: Vec<f64> = upstream
            .iter()
            .zip(&trace.pre[i])
            .zip(&act_out)
            .map(|((u, &z), &a)| u * layer.activation.derivative(z, a))
            .collect();

        if let Some(grads) = accum.as_deref_mut() {
            let layer_input: &[f64] = if i == 0 { x } else { &trace.act[i - 1] };
            let gw = &mut grads.weights[i];
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, xi) in row.iter_mut().zip(layer_input) {
                    *g += d * xi;
                }
            }
            for (b, &d) in grads.biases[i].iter_mut().zip(&delta) {
                *b += d;
            }
        }

        // propagate dL/d(input of this layer)
        let mut next = vec![0.0; layer.in_dim];
        for (o, &d) in delta.iter().enumerate() {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (ni, w) in next.iter_mut().zip(row) {
                *ni += d * w;
            }
        }
        upstream = next;
    }
    Ok((upstream, loss))
}

/// Reverse-mode gradients of `mse_loss(forward(x))` with respect to every
/// weight, bias and input component. The dropout mask is shared with the
/// paired forward pass through `seed`.
pub fn backward(
    model: &MlpModel,
    x: &[f64],
    target: &[f64],
    mode: Mode,
    dropout_ratio: f64,
    seed: u64,
) -> Result<(Gradients, Vec<f64>, f64)> {
    let mut grads = Gradients::zeros_like(model);
    let (input_grad, loss) =
        backward_impl(model, x, target, mode, dropout_ratio, seed, Some(&mut grads))?;
    Ok((grads, input_grad, loss))
}

/// Eval-mode loss gradient with respect to the input only; skips the weight
/// gradient accumulation the attack never needs.
pub fn input_gradient(model: &MlpModel, x: &[f64], target: &[f64]) -> Result<(Vec<f64>, f64)> {
    backward_impl(model, x, target, Mode::Eval, 0.0, 0, None)
}

/// One Adam update with bias correction.
pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, layer) in model.layers.iter_mut().enumerate() {
        for (params, g, m, v) in [
            (&mut layer.weights, &grads.weights[i], &mut state.m.weights[i], &mut state.v.weights[i]),
            (&mut layer.biases, &grads.biases[i], &mut state.m.biases[i], &mut state.v.biases[i]),
        ] {
            for j in 0..params.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                params[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
            }
        }
    }
}

/// One training sample: flattened pilot features and the normalized per-beam
/// rate target.
pub type Sample = (Vec<f64>, Vec<f64>);

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Deterministic train/validation index split driven by `seed`.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7370_6c69));
    let idx = shuffled_indices(n, &mut rng);
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let (val, train) = idx.split_at(n_val);
    (train.to_vec(), val.to_vec())
}

/// Mean eval-mode MSE over a sample set.
pub fn mean_loss(model: &MlpModel, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(BeamsecError::EmptyDataset);
    }
    let total: f64 = samples
        .par_iter()
        .map(|(x, y)| {
            let pred = predict(model, x)?;
            mse_loss(&pred, y)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(total / samples.len() as f64)
}

/// Continue training `model` on explicit train/validation sample sets.
/// Minibatch order, dropout and everything else are fixed by `cfg.seed` and
/// `epoch_offset`, so repeated runs are bit-identical.
pub fn train_epochs(
    model: &mut MlpModel,
    train: &[&Sample],
    val: &[&Sample],
    cfg: &TrainConfig,
    state: &mut AdamState,
    epoch_offset: u64,
) -> Result<TrainHistory> {
    if train.is_empty() {
        return Err(BeamsecError::EmptyDataset);
    }
    let mut history = TrainHistory::default();
    let mut batch_grads = Gradients::zeros_like(model);
    for epoch in 0..cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x6570 + epoch_offset + epoch as u64));
        let order = shuffled_indices(train.len(), &mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            batch_grads.zero();
            let mut batch_loss = 0.0;
            for (si, &idx) in batch.iter().enumerate() {
                let (x, y) = train[idx];
                let drop_seed = mix_seed(
                    cfg.seed,
                    ((epoch_offset + epoch as u64) << 32)
                        ^ ((batch_no as u64) << 16)
                        ^ si as u64,
                );
                let (_, loss) = backward_impl(
                    model,
                    x,
                    y,
                    Mode::Train,
                    cfg.dropout_ratio,
                    drop_seed,
                    Some(&mut batch_grads),
                )?;
                batch_loss += loss;
            }
            let inv = 1.0 / batch.len() as f64;
            batch_grads.scale(inv);
            batch_loss *= inv;
            if !batch_loss.is_finite() {
                return Err(BeamsecError::NonFinite("training loss".into()));
            }
            adam_step(model, &batch_grads, state, cfg);
            epoch_loss += batch_loss;
            n_batches += 1;
        }
        history.train_loss.push(epoch_loss / n_batches as f64);
        let vl = if val.is_empty() { f64::NAN } else { mean_loss(model, val)? };
        history.val_loss.push(vl);
    }
    Ok(history)
}

/// Train a fresh pass over `samples` with an internal 90/10 split (per
/// `cfg.val_fraction`). Marks the model as trained.
pub fn train(model: &mut MlpModel, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainHistory> {
    if samples.is_empty() {
        return Err(BeamsecError::EmptyDataset);
    }
    let (train_idx, val_idx) = split_indices(samples.len(), cfg.val_fraction, cfg.seed);
    let train_set: Vec<&Sample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val_set: Vec<&Sample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let mut state = AdamState::new(model);
    let history = train_epochs(model, &train_set, &val_set, cfg, &mut state, 0)?;
    model.r_max.get_or_insert(1.0);
    Ok(history)
}

/// Write the model as a versioned JSON document.
pub fn save_model<W: std::io::Write>(model: &MlpModel, writer: W) -> Result<()> {
    model.validate()?;
    serde_json::to_writer(writer, model)?;
    Ok(())
}

/// Load and validate a serialized model.
pub fn load_model<R: std::io::Read>(reader: R) -> Result<MlpModel> {
    let model: MlpModel = serde_json::from_reader(reader)?;
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(seed: u64) -> MlpModel {
        init_model_with_dims(&[6, 10, 4], &[Activation::Relu, Activation::Tanh], seed)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_model(64, 16, 42);
        let b = init_model(64, 16, 42);
        assert_eq!(a, b);
        for l in &a.layers {
            assert!(l.biases.iter().all(|&b| b == 0.0));
        }
        assert_ne!(a, init_model(64, 16, 43));
    }

    #[test]
    fn init_weight_mean_is_near_zero() {
        // pool weights across many seeds; uniform(-limit, limit) has mean 0
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for seed in 0..10 {
            let m = small_model(seed);
            for l in &m.layers {
                for &w in &l.weights {
                    sum += w;
                    sum_sq += w * w;
                    count += 1;
                }
            }
        }
        assert!(count > 10_000 / 50); // sanity on sample size
        let mean = sum / count as f64;
        let var = sum_sq / count as f64 - mean * mean;
        let se = (var / count as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3*SE {}", 3.0 * se);
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut m = small_model(0);
        for l in m.layers.iter_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let out = predict(&m, &[0.3; 6]).unwrap();
        assert!(out.iter().all(|&o| o == 0.0));
    }

    #[test]
    fn eval_forward_is_deterministic_and_bounded() {
        let m = init_model(16, 8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_vec(&mut rng, 16);
        let a = predict(&m, &x).unwrap();
        let b = predict(&m, &x).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&o| o > -1.0 && o < 1.0));
    }

    #[test]
    fn dropout_zeroes_expected_fraction() {
        let m = init_model(16, 8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..16).map(|_| rng.random::<f64>() + 0.5).collect();
        let mut zeroed = 0usize;
        let mut total = 0usize;
        for seed in 0..1000u64 {
            let trace = forward_trace(&m, &x, Mode::Train, 0.25, seed);
            for mask in trace.masks.iter().filter(|m| !m.is_empty()) {
                zeroed += mask.iter().filter(|&&v| v == 0.0).count();
                total += mask.len();
            }
        }
        let frac = zeroed as f64 / total as f64;
        assert!((frac - 0.25).abs() < 0.02, "dropout fraction {frac}");
    }

    #[test]
    fn dropout_scaling_preserves_expected_activation() {
        // frozen hidden layer: expectation of inverted dropout equals eval
        let m = init_model(16, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_vec(&mut rng, 16);
        let eval = forward_trace(&m, &x, Mode::Eval, 0.0, 0);
        let eval_mean: f64 =
            eval.act[0].iter().sum::<f64>() / eval.act[0].len() as f64;
        let reps = 20_000u64;
        let mut train_mean = 0.0;
        for seed in 0..reps {
            let t = forward_trace(&m, &x, Mode::Train, 0.25, seed);
            train_mean += t.act[0].iter().sum::<f64>() / t.act[0].len() as f64;
        }
        train_mean /= reps as f64;
        assert!(
            (train_mean - eval_mean).abs() / eval_mean.abs().max(1e-9) < 0.02,
            "train {train_mean} vs eval {eval_mean}"
        );
    }

    #[test]
    fn mse_hand_values() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_matches_independent_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = rand_vec(&mut rng, 9);
            let b = rand_vec(&mut rng, 9);
            // oracle: explicit loop, no iterator pipeline
            let mut acc = 0.0;
            for i in 0..a.len() {
                let d = a[i] - b[i];
                acc += d * d;
            }
            let oracle = acc / a.len() as f64;
            assert!((mse_loss(&a, &b).unwrap() - oracle).abs() < 1e-12);
        }
    }

    fn finite_diff_input(model: &MlpModel, x: &[f64], y: &[f64], i: usize, step: f64) -> f64 {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += step;
        xm[i] -= step;
        let lp = mse_loss(&predict(model, &xp).unwrap(), y).unwrap();
        let lm = mse_loss(&predict(model, &xm).unwrap(), y).unwrap();
        (lp - lm) / (2.0 * step)
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = small_model(21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..5 {
            let x = rand_vec(&mut rng, 6);
            let y = rand_vec(&mut rng, 4);
            let (_, gx, _) = backward(&m, &x, &y, Mode::Eval, 0.0, 0).unwrap();
            assert_eq!(gx.len(), 6);
            for i in 0..6 {
                let fd = finite_diff_input(&m, &x, &y, i, 1e-5);
                let denom = fd.abs().max(1e-8);
                assert!(
                    (gx[i] - fd).abs() / denom < 1e-4,
                    "input grad {i}: analytic {} vs fd {fd}",
                    gx[i]
                );
            }
        }
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        let m = small_model(31);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = rand_vec(&mut rng, 6);
        let y = rand_vec(&mut rng, 4);
        let (gw, _, _) = backward(&m, &x, &y, Mode::Eval, 0.0, 0).unwrap();
        let step = 1e-5;
        let mut checked = 0;
        'outer: for li in 0..m.layers.len() {
            for wi in 0..m.layers[li].weights.len() {
                let mut mp = m.clone();
                mp.layers[li].weights[wi] += step;
                let mut mm = m.clone();
                mm.layers[li].weights[wi] -= step;
                let lp = mse_loss(&predict(&mp, &x).unwrap(), &y).unwrap();
                let lm = mse_loss(&predict(&mm, &x).unwrap(), &y).unwrap();
                let fd = (lp - lm) / (2.0 * step);
                let analytic = gw.weights[li][wi];
                let denom = fd.abs().max(1e-8);
                assert!(
                    (analytic - fd).abs() / denom < 1e-4,
                    "layer {li} weight {wi}: analytic {analytic} vs fd {fd}"
                );
                checked += 1;
                if checked >= 60 {
                    break 'outer;
                }
            }
        }
        assert!(checked >= 50);
    }

    #[test]
    fn zero_input_zero_target_gives_zero_input_gradient() {
        let m = small_model(41); // biases are zero at init
        let (_, gx, loss) = backward(&m, &[0.0; 6], &[0.0; 4], Mode::Eval, 0.0, 0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(gx.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adam_zero_gradient_leaves_model_unchanged() {
        let mut m = small_model(51);
        let before = m.clone();
        let mut state = AdamState::new(&m);
        let zeros = Gradients::zeros_like(&m);
        for _ in 0..5 {
            adam_step(&mut m, &zeros, &mut state, &TrainConfig::default());
        }
        assert_eq!(m, before);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        // with a constant gradient, |update| -> lr after bias correction
        let mut m = init_model_with_dims(&[1, 1], &[Activation::Tanh], 0);
        let mut state = AdamState::new(&m);
        let cfg = TrainConfig { learning_rate: 0.01, ..Default::default() };
        let grads = Gradients { weights: vec![vec![0.5]], biases: vec![vec![0.0]] };
        let mut last = m.layers[0].weights[0];
        let mut step_size = 0.0;
        for _ in 0..200 {
            adam_step(&mut m, &grads, &mut state, &cfg);
            step_size = (m.layers[0].weights[0] - last).abs();
            last = m.layers[0].weights[0];
        }
        assert!((step_size - cfg.learning_rate).abs() < 0.1 * cfg.learning_rate);
    }

    #[test]
    fn adam_same_inputs_same_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let grads = Gradients {
            weights: vec![rand_vec(&mut rng, 60), rand_vec(&mut rng, 40)],
            biases: vec![rand_vec(&mut rng, 10), rand_vec(&mut rng, 4)],
        };
        let mut m1 = small_model(62);
        let mut m2 = m1.clone();
        let mut s1 = AdamState::new(&m1);
        let mut s2 = AdamState::new(&m2);
        let cfg = TrainConfig::default();
        for _ in 0..3 {
            adam_step(&mut m1, &grads, &mut s1, &cfg);
            adam_step(&mut m2, &grads, &mut s2, &cfg);
        }
        assert_eq!(m1, m2);
    }

    /// y = tanh(Wx) regression task for convergence checks.
    fn synthetic_task(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = rand_vec(&mut rng, 4 * 8);
        (0..n)
            .map(|_| {
                let x = rand_vec(&mut rng, 8);
                let y: Vec<f64> = (0..4)
                    .map(|o| {
                        let row = &w[o * 8..(o + 1) * 8];
                        row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().tanh()
                    })
                    .collect();
                (x, y)
            })
            .collect()
    }

    #[test]
    fn training_converges_on_synthetic_task() {
        let samples = synthetic_task(2000, 71);
        let mut model = init_model_with_dims(
            &[8, 32, 4],
            &[Activation::Relu, Activation::Tanh],
            72,
        );
        let cfg = TrainConfig { dropout_ratio: 0.0, seed: 73, ..Default::default() };
        let history = train(&mut model, &samples, &cfg).unwrap();
        assert_eq!(history.train_loss.len(), cfg.epochs);
        let first = history.train_loss[0];
        let last = *history.train_loss.last().unwrap();
        assert!(last * 10.0 <= first, "loss {first} -> {last}");
        assert!(history.val_loss.iter().all(|l| l.is_finite()));
        assert!(*history.val_loss.last().unwrap() <= history.val_loss[0]);
    }

    #[test]
    fn zero_epochs_returns_model_unchanged() {
        let samples = synthetic_task(50, 81);
        let mut model = small_model(82);
        let before = model.clone();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let history = train(&mut model, &samples, &cfg).unwrap();
        assert!(history.train_loss.is_empty());
        assert_eq!(model.layers, before.layers);
        assert!(model.is_trained());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let samples = synthetic_task(500, 91);
        let cfg = TrainConfig { epochs: 3, seed: 92, ..Default::default() };
        let mut m1 = init_model_with_dims(&[8, 16, 4], &[Activation::Relu, Activation::Tanh], 93);
        let mut m2 = m1.clone();
        train(&mut m1, &samples, &cfg).unwrap();
        train(&mut m2, &samples, &cfg).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut model = small_model(0);
        assert!(matches!(
            train(&mut model, &[], &TrainConfig::default()),
            Err(BeamsecError::EmptyDataset)
        ));
    }

    #[test]
    fn model_serialization_round_trip() {
        let mut model = init_model(16, 8, 101);
        model.r_max = Some(3.25);
        let mut buf = Vec::new();
        save_model(&model, &mut buf).unwrap();
        let back = load_model(buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn load_rejects_broken_dimension_chain() {
        let mut model = init_model(16, 8, 102);
        model.layers[1].in_dim = 99;
        model.layers[1].weights = vec![0.0; 99 * model.layers[1].out_dim];
        let buf = serde_json::to_vec(&model).unwrap();
        assert!(load_model(buf.as_slice()).is_err());
    }
}
