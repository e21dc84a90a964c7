//! Feed-forward value approximator.
//!
//! A stack of dense layers with rectified-linear hidden units and an identity
//! output, trained on masked mean squared error: each sample carries one scalar
//! target for one output coordinate (the game state it was drawn at) and the
//! remaining outputs receive no gradient.
//!
//! Inputs pass through a fixed affine normalization `(x - offset) * scale`
//! before the first layer and the final layer is multiplied by `output_scale`.
//! Both are plain constants saved with the checkpoint, so the learned part of
//! the model sees inputs near `[-1, 1]` and targets near unit scale.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &str = "secgame-mlp 1";
const FORWARD_CHUNK: usize = 2048;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
        })
    }

    /// Three hidden layers of 64, 64 and 32 units.
    pub fn complex(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 64, 32],
            output_dim,
        }
    }

    /// No hidden layers: a single affine map.
    pub fn simple(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: Vec::new(),
            output_dim,
        }
    }

    fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.output_dim))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    spec: MlpSpec,
    layers: Vec<Dense>,
    input_offset: f64,
    input_scale: f64,
    output_scale: f64,
}

/// Training samples: one input row, one output coordinate, one target each.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueDataset {
    inputs: Array2<f64>,
    states: Vec<usize>,
    targets: Vec<f64>,
}

impl ValueDataset {
    pub fn new(inputs: Array2<f64>, states: Vec<usize>, targets: Vec<f64>) -> Result<Self> {
        if inputs.nrows() != states.len() || states.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                expected: inputs.nrows(),
                actual: targets.len().min(states.len()),
            });
        }
        if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFiniteTarget(i));
        }
        Ok(Self {
            inputs,
            states,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn select(&self, rows: &[usize]) -> ValueDataset {
        ValueDataset {
            inputs: self.inputs.select(Axis(0), rows),
            states: rows.iter().map(|&r| self.states[r]).collect(),
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
        }
    }

    /// Splits off the trailing `fraction` of samples as a held-out set.
    pub fn split(&self, fraction: f64) -> (ValueDataset, ValueDataset) {
        let n_test = ((self.len() as f64) * fraction).round() as usize;
        let cut = self.len() - n_test.min(self.len());
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            epochs: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("moment decay rates must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Parameter gradients laid out like the model's layers.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

struct Activations {
    /// Layer inputs: the normalized batch, then each hidden activation.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of every layer (the last one is unscaled output).
    pre: Vec<Array2<f64>>,
}

impl MlpModel {
    /// Zero biases and weights drawn from `N(0, 2 / fan_in)`.
    pub fn new(spec: MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = spec.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("finite std");
                let mut layer = Dense::zeros(w[0], w[1]);
                layer
                    .weights
                    .mapv_inplace(|_| normal.sample(&mut rng));
                layer
            })
            .collect();
        Self {
            spec,
            layers,
            input_offset: 0.0,
            input_scale: 1.0,
            output_scale: 1.0,
        }
    }

    /// All-zero parameters: the model predicts zero everywhere.
    pub fn zeros(spec: MlpSpec) -> Self {
        let widths = spec.widths();
        let layers = widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self {
            spec,
            layers,
            input_offset: 0.0,
            input_scale: 1.0,
            output_scale: 1.0,
        }
    }

    /// Sets the fixed input/output normalization constants.
    pub fn with_scaling(mut self, input_offset: f64, input_scale: f64, output_scale: f64) -> Self {
        self.input_offset = input_offset;
        self.input_scale = input_scale;
        self.output_scale = output_scale;
        self
    }

    /// Normalization mapping the box `[low, high]` onto `[-1, 1]`.
    pub fn with_input_box(self, low: f64, high: f64, output_scale: f64) -> Self {
        let scale = if high > low { 2.0 / (high - low) } else { 1.0 };
        self.with_scaling(0.5 * (low + high), scale, output_scale)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn scaling(&self) -> (f64, f64, f64) {
        (self.input_offset, self.input_scale, self.output_scale)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn activations(&self, inputs: ArrayView2<'_, f64>) -> Activations {
        let mut x = inputs.mapv(|v| (v - self.input_offset) * self.input_scale);
        let mut acts = Activations {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            let next = if k < last { z.mapv(|v| v.max(0.0)) } else { Array2::zeros((0, 0)) };
            acts.inputs.push(std::mem::replace(&mut x, next));
            acts.pre.push(z);
        }
        acts
    }

    fn check_inputs(&self, inputs: &ArrayView2<'_, f64>) -> Result<()> {
        if inputs.ncols() != self.spec.input_dim {
            return Err(Error::ShapeMismatch {
                expected: self.spec.input_dim,
                actual: inputs.ncols(),
            });
        }
        Ok(())
    }

    /// Outputs for a batch of input rows.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_inputs(&inputs)?;
        Ok(self.forward_unchecked(inputs))
    }

    /// Inference without keeping intermediate activations, in row chunks.
    pub(crate) fn forward_unchecked(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((inputs.nrows(), self.spec.output_dim));
        let last = self.layers.len() - 1;
        for (chunk, mut dst) in inputs
            .axis_chunks_iter(Axis(0), FORWARD_CHUNK)
            .zip(out.axis_chunks_iter_mut(Axis(0), FORWARD_CHUNK))
        {
            let mut x = chunk.mapv(|v| (v - self.input_offset) * self.input_scale);
            for (k, layer) in self.layers.iter().enumerate() {
                let mut z = x.dot(&layer.weights.t());
                let bias = layer.bias.as_slice().expect("contiguous bias");
                for mut row in z.rows_mut() {
                    let row = row.as_slice_mut().expect("row-major");
                    if k < last {
                        for (v, b) in row.iter_mut().zip(bias) {
                            *v = (*v + b).max(0.0);
                        }
                    } else {
                        for (v, b) in row.iter_mut().zip(bias) {
                            *v = (*v + b) * self.output_scale;
                        }
                    }
                }
                x = z;
            }
            dst.assign(&x);
        }
        out
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(view)?.row(0).to_vec())
    }

    /// Smallest `|pre-activation|` over hidden units for a batch; infinite for
    /// a model without hidden layers. Finite differences are only trustworthy
    /// when this is well above the perturbation size.
    pub fn min_abs_preactivation(&self, inputs: ArrayView2<'_, f64>) -> f64 {
        let acts = self.activations(inputs);
        let hidden = acts.pre.len() - 1;
        acts.pre[..hidden]
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Masked mean squared error over a dataset.
    pub fn masked_mse(&self, data: &ValueDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.check_inputs(&data.inputs.view())?;
        let out = self.forward_unchecked(data.inputs.view());
        let sse: f64 = data
            .states
            .iter()
            .zip(&data.targets)
            .enumerate()
            .map(|(i, (&s, &t))| (out[(i, s)] - t).powi(2))
            .sum();
        Ok(sse / data.len() as f64)
    }

    /// Loss and analytic gradient of the masked MSE.
    pub fn loss_and_gradients(&self, data: &ValueDataset) -> Result<(f64, Gradients)> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.check_inputs(&data.inputs.view())?;
        if let Some(&s) = data.states.iter().find(|&&s| s >= self.spec.output_dim) {
            return Err(Error::IndexOutOfRange {
                what: "output",
                index: s,
                limit: self.spec.output_dim,
            });
        }
        let acts = self.activations(data.inputs.view());
        let n = data.len() as f64;
        let out = acts.pre.last().expect("at least one layer");
        let mut delta = Array2::zeros(out.raw_dim());
        let mut sse = 0.0;
        for (i, (&s, &t)) in data.states.iter().zip(&data.targets).enumerate() {
            let err = out[(i, s)] * self.output_scale - t;
            sse += err * err;
            delta[(i, s)] = 2.0 * err / n * self.output_scale;
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let weights = delta.t().dot(&acts.inputs[k]);
            let bias = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&layer.weights);
                ndarray::Zip::from(&mut back)
                    .and(&acts.pre[k - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
                delta = back;
            }
            grads.push(Dense { weights, bias });
        }
        grads.reverse();
        Ok((sse / n, Gradients { layers: grads }))
    }

    /// Trains in place with Adam on shuffled minibatches and returns the mean
    /// minibatch loss of every epoch.
    pub fn train(&mut self, data: &ValueDataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut adam = Adam::new(self, cfg);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut weighted = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch = data.select(chunk);
                let (loss, grads) = self.loss_and_gradients(&batch)?;
                adam.step(self, &grads);
                weighted += loss * chunk.len() as f64;
            }
            history.push(weighted / data.len() as f64);
        }
        Ok(history)
    }

    /// Largest relative error between backpropagated and central-difference
    /// gradients over a random subset of at least 100 parameters (all of them
    /// when the model is smaller).
    pub fn grad_check<R: Rng + ?Sized>(&self, batch: &ValueDataset, rng: &mut R) -> Result<f64> {
        const STEP: f64 = 1e-5;
        let (_, grads) = self.loss_and_gradients(batch)?;
        let mut coords: Vec<(usize, bool, usize)> = Vec::with_capacity(self.n_params());
        for (k, layer) in self.layers.iter().enumerate() {
            coords.extend((0..layer.weights.len()).map(|i| (k, true, i)));
            coords.extend((0..layer.bias.len()).map(|i| (k, false, i)));
        }
        coords.shuffle(rng);
        coords.truncate(coords.len().min(256));

        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for (k, is_weight, i) in coords {
            let analytic = if is_weight {
                grads.layers[k].weights.as_slice().expect("contiguous")[i]
            } else {
                grads.layers[k].bias[i]
            };
            let original = *probe.param_mut(k, is_weight, i);
            *probe.param_mut(k, is_weight, i) = original + STEP;
            let plus = probe.masked_mse(batch)?;
            *probe.param_mut(k, is_weight, i) = original - STEP;
            let minus = probe.masked_mse(batch)?;
            *probe.param_mut(k, is_weight, i) = original;
            let numeric = (plus - minus) / (2.0 * STEP);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        Ok(worst)
    }

    fn param_mut(&mut self, layer: usize, is_weight: bool, index: usize) -> &mut f64 {
        let layer = &mut self.layers[layer];
        if is_weight {
            &mut layer.weights.as_slice_mut().expect("contiguous")[index]
        } else {
            &mut layer.bias[index]
        }
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        let join = |it: &mut dyn Iterator<Item = &f64>| {
            it.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
        };
        writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(out, "input_dim {}", self.spec.input_dim).unwrap();
        let hidden: Vec<String> = self.spec.hidden.iter().map(|h| h.to_string()).collect();
        writeln!(out, "hidden {}", hidden.join(" ")).unwrap();
        writeln!(out, "output_dim {}", self.spec.output_dim).unwrap();
        writeln!(out, "input_offset {:?}", self.input_offset).unwrap();
        writeln!(out, "input_scale {:?}", self.input_scale).unwrap();
        writeln!(out, "output_scale {:?}", self.output_scale).unwrap();
        for (k, layer) in self.layers.iter().enumerate() {
            let (rows, cols) = layer.weights.dim();
            writeln!(out, "layer {k} {rows} {cols}").unwrap();
            for row in layer.weights.rows() {
                writeln!(out, "w {}", join(&mut row.iter())).unwrap();
            }
            writeln!(out, "b {}", join(&mut layer.bias.iter())).unwrap();
        }
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut lines = text.lines();
        let mut next = |expect: &str| -> Result<Vec<&str>> {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("unexpected end of file, wanted `{expect}`")))?;
            let mut parts = line.split(' ');
            match parts.next() {
                Some(tag) if tag == expect => Ok(parts.filter(|p| !p.is_empty()).collect()),
                other => Err(bad(format!("expected `{expect}`, found {other:?}"))),
            }
        };
        let magic = next("secgame-mlp")?;
        if magic != ["1"] {
            return Err(bad(format!("unsupported version {magic:?}")));
        }
        let usize_of = |v: &[&str]| -> Result<usize> {
            match v {
                [x] => x.parse().map_err(|e| bad(format!("{x}: {e}"))),
                _ => Err(bad(format!("expected one integer, got {v:?}"))),
            }
        };
        let f64_of = |x: &str| -> Result<f64> { x.parse().map_err(|e| bad(format!("{x}: {e}"))) };
        let input_dim = usize_of(&next("input_dim")?)?;
        let hidden = next("hidden")?
            .iter()
            .map(|h| h.parse().map_err(|e| bad(format!("{h}: {e}"))))
            .collect::<Result<Vec<usize>>>()?;
        let output_dim = usize_of(&next("output_dim")?)?;
        let scalar = |v: Vec<&str>| -> Result<f64> {
            match v.as_slice() {
                [x] => f64_of(x),
                _ => Err(bad(format!("expected one number, got {v:?}"))),
            }
        };
        let input_offset = scalar(next("input_offset")?)?;
        let input_scale = scalar(next("input_scale")?)?;
        let output_scale = scalar(next("output_scale")?)?;
        let spec = MlpSpec::new(input_dim, hidden, output_dim)?;
        let mut model = MlpModel::zeros(spec).with_scaling(input_offset, input_scale, output_scale);
        for k in 0..model.layers.len() {
            let header = next("layer")?;
            let (rows, cols) = model.layers[k].weights.dim();
            if header != [k.to_string(), rows.to_string(), cols.to_string()] {
                return Err(bad(format!("layer {k}: header {header:?} does not match the layer sizes")));
            }
            for r in 0..rows {
                let values = next("w")?;
                if values.len() != cols {
                    return Err(bad(format!("layer {k} row {r}: expected {cols} values")));
                }
                for (c, v) in values.iter().enumerate() {
                    model.layers[k].weights[(r, c)] = f64_of(v)?;
                }
            }
            let values = next("b")?;
            if values.len() != rows {
                return Err(bad(format!("layer {k} bias: expected {rows} values")));
            }
            for (r, v) in values.iter().enumerate() {
                model.layers[k].bias[r] = f64_of(v)?;
            }
        }
        if !model.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }

    /// Evaluates output `states[i]` for input row `i`.
    pub fn values_at(&self, inputs: ArrayView2<'_, f64>, states: &[usize]) -> Vec<f64> {
        let out = self.forward_unchecked(inputs);
        states
            .iter()
            .enumerate()
            .map(|(i, &s)| out[(i, s)])
            .collect()
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl Adam {
    fn new(model: &MlpModel, cfg: &TrainConfig) -> Self {
        let zeros = || {
            model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weights.ncols(), l.weights.nrows()))
                .collect::<Vec<_>>()
        };
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let rate = self.lr * c2.sqrt() / c1;
        let eps = self.eps * c2.sqrt();
        for (((layer, g), m), v) in model
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= rate * *m / (v.sqrt() + eps);
                });
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= rate * *m / (v.sqrt() + eps);
                });
        }
    }
}

/// Row slice helper for callers assembling input batches.
pub(crate) fn row_mut(m: &mut Array2<f64>, r: usize) -> &mut [f64] {
    m.slice_mut(s![r, ..]).into_slice().expect("standard layout")
}
