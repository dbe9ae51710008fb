//! A small dense classifier over flat weight vectors.
//!
//! Concept matching never looks inside a model: clustering, averaging and
//! distance all operate on [`WeightVector::values`]. This module supplies the
//! pieces that do need the network structure: He-uniform initialisation, a
//! ReLU/softmax forward pass, mean cross-entropy, its analytic gradient, and an
//! Adam training loop with holdout early stopping.
//!
//! Layout of the flat vector: for each layer in order, the `fan_in x fan_out`
//! weight matrix (row-major) followed by the `fan_out` biases.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl LayerShape {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        let shape = LayerShape {
            input_dim,
            hidden_dims,
            output_dim,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each dense layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Same shape with every hidden width multiplied by `1 + scale`
    /// (rounded, at least 1).
    pub fn scaled(&self, scale: f64) -> LayerShape {
        LayerShape {
            input_dim: self.input_dim,
            hidden_dims: self
                .hidden_dims
                .iter()
                .map(|&h| ((h as f64 * (1.0 + scale)).round() as usize).max(1))
                .collect(),
            output_dim: self.output_dim,
        }
    }

    fn offsets(&self) -> Vec<LayerOffsets> {
        let mut at = 0;
        self.layers()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let off = LayerOffsets {
                    fan_in,
                    fan_out,
                    weights: at,
                    biases: at + fan_in * fan_out,
                };
                at += fan_in * fan_out + fan_out;
                off
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
}

impl LayerOffsets {
    fn weights<'a>(&self, values: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.fan_in, self.fan_out),
            &values[self.weights..self.biases],
        )
        .expect("offsets derived from shape")
    }

    fn biases<'a>(&self, values: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&values[self.biases..self.biases + self.fan_out])
    }
}

/// Flattened model parameters together with the shape they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    shape: LayerShape,
    values: Vec<f64>,
}

impl WeightVector {
    pub fn new(shape: LayerShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        let expected = shape.parameter_count();
        if values.len() != expected {
            return Err(Error::shape(
                format!("{expected} parameters"),
                format!("{} values", values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(WeightVector { shape, values })
    }

    pub fn zeros(shape: LayerShape) -> Result<Self> {
        let n = shape.parameter_count();
        Self::new(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Replaces the values, keeping the shape. Used by code that has already
    /// checked the length (optimizer steps, averaging).
    pub(crate) fn from_parts_unchecked(shape: LayerShape, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.parameter_count());
        WeightVector { shape, values }
    }

    pub(crate) fn ensure_same_shape(&self, other: &WeightVector) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        Ok(())
    }
}

impl AsRef<[f64]> for WeightVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Labeled samples: one row of `inputs` per label.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Array2<f64>,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::shape(
                format!("{} input rows", labels.len()),
                format!("{} rows", inputs.nrows()),
            ));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows at `indices`, in that order. Panics on an out-of-range index.
    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat(parts: &[Batch]) -> Result<Batch> {
        let first = parts.first().ok_or(Error::Empty("batch list"))?;
        let views: Vec<_> = parts.iter().map(|b| b.inputs.view()).collect();
        let inputs = ndarray::concatenate(Axis(0), &views).map_err(|_| {
            Error::shape(
                format!("{} columns", first.input_dim()),
                "batches with differing widths",
            )
        })?;
        let labels = parts.iter().flat_map(|b| b.labels.iter().copied()).collect();
        Batch::new(inputs, labels)
    }

    fn check_against(&self, shape: &LayerShape) -> Result<()> {
        if self.input_dim() != shape.input_dim {
            return Err(Error::shape(
                format!("{} input columns", shape.input_dim),
                format!("{} columns", self.input_dim()),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= shape.output_dim) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {})",
                shape.output_dim
            )));
        }
        Ok(())
    }
}

/// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
pub fn init_weights(shape: &LayerShape, seed: u64) -> Result<WeightVector> {
    shape.validate()?;
    let mut rng = rng::rng_for(seed, &[rng::TAG_INIT]);
    let mut values = vec![0.0; shape.parameter_count()];
    for layer in shape.offsets() {
        let bound = (6.0 / layer.fan_in as f64).sqrt();
        for v in &mut values[layer.weights..layer.biases] {
            *v = rng.random_range(-bound..bound);
        }
    }
    WeightVector::new(shape.clone(), values)
}

struct ForwardPass {
    /// Pre-activations of each hidden layer.
    hidden_pre: Vec<Array2<f64>>,
    /// Input followed by each hidden activation; `activations[l]` feeds layer `l`.
    activations: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

fn run_forward(w: &WeightVector, inputs: &Array2<f64>) -> Result<ForwardPass> {
    if inputs.ncols() != w.shape.input_dim {
        return Err(Error::shape(
            format!("{} input columns", w.shape.input_dim),
            format!("{} columns", inputs.ncols()),
        ));
    }
    let offsets = w.shape.offsets();
    let last = offsets.len() - 1;
    let mut hidden_pre = Vec::with_capacity(last);
    let mut activations = Vec::with_capacity(offsets.len());
    activations.push(inputs.to_owned());
    let mut logits = None;
    for (l, layer) in offsets.iter().enumerate() {
        let z = activations[l].dot(&layer.weights(&w.values)) + &layer.biases(&w.values);
        if l == last {
            logits = Some(z);
        } else {
            activations.push(z.mapv(|v| v.max(0.0)));
            hidden_pre.push(z);
        }
    }
    let mut probs = logits.expect("at least one layer");
    for mut row in probs.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    Ok(ForwardPass {
        hidden_pre,
        activations,
        probs,
    })
}

/// Class probabilities, one row per input row.
pub fn forward(w: &WeightVector, inputs: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(run_forward(w, inputs)?.probs)
}

fn mean_cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[[i, y]].max(PROB_FLOOR).ln())
        .sum();
    total / labels.len() as f64
}

/// Mean cross-entropy over the batch.
pub fn loss(w: &WeightVector, batch: &Batch) -> Result<f64> {
    batch.check_against(&w.shape)?;
    let probs = forward(w, &batch.inputs)?;
    Ok(mean_cross_entropy(&probs, &batch.labels))
}

fn backward(w: &WeightVector, batch: &Batch, pass: &ForwardPass) -> Vec<f64> {
    let n = batch.len() as f64;
    let offsets = w.shape.offsets();
    let mut grad = vec![0.0; w.values.len()];

    // d(mean CE)/d(logits) = (p - onehot(y)) / n
    let mut delta = pass.probs.clone();
    for (i, &y) in batch.labels.iter().enumerate() {
        delta[[i, y]] -= 1.0;
    }
    delta /= n;

    for (l, layer) in offsets.iter().enumerate().rev() {
        let dw = pass.activations[l].t().dot(&delta);
        let db: Array1<f64> = delta.sum_axis(Axis(0));
        grad[layer.weights..layer.biases].copy_from_slice(
            dw.as_standard_layout()
                .as_slice()
                .expect("standard layout"),
        );
        grad[layer.biases..layer.biases + layer.fan_out]
            .copy_from_slice(db.as_slice().expect("contiguous"));
        if l > 0 {
            let mut upstream = delta.dot(&layer.weights(&w.values).t());
            upstream.zip_mut_with(&pass.hidden_pre[l - 1], |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            delta = upstream;
        }
    }
    grad
}

/// Analytic gradient of [`loss`] (the probability floor is ignored; it only
/// matters for probabilities below 1e-12).
pub fn gradient(w: &WeightVector, batch: &Batch) -> Result<WeightVector> {
    batch.check_against(&w.shape)?;
    let pass = run_forward(w, &batch.inputs)?;
    let grad = backward(w, batch, &pass);
    WeightVector::new(w.shape.clone(), grad)
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(w: &WeightVector, batch: &Batch) -> Result<f64> {
    batch.check_against(&w.shape)?;
    let probs = forward(w, &batch.inputs)?;
    let correct = probs
        .rows()
        .into_iter()
        .zip(&batch.labels)
        .filter(|(row, &y)| argmax(row.as_slice().expect("row-major")) == y)
        .count();
    Ok(correct as f64 / batch.len() as f64)
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Adam state. One instance is kept per client for the whole run, across
/// every concept model that client fine-tunes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self::with_betas(len, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(len: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// Applies one bias-corrected Adam update to `w` in place.
    pub fn step(&mut self, w: &mut [f64], grad: &[f64]) -> Result<()> {
        if w.len() != self.first_moment.len() || grad.len() != w.len() {
            return Err(Error::shape(
                format!("{} optimizer slots", self.first_moment.len()),
                format!("{} weights / {} gradients", w.len(), grad.len()),
            ));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..w.len() {
            let g = grad[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            w[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub patience: usize,
    pub holdout_fraction: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 15,
            minibatch_size: 64,
            patience: 3,
            holdout_fraction: 0.1,
        }
    }
}

/// Fine-tunes `w` on `data` with Adam over shuffled minibatches.
///
/// A seeded `holdout_fraction` of the data (at least one sample) is held out;
/// training stops once the holdout loss has not improved for `patience`
/// consecutive epochs, and the weights from the best holdout epoch are
/// returned. The optimizer state is returned as it stands after the last
/// applied step.
pub fn train(
    w: &WeightVector,
    data: &Batch,
    mut opt: AdamState,
    params: &TrainParams,
    seed: u64,
) -> Result<(WeightVector, AdamState)> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if params.epochs == 0 || params.minibatch_size == 0 {
        return Err(Error::InvalidArgument(
            "epochs and minibatch_size must be at least 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&params.holdout_fraction) {
        return Err(Error::InvalidArgument(format!(
            "holdout_fraction {} outside [0, 1)",
            params.holdout_fraction
        )));
    }
    data.check_against(&w.shape)?;
    if opt.first_moment.len() != w.len() {
        return Err(Error::shape(
            format!("{} optimizer slots", w.len()),
            format!("{}", opt.first_moment.len()),
        ));
    }

    let mut rng = rng::rng_for(seed, &[rng::TAG_TRAIN]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let (train_idx, holdout_idx) = if data.len() == 1 {
        (order.clone(), order)
    } else {
        let n_hold = ((data.len() as f64 * params.holdout_fraction).round() as usize)
            .clamp(1, data.len() - 1);
        let holdout = order.split_off(data.len() - n_hold);
        (order, holdout)
    };
    let holdout = data.select(&holdout_idx);

    let mut current = w.values.clone();
    let mut best = current.clone();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;
    let mut shuffled = train_idx;
    for _ in 0..params.epochs {
        shuffled.shuffle(&mut rng);
        for chunk in shuffled.chunks(params.minibatch_size) {
            let mb = data.select(chunk);
            let model = WeightVector::from_parts_unchecked(w.shape.clone(), current);
            let pass = run_forward(&model, &mb.inputs)?;
            let grad = backward(&model, &mb, &pass);
            current = model.values;
            opt.step(&mut current, &grad)?;
        }
        let model = WeightVector::from_parts_unchecked(w.shape.clone(), current);
        let holdout_loss = mean_cross_entropy(&forward(&model, &holdout.inputs)?, &holdout.labels);
        current = model.values;
        if holdout_loss < best_loss {
            best_loss = holdout_loss;
            best.clone_from(&current);
            stale = 0;
        } else {
            stale += 1;
            if stale >= params.patience {
                break;
            }
        }
    }
    Ok((WeightVector::new(w.shape.clone(), best)?, opt))
}
