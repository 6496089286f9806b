//! Minimal dense feed-forward engine: Glorot init, backprop, Adam, and a
//! deterministic mini-batch training loop with learning-curve capture.
//!
//! Everything is `f64` and single-threaded inside one training run, so a
//! fixed (spec, config, data) triple reproduces bit-identical results
//! regardless of how many trainings run in parallel around it.

pub mod metrics;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng_for;

/// Clamp applied to sigmoid outputs so BCE stays finite.
pub const SIGMOID_EPS: f64 = 1e-7;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative given the pre-activation z.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Sigmoid,
    Tanh,
}

impl OutputActivation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Linear => z,
            OutputActivation::Sigmoid => sigmoid_clamped(z),
            OutputActivation::Tanh => z.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            OutputActivation::Linear => 1.0,
            OutputActivation::Sigmoid => {
                let p = 1.0 / (1.0 + (-z).exp());
                if p <= SIGMOID_EPS || p >= 1.0 - SIGMOID_EPS {
                    // clamped region is flat
                    0.0
                } else {
                    p * (1.0 - p)
                }
            }
            OutputActivation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[inline]
pub fn sigmoid_clamped(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS)
}

/// Layer widths from input to output plus activations and learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// `[input, hidden..., output]`; at least `[input, output]`.
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
    pub learning_rate: f64,
}

impl NetSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        hidden_activation: Activation,
        output_activation: OutputActivation,
        learning_rate: f64,
    ) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::ShapeMismatch(
                "need at least input and output widths".into(),
            ));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::ShapeMismatch("layer widths must be >= 1".into()));
        }
        if !(learning_rate > 0.0) {
            return Err(Error::DomainError("learning rate must be > 0".into()));
        }
        Ok(NetSpec {
            layer_widths,
            hidden_activation,
            output_activation,
            learning_rate,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Trainable parameter count: weights plus biases.
    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// One dense layer, weights row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub out_dim: usize,
    pub in_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense {
            out_dim,
            in_dim,
            w: vec![0.0; out_dim * in_dim],
            b: vec![0.0; out_dim],
        }
    }

    pub fn glorot<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..out_dim * in_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Dense {
            out_dim,
            in_dim,
            w,
            b: vec![0.0; out_dim],
        }
    }

    /// z = x W^T + b for a flat row-major batch `x` of `n` rows.
    pub fn affine(&self, x: &[f64], n: usize, out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), n * self.in_dim);
        out.clear();
        out.reserve(n * self.out_dim);
        for r in 0..n {
            let row = &x[r * self.in_dim..(r + 1) * self.in_dim];
            for o in 0..self.out_dim {
                let wo = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.b[o];
                for i in 0..self.in_dim {
                    acc += wo[i] * row[i];
                }
                out.push(acc);
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// All layers of a feed-forward net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<Dense>,
}

impl Params {
    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    /// Flattened view: layer by layer, weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Inverse of [`Params::flatten`]; layer shapes come from `self`.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut off = 0;
        for l in &mut self.layers {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            l.b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }
}

/// Glorot-uniform weights, zero biases, deterministic per seed.
pub fn init_params(spec: &NetSpec, seed: u64) -> Params {
    let mut rng = rng_for(seed, &["init"]);
    let layers = spec
        .layer_widths
        .windows(2)
        .map(|w| Dense::glorot(w[1], w[0], &mut rng))
        .collect();
    Params { layers }
}

/// Forward pass over a flat row-major batch; returns `n x output_dim`.
pub fn forward(spec: &NetSpec, params: &Params, x: &[f64], n: usize) -> Result<Vec<f64>> {
    if x.len() != n * spec.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} values, expected {} rows x {} cols",
            x.len(),
            n,
            spec.input_dim()
        )));
    }
    let cache = forward_cached(spec, params, x, n);
    Ok(cache.output)
}

/// Per-layer activation choice when stacks are composed (multi-task nets
/// end sub-stacks in hidden activations).
#[derive(Debug, Clone, Copy)]
pub enum LayerAct {
    Hidden(Activation),
    Output(OutputActivation),
}

impl LayerAct {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            LayerAct::Hidden(a) => a.apply(z),
            LayerAct::Output(a) => a.apply(z),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            LayerAct::Hidden(a) => a.derivative(z),
            LayerAct::Output(a) => a.derivative(z),
        }
    }
}

/// Per-layer pre-activations and inputs kept for backprop.
pub struct ForwardCache {
    /// Input to each layer (flat batches); `inputs[0]` is the net input.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pub zs: Vec<Vec<f64>>,
    /// Final activated output.
    pub output: Vec<f64>,
}

/// Forward through an arbitrary layer stack with explicit activations.
pub fn stack_forward(layers: &[Dense], acts: &[LayerAct], x: &[f64], n: usize) -> ForwardCache {
    debug_assert_eq!(layers.len(), acts.len());
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut cur = x.to_vec();
    for (layer, act) in layers.iter().zip(acts) {
        let mut z = Vec::new();
        layer.affine(&cur, n, &mut z);
        let a = z.iter().map(|&v| act.apply(v)).collect();
        inputs.push(std::mem::take(&mut cur));
        zs.push(z);
        cur = a;
    }
    ForwardCache {
        inputs,
        zs,
        output: cur,
    }
}

/// Backprop through a stack; returns per-layer gradients and dLoss/dInput.
pub fn stack_backward(
    layers: &[Dense],
    acts: &[LayerAct],
    cache: &ForwardCache,
    dout: &[f64],
    n: usize,
) -> (Vec<Dense>, Vec<f64>) {
    let mut grads: Vec<Dense> = layers
        .iter()
        .map(|l| Dense::zeros(l.out_dim, l.in_dim))
        .collect();
    // dLoss/dA of the current layer's output
    let mut da = dout.to_vec();
    for li in (0..layers.len()).rev() {
        let layer = &layers[li];
        let z = &cache.zs[li];
        // delta = dLoss/dz
        for (d, &zv) in da.iter_mut().zip(z) {
            *d *= acts[li].derivative(zv);
        }
        let delta = &da;

        let input = &cache.inputs[li];
        let g = &mut grads[li];
        for r in 0..n {
            let drow = &delta[r * layer.out_dim..(r + 1) * layer.out_dim];
            let irow = &input[r * layer.in_dim..(r + 1) * layer.in_dim];
            for o in 0..layer.out_dim {
                let d = drow[o];
                g.b[o] += d;
                let grow = &mut g.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grow[i] += d * irow[i];
                }
            }
        }

        let mut dprev = vec![0.0; n * layer.in_dim];
        for r in 0..n {
            let drow = &delta[r * layer.out_dim..(r + 1) * layer.out_dim];
            let prow = &mut dprev[r * layer.in_dim..(r + 1) * layer.in_dim];
            for o in 0..layer.out_dim {
                let d = drow[o];
                let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    prow[i] += d * wrow[i];
                }
            }
        }
        da = dprev;
    }
    (grads, da)
}

/// Activation list for a [`NetSpec`]: hidden everywhere, output last.
pub fn spec_acts(spec: &NetSpec) -> Vec<LayerAct> {
    let n = spec.n_layers();
    (0..n)
        .map(|i| {
            if i + 1 == n {
                LayerAct::Output(spec.output_activation)
            } else {
                LayerAct::Hidden(spec.hidden_activation)
            }
        })
        .collect()
}

pub fn forward_cached(spec: &NetSpec, params: &Params, x: &[f64], n: usize) -> ForwardCache {
    stack_forward(&params.layers, &spec_acts(spec), x, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Bce,
}

/// Mean batch loss.
pub fn loss(kind: LossKind, pred: &[f64], y: &[f64]) -> Result<f64> {
    if pred.len() != y.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "loss over {} predictions vs {} targets",
            pred.len(),
            y.len()
        )));
    }
    match kind {
        LossKind::Mse => Ok(pred
            .iter()
            .zip(y)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / pred.len() as f64),
        LossKind::Bce => {
            for (&p, &t) in pred.iter().zip(y) {
                if t != 0.0 && t != 1.0 {
                    return Err(Error::DomainError(format!("BCE target {t} not in {{0,1}}")));
                }
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::DomainError(format!("BCE prediction {p} not in (0,1)")));
                }
            }
            Ok(-pred
                .iter()
                .zip(y)
                .map(|(&p, &t)| t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                .sum::<f64>()
                / pred.len() as f64)
        }
    }
}

/// dLoss/dPred of the mean batch loss.
fn loss_grad(kind: LossKind, pred: &[f64], y: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    match kind {
        LossKind::Mse => pred
            .iter()
            .zip(y)
            .map(|(p, t)| 2.0 * (p - t) / n)
            .collect(),
        LossKind::Bce => pred
            .iter()
            .zip(y)
            .map(|(&p, &t)| (-t / p + (1.0 - t) / (1.0 - p)) / n)
            .collect(),
    }
}

/// Exact gradient of the mean batch loss with respect to every parameter.
pub fn grad(
    spec: &NetSpec,
    params: &Params,
    x: &[f64],
    y: &[f64],
    n: usize,
    kind: LossKind,
) -> Result<Params> {
    if y.len() != n * spec.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} rows x {} outputs",
            y.len(),
            n,
            spec.output_dim()
        )));
    }
    if n == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let cache = forward_cached(spec, params, x, n);
    let dpred = loss_grad(kind, &cache.output, y);
    Ok(backward(spec, params, &cache, &dpred, n))
}

/// Backprop from dLoss/dOutput through all layers.
pub fn backward(
    spec: &NetSpec,
    params: &Params,
    cache: &ForwardCache,
    dpred: &[f64],
    n: usize,
) -> Params {
    let (grads, _) = backward_with_input_grad(spec, params, cache, dpred, n);
    grads
}

/// Backprop that also returns dLoss/dInput, needed when stacking nets
/// (multi-task trunks).
pub fn backward_with_input_grad(
    spec: &NetSpec,
    params: &Params,
    cache: &ForwardCache,
    dpred: &[f64],
    n: usize,
) -> (Params, Vec<f64>) {
    let (layers, dx) = stack_backward(&params.layers, &spec_acts(spec), cache, dpred, n);
    (Params { layers }, dx)
}

/// Adam moment buffers, shaped like the parameters they update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One bias-corrected Adam update over a flat parameter vector.
    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64], alpha: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let b2t = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= alpha * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// Adam step over structured parameters.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, alpha: f64) {
    let mut flat = params.flatten();
    let gflat = grads.flatten();
    state.step_flat(&mut flat, &gflat, alpha);
    params.assign_flat(&flat);
}

/// Training-loop configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Rows per mini-batch; `None` picks `clamp(n/16, 8, 128)`.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub loss_kind: LossKind,
    /// Fractions of total steps at which the validation loss is recorded.
    pub curve_checkpoints: Vec<f64>,
}

pub const DEFAULT_CHECKPOINTS: [f64; 6] = [0.1, 0.2, 0.3, 0.5, 0.7, 1.0];

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64, loss_kind: LossKind) -> Self {
        TrainConfig {
            epochs,
            batch_size: None,
            seed,
            loss_kind,
            curve_checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::DomainError("epochs must be >= 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::DomainError("batch size must be >= 1".into()));
        }
        if self
            .curve_checkpoints
            .iter()
            .any(|&f| !(f > 0.0 && f <= 1.0))
        {
            return Err(Error::DomainError("checkpoints must lie in (0,1]".into()));
        }
        Ok(())
    }

    pub fn resolve_batch(&self, n_train: usize) -> usize {
        self.batch_size
            .unwrap_or_else(|| default_batch_size(n_train))
            .min(n_train.max(1))
    }
}

/// Sample-size-dependent batch size: `clamp(n/16, 8, 128)`.
pub fn default_batch_size(n_train: usize) -> usize {
    (n_train / 16).clamp(8, 128)
}

/// Validation losses at increasing fractions of the training run, always
/// ending at 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<(f64, f64)>,
}

impl LearningCurve {
    pub fn loss_at(&self, fraction: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|(f, _)| (f - fraction).abs() < 1e-12)
            .map(|&(_, l)| l)
    }

    pub fn final_loss(&self) -> f64 {
        self.points.last().map(|&(_, l)| l).unwrap_or(f64::NAN)
    }
}

pub struct TrainOutput {
    pub params: Params,
    pub curve: LearningCurve,
    pub final_val_loss: f64,
}

/// Flat row-major dataset view for the trainer.
pub struct DataRef<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub n: usize,
}

impl<'a> DataRef<'a> {
    pub fn new(x: &'a [f64], y: &'a [f64], n: usize) -> Self {
        DataRef { x, y, n }
    }
}

/// Flattens a row-per-sample matrix into the trainer layout.
pub fn flatten_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * rows.first().map_or(0, Vec::len));
    for r in rows {
        out.extend_from_slice(r);
    }
    out
}

/// Mini-batch Adam over the full epoch budget; validation loss recorded at
/// each curve checkpoint and at the end.
pub fn train(
    spec: &NetSpec,
    config: &TrainConfig,
    train_data: DataRef<'_>,
    val_data: DataRef<'_>,
) -> Result<TrainOutput> {
    train_with_init(spec, config, None, train_data, val_data)
}

/// Like [`train`] but optionally warm-starting from existing parameters.
pub fn train_with_init(
    spec: &NetSpec,
    config: &TrainConfig,
    init: Option<Params>,
    train_data: DataRef<'_>,
    val_data: DataRef<'_>,
) -> Result<TrainOutput> {
    config.validate()?;
    if train_data.n == 0 || val_data.n == 0 {
        return Err(Error::ShapeMismatch("empty train or validation split".into()));
    }
    let d = spec.input_dim();
    let batch = config.resolve_batch(train_data.n);
    let steps_per_epoch = train_data.n.div_ceil(batch);
    let total_steps = config.epochs * steps_per_epoch;

    // map each checkpoint fraction to the step after which it is recorded
    let mut checkpoints: Vec<(f64, usize)> = config
        .curve_checkpoints
        .iter()
        .map(|&f| (f, ((f * total_steps as f64).ceil() as usize).max(1)))
        .collect();
    if !checkpoints.iter().any(|&(f, _)| f == 1.0) {
        checkpoints.push((1.0, total_steps));
    }
    checkpoints.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut params = init.unwrap_or_else(|| init_params(spec, config.seed));
    let mut adam = AdamState::new(params.n_params());
    let mut rng = rng_for(config.seed, &["shuffle"]);
    let mut order: Vec<usize> = (0..train_data.n).collect();

    let val_loss = |params: &Params| -> Result<f64> {
        let pred = forward(spec, params, val_data.x, val_data.n)?;
        loss(config.loss_kind, &pred, val_data.y)
    };

    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(checkpoints.len());
    let mut step = 0usize;
    let mut bx: Vec<f64> = Vec::with_capacity(batch * d);
    let mut by: Vec<f64> = Vec::with_capacity(batch);
    'epochs: for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(&train_data.x[i * d..(i + 1) * d]);
                by.push(train_data.y[i]);
            }
            let g = grad(spec, &params, &bx, &by, chunk.len(), config.loss_kind)?;
            adam_step(&mut params, &g, &mut adam, spec.learning_rate);
            step += 1;

            for &(f, at) in &checkpoints {
                if at == step {
                    let l = val_loss(&params)?;
                    if !l.is_finite() {
                        return Err(Error::NumericalDivergence { step });
                    }
                    curve.push((f, l));
                }
            }
            if step == total_steps {
                break 'epochs;
            }
        }
    }

    let final_val_loss = curve.last().map(|&(_, l)| l).unwrap();
    Ok(TrainOutput {
        params,
        curve: LearningCurve { points: curve },
        final_val_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(widths: Vec<usize>) -> NetSpec {
        NetSpec::new(widths, Activation::Tanh, OutputActivation::Linear, 0.01).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_bounded_weights() {
        let spec = tiny_spec(vec![4, 3, 1]);
        let p1 = init_params(&spec, 42);
        let p2 = init_params(&spec, 42);
        assert_eq!(p1, p2);
        assert_ne!(p1, init_params(&spec, 43));
        let bound = (6.0f64 / 7.0).sqrt();
        assert!((bound - 0.9258).abs() < 1e-4);
        for l in &p1.layers {
            assert!(l.b.iter().all(|&b| b == 0.0));
        }
        for &w in &p1.layers[0].w {
            assert!(w.abs() <= bound);
        }
    }

    #[test]
    fn forward_identity_layer_returns_input() {
        let spec = tiny_spec(vec![2, 2]);
        let mut params = init_params(&spec, 0);
        params.layers[0].w = vec![1.0, 0.0, 0.0, 1.0];
        params.layers[0].b = vec![0.0, 0.0];
        let x = vec![0.5, -1.5, 2.0, 3.0];
        let out = forward(&spec, &params, &x, 2).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn forward_zero_weight_sigmoid_gives_half() {
        let spec = NetSpec::new(vec![3, 1], Activation::Relu, OutputActivation::Sigmoid, 0.1)
            .unwrap();
        let params = Params {
            layers: vec![Dense::zeros(1, 3)],
        };
        let out = forward(&spec, &params, &[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(out, vec![0.5]);
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        assert_eq!(Activation::Relu.apply(-3.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
    }

    #[test]
    fn forward_rejects_bad_shape() {
        let spec = tiny_spec(vec![3, 1]);
        let params = init_params(&spec, 0);
        assert!(matches!(
            forward(&spec, &params, &[1.0, 2.0], 1),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn loss_values() {
        assert_eq!(loss(LossKind::Mse, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss(LossKind::Mse, &[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
        let bce = loss(LossKind::Bce, &[0.5, 0.5], &[0.0, 1.0]).unwrap();
        assert!((bce - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss(LossKind::Bce, &[0.5], &[0.3]).is_err());
        assert!(loss(LossKind::Bce, &[1.5], &[1.0]).is_err());
        assert!(loss(LossKind::Mse, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bce_is_finite_for_extreme_logits() {
        let spec = NetSpec::new(vec![1, 1], Activation::Tanh, OutputActivation::Sigmoid, 0.1)
            .unwrap();
        let mut params = init_params(&spec, 0);
        params.layers[0].w = vec![1000.0];
        let out = forward(&spec, &params, &[100.0], 1).unwrap();
        let l = loss(LossKind::Bce, &out, &[0.0]).unwrap();
        assert!(l.is_finite());
    }

    #[test]
    fn zero_loss_batch_has_zero_gradient() {
        // single linear layer, pred == y
        let spec = tiny_spec(vec![2, 1]);
        let mut params = init_params(&spec, 1);
        params.layers[0].w = vec![1.0, 1.0];
        params.layers[0].b = vec![0.0];
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = vec![3.0, 7.0];
        let g = grad(&spec, &params, &x, &y, 2, LossKind::Mse).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let spec = tiny_spec(vec![3, 4, 1]);
        let params = init_params(&spec, 5);
        let x = vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6];
        let y = vec![1.0, -1.0];
        let g1 = grad(&spec, &params, &x, &y, 2, LossKind::Mse).unwrap();
        let xx = [x.clone(), x.clone()].concat();
        let yy = [y.clone(), y.clone()].concat();
        let g2 = grad(&spec, &params, &xx, &yy, 4, LossKind::Mse).unwrap();
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Central-difference oracle over every parameter.
    fn finite_diff_check(spec: &NetSpec, kind: LossKind, seed: u64) -> f64 {
        use rand::Rng;
        let mut rng = rng_for(seed, &["fd"]);
        let n = 5;
        let x: Vec<f64> = (0..n * spec.input_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let y: Vec<f64> = (0..n * spec.output_dim())
            .map(|_| match kind {
                LossKind::Mse => rng.random_range(-1.0..1.0),
                LossKind::Bce => {
                    if rng.random::<f64>() < 0.5 {
                        0.0
                    } else {
                        1.0
                    }
                }
            })
            .collect();
        let params = init_params(spec, seed);
        let analytic = grad(spec, &params, &x, &y, n, kind).unwrap().flatten();
        let flat = params.flatten();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..flat.len() {
            let mut p = params.clone();
            let mut f = flat.clone();
            f[i] += h;
            p.assign_flat(&f);
            let lp = loss(kind, &forward(spec, &p, &x, n).unwrap(), &y).unwrap();
            f[i] -= 2.0 * h;
            p.assign_flat(&f);
            let lm = loss(kind, &forward(spec, &p, &x, n).unwrap(), &y).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((analytic[i] - fd).abs() / denom);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = NetSpec::new(
            vec![4, 6, 5, 1],
            Activation::Tanh,
            OutputActivation::Linear,
            0.01,
        )
        .unwrap();
        assert!(finite_diff_check(&spec, LossKind::Mse, 3) <= 1e-4);
        let spec = NetSpec::new(
            vec![3, 8, 1],
            Activation::Relu,
            OutputActivation::Sigmoid,
            0.01,
        )
        .unwrap();
        assert!(finite_diff_check(&spec, LossKind::Bce, 4) <= 1e-4);
    }

    #[test]
    fn adam_first_step_moves_by_alpha() {
        // scalar p=0, g=1, t=1, hand-evaluated:
        //   m = 0.1, m_hat = 1; v = 0.001, v_hat = 1
        //   step = alpha * 1 / (sqrt(1) + eps) = alpha / (1 + 1e-8)
        // i.e. exactly alpha up to the epsilon guard
        let mut state = AdamState::new(1);
        let mut p = [0.0];
        let alpha = 0.05;
        state.step_flat(&mut p, &[1.0], alpha);
        let expected = -alpha / (1.0 + ADAM_EPS);
        assert!((p[0] - expected).abs() < 1e-12, "step {}", p[0]);
        assert!((p[0] + alpha).abs() < 1e-8);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut state = AdamState::new(2);
        let mut p = [1.5, -2.0];
        for _ in 0..10 {
            state.step_flat(&mut p, &[0.0, 0.0], 0.1);
        }
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn adam_trajectories_are_reproducible() {
        let run = || {
            let mut state = AdamState::new(3);
            let mut p = [0.1, 0.2, 0.3];
            for i in 0..50 {
                let g = [(i as f64).sin(), 0.5, -0.25];
                state.step_flat(&mut p, &g, 0.01);
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn train_descends_on_separable_data() {
        // two clusters on a line, BCE
        let spec = NetSpec::new(
            vec![1, 4, 1],
            Activation::Tanh,
            OutputActivation::Sigmoid,
            0.05,
        )
        .unwrap();
        let x: Vec<f64> = (0..20)
            .map(|i| if i < 10 { -1.0 - 0.05 * i as f64 } else { 1.0 + 0.05 * i as f64 })
            .collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 1.0 }).collect();
        let cfg = TrainConfig::new(30, 7, LossKind::Bce);
        let out = train(
            &spec,
            &cfg,
            DataRef::new(&x, &y, 20),
            DataRef::new(&x, &y, 20),
        )
        .unwrap();
        let first = out.curve.points.first().unwrap().1;
        assert!(out.final_val_loss < first);
        assert_eq!(out.curve.points.last().unwrap().0, 1.0);
    }

    #[test]
    fn train_rejects_zero_epochs() {
        let spec = tiny_spec(vec![1, 1]);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::new(1, 0, LossKind::Mse)
        };
        let x = [0.0, 1.0];
        let y = [0.0, 1.0];
        assert!(train(
            &spec,
            &cfg,
            DataRef::new(&x, &y, 2),
            DataRef::new(&x, &y, 2)
        )
        .is_err());
    }

    #[test]
    fn train_is_deterministic() {
        let spec = tiny_spec(vec![2, 5, 1]);
        let x: Vec<f64> = (0..40).map(|i| (i as f64) * 0.1).collect();
        let y: Vec<f64> = (0..20).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let cfg = TrainConfig::new(10, 99, LossKind::Mse);
        let a = train(
            &spec,
            &cfg,
            DataRef::new(&x, &y, 20),
            DataRef::new(&x, &y, 20),
        )
        .unwrap();
        let b = train(
            &spec,
            &cfg,
            DataRef::new(&x, &y, 20),
            DataRef::new(&x, &y, 20),
        )
        .unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.final_val_loss, b.final_val_loss);
    }

    #[test]
    fn flatten_roundtrip() {
        let spec = tiny_spec(vec![3, 4, 2]);
        let params = init_params(&spec, 11);
        let mut other = init_params(&spec, 12);
        other.assign_flat(&params.flatten());
        assert_eq!(params, other);
    }
}
