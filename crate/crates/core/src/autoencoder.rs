//! Fully connected encoder/decoder trained by backpropagation.
//!
//! Parameters live in one flat buffer: encoder layers first, then decoder
//! layers, each stored as a row-major `out x in` weight block followed by its
//! bias. Optimizers, freezing and gradient checks all work on ranges of that
//! buffer.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, out: T) -> T {
        match self {
            Activation::Relu => {
                if out > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - out * out,
        }
    }
}

/// Encoder widths `[d, h1, ..., latent]`; the decoder mirrors them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = Self { sizes, activation };
        spec.validate()?;
        Ok(spec)
    }

    /// `d - 256 - 64 - 10` with relu hidden units.
    pub fn default_for(input_dim: usize) -> Result<Self> {
        Self::new(vec![input_dim, 256, 64, 10], Activation::Relu)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "layer spec needs at least input and latent sizes".into(),
            ));
        }
        if self.sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        if self.latent_dim() >= self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "latent size {} must be smaller than input size {}",
                self.latent_dim(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn latent_dim(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    /// `(fan_in, fan_out)` of every layer, encoder then decoder.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let enc = self.sizes.windows(2).map(|w| (w[0], w[1]));
        let dec = self.sizes.windows(2).rev().map(|w| (w[1], w[0]));
        enc.chain(dec).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerShape {
    fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn bias(&self) -> Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    fn len(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }
}

fn layout(spec: &LayerSpec) -> (Vec<LayerShape>, usize) {
    let mut offset = 0;
    let shapes = spec
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let s = LayerShape {
                fan_in,
                fan_out,
                offset,
            };
            offset += s.len();
            s
        })
        .collect();
    (shapes, offset)
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct ParamsRepr<T> {
    spec: LayerSpec,
    values: Vec<T>,
}

/// Encoder and decoder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "ParamsRepr<T>", into = "ParamsRepr<T>")]
pub struct MlpParams<T> {
    spec: LayerSpec,
    layers: Vec<LayerShape>,
    values: Vec<T>,
}

impl<T: Scalar> TryFrom<ParamsRepr<T>> for MlpParams<T> {
    type Error = Error;

    fn try_from(r: ParamsRepr<T>) -> Result<Self> {
        Self::from_flat(r.spec, r.values)
    }
}

impl<T: Scalar> From<MlpParams<T>> for ParamsRepr<T> {
    fn from(p: MlpParams<T>) -> Self {
        ParamsRepr {
            spec: p.spec,
            values: p.values,
        }
    }
}

/// Activations of every layer for one sample, input first.
type Trace<T> = Vec<Vec<T>>;

impl<T: Scalar> MlpParams<T> {
    pub fn zeros(spec: LayerSpec) -> Result<Self> {
        spec.validate()?;
        let (layers, total) = layout(&spec);
        Ok(Self {
            spec,
            layers,
            values: vec![T::zero(); total],
        })
    }

    pub fn from_flat(spec: LayerSpec, values: Vec<T>) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        if values.len() != p.values.len() {
            return Err(Error::Shape(format!(
                "{} parameter values supplied, spec needs {}",
                values.len(),
                p.values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim()
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    fn n_encoder_layers(&self) -> usize {
        self.spec.sizes.len() - 1
    }

    /// Range of the flat buffer holding encoder parameters.
    pub fn encoder_range(&self) -> Range<usize> {
        0..self.layers[self.n_encoder_layers()].offset
    }

    /// Range of the flat buffer holding decoder parameters.
    pub fn decoder_range(&self) -> Range<usize> {
        self.layers[self.n_encoder_layers()].offset..self.values.len()
    }

    fn encoder_layers(&self) -> &[LayerShape] {
        &self.layers[..self.n_encoder_layers()]
    }

    fn decoder_layers(&self) -> &[LayerShape] {
        &self.layers[self.n_encoder_layers()..]
    }

    /// Named `(weights, bias)` tensors, encoder layers first.
    pub fn named_tensors(&self) -> Vec<(String, Matrix<T>, Vec<T>)> {
        let ne = self.n_encoder_layers();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let name = if i < ne {
                    format!("encoder.{i}")
                } else {
                    format!("decoder.{}", i - ne)
                };
                let w = Matrix::from_vec(l.fan_out, l.fan_in, self.values[l.weights()].to_vec())
                    .expect("layout");
                (name, w, self.values[l.bias()].to_vec())
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_input(&self, len: usize, expected: usize, what: &str) -> Result<()> {
        if len != expected {
            return Err(Error::Shape(format!(
                "{what} input has dimension {len}, expected {expected}"
            )));
        }
        Ok(())
    }

    fn forward_stack(&self, layers: &[LayerShape], params: &[T], x: &[T], trace: Option<&mut Trace<T>>) -> Vec<T> {
        let last = layers.len() - 1;
        let mut cur = x.to_vec();
        let mut trace = trace;
        if let Some(t) = trace.as_deref_mut() {
            t.clear();
            t.push(cur.clone());
        }
        for (li, l) in layers.iter().enumerate() {
            let w = &params[l.weights()];
            let b = &params[l.bias()];
            let mut out = Vec::with_capacity(l.fan_out);
            for o in 0..l.fan_out {
                let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(&cur) {
                    acc += *wi * *xi;
                }
                out.push(if li == last {
                    acc
                } else {
                    self.spec.activation.apply(acc)
                });
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(out.clone());
            }
            cur = out;
        }
        cur
    }

    /// Accumulates parameter gradients of a stack into `grad` and returns
    /// the gradient with respect to the stack input.
    fn backward_stack(
        &self,
        layers: &[LayerShape],
        params: &[T],
        trace: &Trace<T>,
        grad_out: &[T],
        grad: &mut [T],
        need_input_grad: bool,
    ) -> Vec<T> {
        let last = layers.len() - 1;
        let mut g = grad_out.to_vec();
        for li in (0..layers.len()).rev() {
            let l = &layers[li];
            if li != last {
                for (gi, &out) in g.iter_mut().zip(&trace[li + 1]) {
                    *gi *= self.spec.activation.derivative_from_output(out);
                }
            }
            let input = &trace[li];
            let w_range = l.weights();
            {
                let gw = &mut grad[w_range.clone()];
                for o in 0..l.fan_out {
                    let go = g[o];
                    if go == T::zero() {
                        continue;
                    }
                    let row = &mut gw[o * l.fan_in..(o + 1) * l.fan_in];
                    for (r, &a) in row.iter_mut().zip(input) {
                        *r += go * a;
                    }
                }
            }
            for (gb, &go) in grad[l.bias()].iter_mut().zip(&g) {
                *gb += go;
            }
            if li == 0 && !need_input_grad {
                return Vec::new();
            }
            let w = &params[w_range];
            let mut g_in = vec![T::zero(); l.fan_in];
            for o in 0..l.fan_out {
                let go = g[o];
                if go == T::zero() {
                    continue;
                }
                let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                for (gi, &wi) in g_in.iter_mut().zip(row) {
                    *gi += wi * go;
                }
            }
            g = g_in;
        }
        g
    }

    pub fn encode_row(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x.len(), self.input_dim(), "encoder")?;
        Ok(self.forward_stack(self.encoder_layers(), &self.values, x, None))
    }

    pub fn decode_row(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_input(z.len(), self.latent_dim(), "decoder")?;
        Ok(self.forward_stack(self.decoder_layers(), &self.values, z, None))
    }

    /// Row-wise encoding of an `n x d` matrix.
    pub fn encode(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x.cols(), self.input_dim(), "encoder")?;
        let mut out = Matrix::zeros(x.rows(), self.latent_dim());
        for (i, r) in x.iter_rows().enumerate() {
            let z = self.forward_stack(self.encoder_layers(), &self.values, r, None);
            out.row_mut(i).copy_from_slice(&z);
        }
        Ok(out)
    }

    /// Row-wise decoding of an `n x latent` matrix.
    pub fn decode(&self, z: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(z.cols(), self.latent_dim(), "decoder")?;
        let mut out = Matrix::zeros(z.rows(), self.input_dim());
        for (i, r) in z.iter_rows().enumerate() {
            let x = self.forward_stack(self.decoder_layers(), &self.values, r, None);
            out.row_mut(i).copy_from_slice(&x);
        }
        Ok(out)
    }

    pub fn reconstruct(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.decode(&self.encode(x)?)
    }

    pub(crate) fn encode_traced(&self, params: &[T], x: &[T], trace: &mut Trace<T>) -> Vec<T> {
        self.forward_stack(self.encoder_layers(), params, x, Some(trace))
    }

    pub(crate) fn encoder_backward(&self, params: &[T], trace: &Trace<T>, grad_latent: &[T], grad: &mut [T]) {
        self.backward_stack(self.encoder_layers(), params, trace, grad_latent, grad, false);
    }

    /// Mean reconstruction loss over `rows` and, when `grad` is given, its
    /// gradient accumulated over parameters. Encoder gradients are skipped
    /// when `train_encoder` is false.
    pub(crate) fn reconstruction_loss(
        &self,
        params: &[T],
        x: &Matrix<T>,
        rows: &[usize],
        mut grad: Option<&mut [T]>,
        train_encoder: bool,
    ) -> T {
        let d = x.cols();
        let scale = T::one() / (T::of_usize(d) * T::of_usize(rows.len().max(1)));
        let mut enc_trace = Trace::new();
        let mut dec_trace = Trace::new();
        let mut total = T::zero();
        for &i in rows {
            let xi = x.row(i);
            let z = if train_encoder && grad.is_some() {
                self.forward_stack(self.encoder_layers(), params, xi, Some(&mut enc_trace))
            } else {
                self.forward_stack(self.encoder_layers(), params, xi, None)
            };
            let with_grad = grad.is_some();
            let xhat = self.forward_stack(
                self.decoder_layers(),
                params,
                &z,
                with_grad.then_some(&mut dec_trace),
            );
            let mut err = T::zero();
            let mut g_out = Vec::with_capacity(d);
            for (&a, &b) in xhat.iter().zip(xi) {
                let diff = a - b;
                err += diff * diff;
                g_out.push(T::of(2.0) * diff * scale);
            }
            total += err * scale;
            if let Some(g) = grad.as_deref_mut() {
                let g_z = self.backward_stack(
                    self.decoder_layers(),
                    params,
                    &dec_trace,
                    &g_out,
                    g,
                    train_encoder,
                );
                if train_encoder {
                    self.backward_stack(self.encoder_layers(), params, &enc_trace, &g_z, g, false);
                }
            }
        }
        total
    }
}

/// Glorot-uniform weights and zero biases, deterministic under `seed`.
pub fn init_params<T: Scalar>(spec: &LayerSpec, seed: u64) -> Result<MlpParams<T>> {
    let mut p = MlpParams::zeros(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in p.layers.clone() {
        let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
        for v in &mut p.values[l.weights()] {
            *v = T::of(rng.gen_range(-limit..=limit));
        }
    }
    Ok(p)
}

/// Per-event mean squared error and its average over events.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionError<T> {
    pub per_event: Vec<T>,
    pub mean: T,
}

/// Per-event error `||xhat_i - x_i||^2 / d`, plus the mean over events.
pub fn reconstruction_error<T: Scalar>(x: &Matrix<T>, xhat: &Matrix<T>) -> Result<ReconstructionError<T>> {
    if x.rows() != xhat.rows() || x.cols() != xhat.cols() {
        return Err(Error::Shape(format!(
            "reconstruction is {}x{}, input is {}x{}",
            xhat.rows(),
            xhat.cols(),
            x.rows(),
            x.cols()
        )));
    }
    let d = T::of_usize(x.cols().max(1));
    let per_event: Vec<T> = x
        .iter_rows()
        .zip(xhat.iter_rows())
        .map(|(a, b)| crate::scalar::squared_distance(a, b) / d)
        .collect();
    let mean = if per_event.is_empty() {
        T::zero()
    } else {
        per_event.iter().copied().sum::<T>() / T::of_usize(per_event.len())
    };
    Ok(ReconstructionError { per_event, mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerKind::default(),
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Optimizer state over a contiguous block of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "snake_case", tag = "kind")]
pub enum OptimizerState<T> {
    SgdMomentum {
        momentum: f64,
        velocity: Vec<T>,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<T>,
        v: Vec<T>,
    },
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::SgdMomentum { momentum } => OptimizerState::SgdMomentum {
                momentum,
                velocity: vec![T::zero(); len],
            },
            OptimizerKind::Adam { beta1, beta2, eps } => OptimizerState::Adam {
                beta1,
                beta2,
                eps,
                step: 0,
                m: vec![T::zero(); len],
                v: vec![T::zero(); len],
            },
        }
    }

    /// One descent step on `params` using `grads` (same length as the state).
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        let lr = T::of(lr);
        match self {
            OptimizerState::SgdMomentum { momentum, velocity } => {
                let mu = T::of(*momentum);
                for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
                    *v = mu * *v - lr * g;
                    *p += *v;
                }
            }
            OptimizerState::Adam {
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                let b1 = T::of(*beta1);
                let b2 = T::of(*beta2);
                let e = T::of(*eps);
                let c1 = T::one() - T::of(beta1.powi(*step as i32));
                let c2 = T::one() - T::of(beta2.powi(*step as i32));
                for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = b1 * *mi + (T::one() - b1) * g;
                    *vi = b2 * *vi + (T::one() - b2) * g * g;
                    let mhat = *mi / c1;
                    let vhat = *vi / c2;
                    *p -= lr * mhat / (vhat.sqrt() + e);
                }
            }
        }
    }
}

/// Trained parameters with their per-epoch loss curve and final optimizer state.
#[derive(Debug, Clone)]
pub struct Fitted<T> {
    pub params: MlpParams<T>,
    pub losses: Vec<T>,
    pub optimizer: OptimizerState<T>,
}

/// Deterministic minibatch order for one epoch.
pub(crate) fn epoch_order(n: usize, shuffle: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(rng);
    }
    order
}

pub(crate) fn check_finite_loss<T: Scalar>(loss: T, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            loss: loss.as_f64(),
        })
    }
}

pub(crate) fn train_reconstruction<T: Scalar>(
    params: &MlpParams<T>,
    x: &Matrix<T>,
    cfg: &TrainConfig,
    train_encoder: bool,
) -> Result<Fitted<T>> {
    cfg.validate()?;
    if x.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "training data has {} columns, network expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    let range = if train_encoder {
        0..params.num_params()
    } else {
        params.decoder_range()
    };
    let mut p = params.clone();
    let mut opt = OptimizerState::new(cfg.optimizer, range.len());
    let n = x.rows();
    if cfg.epochs == 0 || n == 0 {
        return Ok(Fitted {
            params: p,
            losses: vec![],
            optimizer: opt,
        });
    }
    let batch = cfg.batch_size.min(n);
    let all: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grad = vec![T::zero(); p.num_params()];
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(n, cfg.shuffle, &mut rng);
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let values = p.values.clone();
            let loss = p.reconstruction_loss(&values, x, chunk, Some(&mut grad), train_encoder);
            check_finite_loss(loss, epoch)?;
            opt.step(&mut p.values[range.clone()], &grad[range.clone()], cfg.learning_rate);
        }
        let loss = p.reconstruction_loss(&p.values, x, &all, None, false);
        check_finite_loss(loss, epoch)?;
        if !p.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
        losses.push(loss);
    }
    Ok(Fitted {
        params: p,
        losses,
        optimizer: opt,
    })
}

/// Minimizes mean reconstruction error over all parameters.
pub fn pretrain<T: Scalar>(params: &MlpParams<T>, x: &Matrix<T>, cfg: &TrainConfig) -> Result<Fitted<T>> {
    train_reconstruction(params, x, cfg, true)
}

/// A scalar objective over a flat parameter vector.
pub trait Objective<T: Scalar> {
    fn dim(&self) -> usize;

    /// Loss at `theta`; when `grad` is given the analytic gradient is written to it.
    fn eval(&self, theta: &[T], grad: Option<&mut [T]>) -> Result<T>;
}

/// Mean reconstruction error of a fixed batch as a function of all MLP parameters.
pub struct ReconstructionObjective<'a, T> {
    pub template: &'a MlpParams<T>,
    pub x: &'a Matrix<T>,
}

impl<T: Scalar> Objective<T> for ReconstructionObjective<'_, T> {
    fn dim(&self) -> usize {
        self.template.num_params()
    }

    fn eval(&self, theta: &[T], grad: Option<&mut [T]>) -> Result<T> {
        let rows: Vec<usize> = (0..self.x.rows()).collect();
        let grad = grad.map(|g| {
            g.iter_mut().for_each(|v| *v = T::zero());
            g
        });
        Ok(self.template.reconstruction_loss(theta, self.x, &rows, grad, true))
    }
}

/// Largest relative discrepancy between the analytic gradient and central
/// finite differences, over every coordinate of `theta`. Coordinates whose
/// gradients are both below `1e-6` in magnitude are compared against that floor.
pub fn grad_check<T: Scalar>(objective: &dyn Objective<T>, theta: &[T], eps: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    if theta.len() != objective.dim() {
        return Err(Error::Shape(format!(
            "theta has {} entries, objective expects {}",
            theta.len(),
            objective.dim()
        )));
    }
    let mut analytic = vec![T::zero(); theta.len()];
    objective.eval(theta, Some(&mut analytic))?;
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + T::of(eps);
        let plus = objective.eval(&probe, None)?.as_f64();
        probe[i] = orig - T::of(eps);
        let minus = objective.eval(&probe, None)?.as_f64();
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i].as_f64();
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initialized,
    Pretrained,
    Clustered,
    DecoderRetrained,
}

/// Snapshot of a ChaCha8 generator: seed plus stream position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Data(format!("bad rng position '{}'", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix<T: Scalar>(m: &Matrix<T>) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn from_vector<T: Scalar>(v: &[T]) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v.iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn to_matrix<T: Scalar>(&self) -> Result<Matrix<T>> {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|&v| T::of(v)).collect())
    }
}

/// Model checkpoint: spec, row-major 64-bit tensors keyed by name, the last
/// optimizer state, RNG position and training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: LayerSpec,
    pub phase: Phase,
    pub tensors: BTreeMap<String, Tensor>,
    pub optimizer: Option<OptimizerState<f64>>,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(params: &MlpParams<T>, phase: Phase) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, w, b) in params.named_tensors() {
            tensors.insert(format!("{name}.weight"), Tensor::from_matrix(&w));
            tensors.insert(format!("{name}.bias"), Tensor::from_vector(&b));
        }
        Self {
            spec: params.spec().clone(),
            phase,
            tensors,
            optimizer: None,
            rng: None,
        }
    }

    pub fn with_tensor(mut self, name: &str, t: Tensor) -> Self {
        self.tensors.insert(name.to_owned(), t);
        self
    }

    pub fn params<T: Scalar>(&self) -> Result<MlpParams<T>> {
        let mut p = MlpParams::<T>::zeros(self.spec.clone())?;
        let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _, _)| n).collect();
        for (name, l) in names.iter().zip(p.layers.clone()) {
            let w = self.tensor(&format!("{name}.weight"))?;
            let b = self.tensor(&format!("{name}.bias"))?;
            if w.data.len() != l.fan_in * l.fan_out || b.data.len() != l.fan_out {
                return Err(Error::Shape(format!("tensor '{name}' does not match the spec")));
            }
            for (dst, &src) in p.values[l.weights()].iter_mut().zip(&w.data) {
                *dst = T::of(src);
            }
            for (dst, &src) in p.values[l.bias()].iter_mut().zip(&b.data) {
                *dst = T::of(src);
            }
        }
        Ok(p)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Integrity(format!("checkpoint lacks tensor '{name}'")))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::persist::save_document(path, "checkpoint", self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::persist::load_document(path, "checkpoint")
    }
}
