//! Sequential networks with a recorded forward pass and reverse-mode backward.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Activation, ConvGeometry, LstmCache, LstmGrads, LstmWeights};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed;

/// One layer of a sequential network. Shapes below are per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `[ℓ, 2]` → `[2, ℓ, 1]`: I and Q become two image rows.
    AsImage,
    /// Valid stride-1 cross-correlation `[H, W, C]` → `[H−kh+1, W−kw+1, F]`.
    Conv2d {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        relu: bool,
    },
    Flatten,
    Dense {
        units: usize,
        relu: bool,
    },
    /// `[T, D]` → `[H]`, the final hidden state.
    Lstm { hidden: usize },
    /// `[1, W, C]` → `[W, C]`.
    AsSequence,
    /// Inverted dropout, active only when a dropout RNG is supplied.
    Dropout { rate: f64 },
    Softmax,
}

impl LayerSpec {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: &str| Err(Error::Shape(format!("{what} cannot take input {input:?}")));
        match *self {
            LayerSpec::AsImage => match input {
                [len, 2] => Ok(vec![2, *len, 1]),
                _ => bad("as_image"),
            },
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                ..
            } => match input {
                [h, w, c] => {
                    let g = ConvGeometry {
                        height: *h,
                        width: *w,
                        channels: *c,
                        kernel_h,
                        kernel_w,
                        filters,
                    };
                    g.validate()?;
                    Ok(vec![g.out_height(), g.out_width(), filters])
                }
                _ => bad("conv2d"),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { units, .. } => match input {
                [_] => Ok(vec![units]),
                _ => bad("dense"),
            },
            LayerSpec::Lstm { hidden } => match input {
                [t, _] if *t > 0 => Ok(vec![hidden]),
                _ => bad("lstm"),
            },
            LayerSpec::AsSequence => match input {
                [1, w, c] => Ok(vec![*w, *c]),
                _ => bad("as_sequence"),
            },
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Softmax => match input {
                [_] => Ok(input.to_vec()),
                _ => bad("softmax"),
            },
        }
    }

    fn param_count(&self, input: &[usize]) -> usize {
        match *self {
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                ..
            } => kernel_h * kernel_w * input[2] * filters + filters,
            LayerSpec::Dense { units, .. } => input[0] * units + units,
            LayerSpec::Lstm { hidden } => (input[1] + hidden + 1) * 4 * hidden,
            _ => 0,
        }
    }

    fn activation(relu: bool) -> Activation {
        if relu {
            Activation::Relu
        } else {
            Activation::Identity
        }
    }
}

/// What a layer keeps from the forward pass for its backward pass.
#[derive(Clone, Debug)]
enum Saved<T> {
    Nothing,
    Cols(Vec<T>),
    Lstm(LstmCache<T>),
    Mask(Vec<T>),
}

/// Recorded forward pass: every layer's input, the final output, and
/// per-layer extras.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    activations: Vec<Tensor<T>>,
    saved: Vec<Saved<T>>,
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.activations.last().expect("tape holds the input at least")
    }

    /// Input of layer `layer`; the last layer's input for `layer == len - 1`.
    pub fn layer_input(&self, layer: usize) -> Option<&Tensor<T>> {
        self.activations.get(layer).filter(|_| layer + 1 < self.activations.len())
    }

    pub fn into_output(mut self) -> Tensor<T> {
        self.activations.pop().expect("tape holds the input at least")
    }
}

/// Parameter gradients, one buffer per layer, plus the input gradient if it
/// was requested.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub params: Vec<Vec<T>>,
    pub input: Option<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Vec<T>>,
    trainable: Vec<bool>,
}

impl<T: Real> Network<T> {
    /// Builds the network with zero parameters; call `init` to randomise.
    pub fn new(specs: Vec<LayerSpec>, input_shape: Vec<usize>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        let mut shapes = vec![input_shape.clone()];
        let mut params = Vec::with_capacity(specs.len());
        for spec in &specs {
            let input = shapes.last().expect("seeded with the input shape");
            params.push(vec![T::zero(); spec.param_count(input)]);
            let out = spec.output_shape(input)?;
            shapes.push(out);
        }
        let trainable = vec![true; specs.len()];
        Ok(Self {
            specs,
            input_shape,
            shapes,
            params,
            trainable,
        })
    }

    /// He-uniform weights for dense and conv layers, `±1/√H` for LSTMs with
    /// the forget-gate bias set to one. Biases otherwise start at zero.
    pub fn init(&mut self, master_seed: u64) {
        for (i, spec) in self.specs.iter().enumerate() {
            let mut rng = seed::rng(master_seed, seed::stream::INIT, i as u64);
            let input = &self.shapes[i];
            let p = &mut self.params[i];
            match *spec {
                LayerSpec::Conv2d { filters, .. } | LayerSpec::Dense { units: filters, .. } => {
                    let weights = p.len() - filters;
                    let fan_in = weights / filters;
                    let limit = (6.0 / fan_in as f64).sqrt();
                    for w in &mut p[..weights] {
                        *w = T::from_f64_lossy(rng.gen_range(-limit..limit));
                    }
                    p[weights..].iter_mut().for_each(|b| *b = T::zero());
                }
                LayerSpec::Lstm { hidden } => {
                    let limit = 1.0 / (hidden as f64).sqrt();
                    let weights = (input[1] + hidden) * 4 * hidden;
                    for w in &mut p[..weights] {
                        *w = T::from_f64_lossy(rng.gen_range(-limit..limit));
                    }
                    let bias = &mut p[weights..];
                    bias.iter_mut().for_each(|b| *b = T::zero());
                    bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = T::one());
                }
                _ => {}
            }
        }
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("at least the input shape")
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    pub fn trainable(&self) -> &[bool] {
        &self.trainable
    }

    pub fn set_trainable(&mut self, layer: usize, trainable: bool) {
        self.trainable[layer] = trainable;
    }

    /// Flat copy of every parameter, layer by layer.
    pub fn flat_params(&self) -> Vec<T> {
        self.params.iter().flatten().copied().collect()
    }

    pub fn load_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters supplied for a network holding {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            specs: self.specs.clone(),
            input_shape: self.input_shape.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| p.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect())
                .collect(),
            trainable: self.trainable.clone(),
        }
    }

    /// Forward pass over a batch `[B, ..input_shape]`. Dropout is active
    /// only when `dropout_rng` is given.
    pub fn forward(&self, x: &Tensor<T>, mut dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Tape<T>> {
        if x.shape().get(1..) != Some(self.input_shape.as_slice()) {
            return Err(Error::Shape(format!(
                "network expects [B, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        let batch = x.batch();
        let mut activations = Vec::with_capacity(self.specs.len() + 1);
        let mut saved = Vec::with_capacity(self.specs.len());
        activations.push(x.clone());
        for (i, spec) in self.specs.iter().enumerate() {
            let input = activations.last().expect("input pushed first");
            let in_shape = &self.shapes[i];
            let mut out_shape = vec![batch];
            out_shape.extend_from_slice(&self.shapes[i + 1]);
            let p = &self.params[i];
            let (y, s) = match *spec {
                LayerSpec::AsImage => {
                    let len = in_shape[0];
                    let mut out = vec![T::zero(); input.len()];
                    for (src, dst) in input.data().chunks_exact(2 * len).zip(out.chunks_exact_mut(2 * len)) {
                        for k in 0..len {
                            dst[k] = src[2 * k];
                            dst[len + k] = src[2 * k + 1];
                        }
                    }
                    (Tensor::new(out_shape, out)?, Saved::Nothing)
                }
                LayerSpec::Conv2d {
                    filters,
                    kernel_h,
                    kernel_w,
                    relu,
                } => {
                    let g = ConvGeometry {
                        height: in_shape[0],
                        width: in_shape[1],
                        channels: in_shape[2],
                        kernel_h,
                        kernel_w,
                        filters,
                    };
                    let split = p.len() - filters;
                    let (y, cols) = ops::conv2d_forward(input, &g, &p[..split], &p[split..], LayerSpec::activation(relu))?;
                    (y, Saved::Cols(cols))
                }
                LayerSpec::Flatten | LayerSpec::AsSequence => (input.clone().reshape(out_shape)?, Saved::Nothing),
                LayerSpec::Dense { units, relu } => {
                    let split = p.len() - units;
                    let y = ops::dense_forward(input, &p[..split], &p[split..], LayerSpec::activation(relu))?;
                    (y, Saved::Nothing)
                }
                LayerSpec::Lstm { hidden } => {
                    let cache = ops::lstm_forward(input, self.lstm_weights(i, hidden))?;
                    let y = Tensor::new(out_shape, cache.last_hidden().to_vec())?;
                    (y, Saved::Lstm(cache))
                }
                LayerSpec::Dropout { rate } => match dropout_rng.as_deref_mut() {
                    Some(rng) if rate > 0.0 => {
                        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
                        let mask: Vec<T> = (0..input.len())
                            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
                            .collect();
                        let out = input.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
                        (Tensor::new(out_shape, out)?, Saved::Mask(mask))
                    }
                    _ => (input.clone(), Saved::Nothing),
                },
                LayerSpec::Softmax => {
                    let mut out = input.data().to_vec();
                    ops::softmax_rows(&mut out, in_shape[0]);
                    (Tensor::new(out_shape, out)?, Saved::Nothing)
                }
            };
            activations.push(y);
            saved.push(s);
        }
        Ok(Tape { activations, saved })
    }

    /// Evaluation-mode forward pass, returning only the output.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x, None)?.into_output())
    }

    fn lstm_weights(&self, layer: usize, hidden: usize) -> LstmWeights<'_, T> {
        let p = &self.params[layer];
        let width = self.shapes[layer][1];
        let (input, rest) = p.split_at(width * 4 * hidden);
        let (recurrent, bias) = rest.split_at(hidden * 4 * hidden);
        LstmWeights {
            input,
            recurrent,
            bias,
            hidden,
        }
    }

    /// Reverse pass from `grad_output`, the loss gradient with respect to the
    /// network output. With `fused_softmax`, a trailing softmax is skipped and
    /// `grad_output` is taken to be the gradient of its logits (for cross
    /// entropy that is `p − y`).
    pub fn backward(
        &self,
        tape: &Tape<T>,
        grad_output: Vec<T>,
        fused_softmax: bool,
        want_input_grad: bool,
    ) -> Result<Gradients<T>> {
        self.backward_impl(tape, grad_output, fused_softmax, want_input_grad, true)
    }

    /// Gradient with respect to the input only; weight gradients are skipped.
    pub fn input_gradient(&self, tape: &Tape<T>, grad_output: Vec<T>, fused_softmax: bool) -> Result<Vec<T>> {
        self.backward_impl(tape, grad_output, fused_softmax, true, false)?
            .input
            .ok_or_else(|| Error::Shape("input gradient missing".into()))
    }

    fn backward_impl(
        &self,
        tape: &Tape<T>,
        grad_output: Vec<T>,
        fused_softmax: bool,
        want_input_grad: bool,
        want_params: bool,
    ) -> Result<Gradients<T>> {
        if tape.activations.len() != self.specs.len() + 1 {
            return Err(Error::BackwardBeforeForward);
        }
        if grad_output.len() != tape.output().len() {
            return Err(Error::Shape(format!(
                "output gradient has {} values, output has {}",
                grad_output.len(),
                tape.output().len()
            )));
        }
        let n = self.specs.len();
        let batch = tape.activations[0].batch();
        // dx is needed below layer i if anything beneath it learns
        let mut need_dx = vec![want_input_grad; n];
        let mut below = want_input_grad;
        for i in 0..n {
            need_dx[i] = below;
            below = below || (self.trainable[i] && !self.params[i].is_empty());
        }
        let mut grads: Vec<Vec<T>> = self
            .params
            .iter()
            .map(|p| if want_params { vec![T::zero(); p.len()] } else { Vec::new() })
            .collect();
        let mut dy = grad_output;
        for i in (0..n).rev() {
            let input = &tape.activations[i];
            let output = &tape.activations[i + 1];
            let in_shape = &self.shapes[i];
            let p = &self.params[i];
            let dx: Option<Vec<T>> = match (&self.specs[i], &tape.saved[i]) {
                (LayerSpec::AsImage, _) => {
                    let len = in_shape[0];
                    let mut dx = vec![T::zero(); dy.len()];
                    for (src, dst) in dy.chunks_exact(2 * len).zip(dx.chunks_exact_mut(2 * len)) {
                        for k in 0..len {
                            dst[2 * k] = src[k];
                            dst[2 * k + 1] = src[len + k];
                        }
                    }
                    Some(dx)
                }
                (
                    LayerSpec::Conv2d {
                        filters,
                        kernel_h,
                        kernel_w,
                        relu,
                    },
                    Saved::Cols(cols),
                ) => {
                    if *relu {
                        ops::relu_backward(output.data(), &mut dy);
                    }
                    let g = ConvGeometry {
                        height: in_shape[0],
                        width: in_shape[1],
                        channels: in_shape[2],
                        kernel_h: *kernel_h,
                        kernel_w: *kernel_w,
                        filters: *filters,
                    };
                    let split = p.len() - filters;
                    let (dw, db) = split_grads(&mut grads[i], split);
                    ops::conv2d_backward(cols, &g, &p[..split], &dy, batch, dw, db, need_dx[i])
                }
                (LayerSpec::Flatten | LayerSpec::AsSequence, _) => Some(dy),
                (LayerSpec::Dense { units, relu }, _) => {
                    if *relu {
                        ops::relu_backward(output.data(), &mut dy);
                    }
                    let split = p.len() - units;
                    let n_in = in_shape[0];
                    let (dw, db) = split_grads(&mut grads[i], split);
                    if need_dx[i] {
                        let mut dx = vec![T::zero(); batch * n_in];
                        ops::dense_backward(input.data(), &p[..split], &dy, batch, n_in, *units, dw, db, Some(&mut dx));
                        Some(dx)
                    } else {
                        ops::dense_backward(input.data(), &p[..split], &dy, batch, n_in, *units, dw, db, None);
                        None
                    }
                }
                (LayerSpec::Lstm { hidden }, Saved::Lstm(cache)) => {
                    let w = self.lstm_weights(i, *hidden);
                    let (gi, rest) = split_grads(&mut grads[i], w.input.len());
                    let (gr, gb) = split_grads(rest, w.recurrent.len());
                    ops::lstm_backward(
                        input.data(),
                        in_shape[1],
                        w,
                        cache,
                        Some(&dy),
                        None,
                        LstmGrads {
                            input: gi,
                            recurrent: gr,
                            bias: gb,
                        },
                        need_dx[i],
                    )
                }
                (LayerSpec::Dropout { .. }, Saved::Mask(mask)) => {
                    dy.iter_mut().zip(mask).for_each(|(g, m)| *g *= *m);
                    Some(dy)
                }
                (LayerSpec::Dropout { .. }, _) => Some(dy),
                (LayerSpec::Softmax, _) => {
                    if !(fused_softmax && i == n - 1) {
                        ops::softmax_backward(output.data(), &mut dy, in_shape[0]);
                    }
                    Some(dy)
                }
                _ => return Err(Error::BackwardBeforeForward),
            };
            match dx {
                Some(d) => dy = d,
                None if i > 0 && need_dx[i] => return Err(Error::Shape("missing input gradient".into())),
                None => {
                    dy = Vec::new();
                    if i > 0 {
                        // nothing beneath this layer learns
                        break;
                    }
                }
            }
        }
        let input = if want_input_grad && !dy.is_empty() { Some(dy) } else { None };
        Ok(Gradients { params: grads, input })
    }
}

/// Splits a layer's gradient buffer; an empty buffer (weights not wanted)
/// splits into two empty halves.
fn split_grads<T>(g: &mut [T], at: usize) -> (&mut [T], &mut [T]) {
    if g.is_empty() {
        g.split_at_mut(0)
    } else {
        g.split_at_mut(at)
    }
}
