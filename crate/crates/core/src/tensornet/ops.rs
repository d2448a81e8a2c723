//! Batched forward and backward kernels for the layer types the network
//! supports. Activations are channels-last: images are `[B, H, W, C]`,
//! sequences `[B, T, D]`.

use super::real::{gemm, Real};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities below this are clamped inside the log of the loss.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

fn activate<T: Real>(values: &mut [T], act: Activation) {
    if act == Activation::Relu {
        relu_in_place(values);
    }
}

pub fn relu_in_place<T: Real>(values: &mut [T]) {
    for v in values {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Gradient through a ReLU whose forward output was `output`.
pub fn relu_backward<T: Real>(output: &[T], grad: &mut [T]) {
    for (g, y) in grad.iter_mut().zip(output) {
        if *y <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

// ---------------------------------------------------------------- dense

/// `act(x W + b)` for `x: [B, n]`, `W: [n, units]` row-major, `b: [units]`.
pub fn dense_forward<T: Real>(x: &Tensor<T>, weights: &[T], bias: &[T], act: Activation) -> Result<Tensor<T>> {
    let batch = x.batch();
    let n = x.sample_len();
    let units = bias.len();
    if weights.len() != n * units {
        return Err(Error::Shape(format!(
            "dense weights hold {} values, expected {n}×{units}",
            weights.len()
        )));
    }
    let mut out = vec![T::zero(); batch * units];
    for row in out.chunks_exact_mut(units) {
        row.copy_from_slice(bias);
    }
    gemm(false, false, batch, units, n, T::one(), x.data(), n, weights, units, T::one(), &mut out, units);
    activate(&mut out, act);
    Tensor::new(vec![batch, units], out)
}

/// Accumulates `dW += xᵀ dy`, `db += Σ dy`, and writes `dx = dy Wᵀ` if asked.
pub fn dense_backward<T: Real>(
    x: &[T],
    weights: &[T],
    dy: &[T],
    batch: usize,
    n: usize,
    units: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    if !dw.is_empty() {
        gemm(true, false, n, units, batch, T::one(), x, n, dy, units, T::one(), dw, units);
        for row in dy.chunks_exact(units) {
            for (acc, g) in db.iter_mut().zip(row) {
                *acc += *g;
            }
        }
    }
    if let Some(dx) = dx {
        gemm(false, true, batch, n, units, T::one(), dy, units, weights, units, T::zero(), dx, n);
    }
}

// ----------------------------------------------------------------- conv

/// Geometry of a valid, stride-1 cross-correlation over `[B, H, W, C]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub filters: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        self.height + 1 - self.kernel_h
    }

    pub fn out_width(&self) -> usize {
        self.width + 1 - self.kernel_w
    }

    /// Rows of the filter matrix: one per `(dh, dw, c)` tap.
    pub fn taps(&self) -> usize {
        self.kernel_h * self.kernel_w * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.kernel_h > self.height || self.kernel_w > self.width {
            return Err(Error::Shape(format!(
                "{}×{} kernel does not fit a {}×{} input",
                self.kernel_h, self.kernel_w, self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Unfold `[B, H, W, C]` into `[B·Ho·Wo, kh·kw·C]` patches.
pub fn im2col<T: Real>(x: &[T], batch: usize, g: &ConvGeometry) -> Vec<T> {
    let (ho, wo, k) = (g.out_height(), g.out_width(), g.taps());
    let c = g.channels;
    let mut cols = vec![T::zero(); batch * ho * wo * k];
    for b in 0..batch {
        for i in 0..ho {
            for j in 0..wo {
                let row = ((b * ho + i) * wo + j) * k;
                for dh in 0..g.kernel_h {
                    for dw in 0..g.kernel_w {
                        let src = ((b * g.height + i + dh) * g.width + j + dw) * c;
                        let dst = row + (dh * g.kernel_w + dw) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(dcols: &[T], batch: usize, g: &ConvGeometry) -> Vec<T> {
    let (ho, wo, k) = (g.out_height(), g.out_width(), g.taps());
    let c = g.channels;
    let mut dx = vec![T::zero(); batch * g.height * g.width * c];
    for b in 0..batch {
        for i in 0..ho {
            for j in 0..wo {
                let row = ((b * ho + i) * wo + j) * k;
                for dh in 0..g.kernel_h {
                    for dw in 0..g.kernel_w {
                        let dst = ((b * g.height + i + dh) * g.width + j + dw) * c;
                        let src = row + (dh * g.kernel_w + dw) * c;
                        for (d, s) in dx[dst..dst + c].iter_mut().zip(&dcols[src..src + c]) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Feature maps `y_p[j,k] = act(Σ_l Σ_w Σ_c x[j+l, k+w, c]·m_p[l,w,c] + b_p)`.
///
/// `filters` is `[kh·kw·C, F]` row-major, so filter `p`'s tap `(l, w, c)`
/// lives at row `(l·kw + w)·C + c`, column `p`. Returns the output together
/// with the unfolded patches, which the backward pass reuses.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    g: &ConvGeometry,
    filters: &[T],
    bias: &[T],
    act: Activation,
) -> Result<(Tensor<T>, Vec<T>)> {
    g.validate()?;
    let batch = x.batch();
    if x.sample_len() != g.height * g.width * g.channels {
        return Err(Error::Shape(format!(
            "conv input has {} values per sample, expected {}×{}×{}",
            x.sample_len(),
            g.height,
            g.width,
            g.channels
        )));
    }
    if filters.len() != g.taps() * g.filters || bias.len() != g.filters {
        return Err(Error::Shape("conv filter bank has the wrong size".into()));
    }
    let cols = im2col(x.data(), batch, g);
    let rows = batch * g.out_height() * g.out_width();
    let mut out = vec![T::zero(); rows * g.filters];
    for row in out.chunks_exact_mut(g.filters) {
        row.copy_from_slice(bias);
    }
    gemm(false, false, rows, g.filters, g.taps(), T::one(), &cols, g.taps(), filters, g.filters, T::one(), &mut out, g.filters);
    activate(&mut out, act);
    let y = Tensor::new(vec![batch, g.out_height(), g.out_width(), g.filters], out)?;
    Ok((y, cols))
}

/// Accumulates filter and bias gradients; returns `dx` if asked.
pub fn conv2d_backward<T: Real>(
    cols: &[T],
    g: &ConvGeometry,
    filters: &[T],
    dy: &[T],
    batch: usize,
    dfilters: &mut [T],
    dbias: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    let rows = batch * g.out_height() * g.out_width();
    let (k, f) = (g.taps(), g.filters);
    if !dfilters.is_empty() {
        gemm(true, false, k, f, rows, T::one(), cols, k, dy, f, T::one(), dfilters, f);
        for row in dy.chunks_exact(f) {
            for (acc, v) in dbias.iter_mut().zip(row) {
                *acc += *v;
            }
        }
    }
    if !want_dx {
        return None;
    }
    let mut dcols = vec![T::zero(); rows * k];
    gemm(false, true, rows, k, f, T::one(), dy, f, filters, f, T::zero(), &mut dcols, k);
    Some(col2im(&dcols, batch, g))
}

// ----------------------------------------------------------------- lstm

/// Weights of an LSTM cell with gates ordered `[input, forget, cell, output]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a, T> {
    /// `[D, 4H]`
    pub input: &'a [T],
    /// `[H, 4H]`
    pub recurrent: &'a [T],
    /// `[4H]`
    pub bias: &'a [T],
    pub hidden: usize,
}

/// Activations saved by `lstm_forward`, time-major.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    pub steps: usize,
    pub batch: usize,
    pub hidden: usize,
    /// Activated gates `[T, B, 4H]`.
    pub gates: Vec<T>,
    /// Cell states `[T+1, B, H]`, step 0 is the zero initial state.
    pub cells: Vec<T>,
    /// Hidden states `[T+1, B, H]`.
    pub hiddens: Vec<T>,
}

impl<T: Real> LstmCache<T> {
    /// Final hidden state `[B, H]`.
    pub fn last_hidden(&self) -> &[T] {
        let bh = self.batch * self.hidden;
        &self.hiddens[self.steps * bh..]
    }

    /// Output sequence `[B, T, H]`.
    pub fn output_sequence(&self) -> Vec<T> {
        let (b, t, h) = (self.batch, self.steps, self.hidden);
        let mut out = vec![T::zero(); b * t * h];
        for step in 0..t {
            for s in 0..b {
                let src = ((step + 1) * b + s) * h;
                let dst = (s * t + step) * h;
                out[dst..dst + h].copy_from_slice(&self.hiddens[src..src + h]);
            }
        }
        out
    }
}

/// Runs the cell over `x: [B, T, D]`:
/// `i, f, o = σ(·)`, `g = tanh(·)`, `c ← f⊙c + i⊙g`, `h = tanh(c)⊙o`.
pub fn lstm_forward<T: Real>(x: &Tensor<T>, w: LstmWeights<'_, T>) -> Result<LstmCache<T>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!("lstm expects [B, T, D], got {shape:?}")));
    }
    let (batch, steps, width) = (shape[0], shape[1], shape[2]);
    if steps == 0 {
        return Err(Error::Shape("lstm input sequence is empty".into()));
    }
    let h = w.hidden;
    let g4 = 4 * h;
    if w.input.len() != width * g4 || w.recurrent.len() != h * g4 || w.bias.len() != g4 {
        return Err(Error::Shape("lstm weights have the wrong size".into()));
    }
    // input projection for all steps at once, batch-major rows (b, t)
    let mut projected = vec![T::zero(); batch * steps * g4];
    gemm(false, false, batch * steps, g4, width, T::one(), x.data(), width, w.input, g4, T::zero(), &mut projected, g4);

    let bh = batch * h;
    let mut gates = vec![T::zero(); steps * batch * g4];
    let mut cells = vec![T::zero(); (steps + 1) * bh];
    let mut hiddens = vec![T::zero(); (steps + 1) * bh];
    for t in 0..steps {
        let z = &mut gates[t * batch * g4..(t + 1) * batch * g4];
        for b in 0..batch {
            let src = &projected[(b * steps + t) * g4..(b * steps + t + 1) * g4];
            for ((dst, p), bias) in z[b * g4..(b + 1) * g4].iter_mut().zip(src).zip(w.bias) {
                *dst = *p + *bias;
            }
        }
        let (prev_h, _) = hiddens[t * bh..].split_at(bh);
        gemm(false, false, batch, g4, h, T::one(), prev_h, h, w.recurrent, g4, T::one(), z, g4);
        for b in 0..batch {
            let zr = &mut z[b * g4..(b + 1) * g4];
            for j in 0..h {
                let i_g = sigmoid(zr[j]);
                let f_g = sigmoid(zr[h + j]);
                let c_g = zr[2 * h + j].tanh();
                let o_g = sigmoid(zr[3 * h + j]);
                zr[j] = i_g;
                zr[h + j] = f_g;
                zr[2 * h + j] = c_g;
                zr[3 * h + j] = o_g;
                let c_prev = cells[t * bh + b * h + j];
                let c_new = f_g * c_prev + i_g * c_g;
                cells[(t + 1) * bh + b * h + j] = c_new;
                hiddens[(t + 1) * bh + b * h + j] = c_new.tanh() * o_g;
            }
        }
    }
    Ok(LstmCache {
        steps,
        batch,
        hidden: h,
        gates,
        cells,
        hiddens,
    })
}

/// Gradients of an LSTM layer.
pub struct LstmGrads<'a, T> {
    pub input: &'a mut [T],
    pub recurrent: &'a mut [T],
    pub bias: &'a mut [T],
}

/// Backpropagation through time. `d_last` is the gradient of the final
/// hidden state `[B, H]`; `d_seq`, if given, adds per-step output gradients
/// `[B, T, H]`. Returns `dx: [B, T, D]` when `want_dx`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_backward<T: Real>(
    x: &[T],
    width: usize,
    w: LstmWeights<'_, T>,
    cache: &LstmCache<T>,
    d_last: Option<&[T]>,
    d_seq: Option<&[T]>,
    grads: LstmGrads<'_, T>,
    want_dx: bool,
) -> Option<Vec<T>> {
    let (batch, steps, h) = (cache.batch, cache.steps, cache.hidden);
    let g4 = 4 * h;
    let bh = batch * h;
    let mut dz = vec![T::zero(); steps * batch * g4];
    let mut dh_next = vec![T::zero(); bh];
    let mut dc_next = vec![T::zero(); bh];
    if let Some(d) = d_last {
        dh_next.copy_from_slice(d);
    }
    let one = T::one();
    for t in (0..steps).rev() {
        if let Some(seq) = d_seq {
            for b in 0..batch {
                for j in 0..h {
                    dh_next[b * h + j] += seq[(b * steps + t) * h + j];
                }
            }
        }
        let gate_t = &cache.gates[t * batch * g4..(t + 1) * batch * g4];
        let dz_t = &mut dz[t * batch * g4..(t + 1) * batch * g4];
        for b in 0..batch {
            for j in 0..h {
                let idx = b * h + j;
                let gr = &gate_t[b * g4..(b + 1) * g4];
                let (i_g, f_g, c_g, o_g) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                let c_prev = cache.cells[t * bh + idx];
                let tc = cache.cells[(t + 1) * bh + idx].tanh();
                let dh = dh_next[idx];
                let d_o = dh * tc;
                let dc = dc_next[idx] + dh * o_g * (one - tc * tc);
                let dzr = &mut dz_t[b * g4..(b + 1) * g4];
                dzr[j] = dc * c_g * i_g * (one - i_g);
                dzr[h + j] = dc * c_prev * f_g * (one - f_g);
                dzr[2 * h + j] = dc * i_g * (one - c_g * c_g);
                dzr[3 * h + j] = d_o * o_g * (one - o_g);
                dc_next[idx] = dc * f_g;
            }
        }
        if !grads.recurrent.is_empty() {
            let h_prev = &cache.hiddens[t * bh..(t + 1) * bh];
            gemm(true, false, h, g4, batch, one, h_prev, h, dz_t, g4, one, grads.recurrent, g4);
        }
        gemm(false, true, batch, h, g4, one, dz_t, g4, w.recurrent, g4, T::zero(), &mut dh_next, h);
    }
    // back to batch-major rows (b, t) to match x
    let mut dz_bm = vec![T::zero(); batch * steps * g4];
    for t in 0..steps {
        for b in 0..batch {
            let src = (t * batch + b) * g4;
            let dst = (b * steps + t) * g4;
            dz_bm[dst..dst + g4].copy_from_slice(&dz[src..src + g4]);
        }
    }
    let rows = batch * steps;
    if !grads.input.is_empty() {
        gemm(true, false, width, g4, rows, one, x, width, &dz_bm, g4, one, grads.input, g4);
        for row in dz_bm.chunks_exact(g4) {
            for (acc, v) in grads.bias.iter_mut().zip(row) {
                *acc += *v;
            }
        }
    }
    if !want_dx {
        return None;
    }
    let mut dx = vec![T::zero(); rows * width];
    gemm(false, true, rows, width, g4, one, &dz_bm, g4, w.input, g4, T::zero(), &mut dx, width);
    Some(dx)
}

// ------------------------------------------------------ softmax and loss

/// Numerically stable softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise softmax over `[B, C]`, accumulating in f64.
pub fn softmax_rows<T: Real>(logits: &mut [T], classes: usize) {
    for row in logits.chunks_exact_mut(classes) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            let e = (v.as_f64() - max).exp();
            sum += e;
            *v = T::from_f64_lossy(e);
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v = T::from_f64_lossy(v.as_f64() * inv);
        }
    }
}

/// Vector-Jacobian product of softmax: `dz_i = p_i (g_i − Σ_j p_j g_j)`.
pub fn softmax_backward<T: Real>(probs: &[T], grad: &mut [T], classes: usize) {
    for (p, g) in probs.chunks_exact(classes).zip(grad.chunks_exact_mut(classes)) {
        let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
        for (gi, pi) in g.iter_mut().zip(p) {
            *gi = T::from_f64_lossy(pi.as_f64() * (gi.as_f64() - dot));
        }
    }
}

/// Per-sample categorical cross entropy `−Σ_j y_j log(ŷ_j)`, nonnegative.
pub fn cross_entropy(probs: &[f64], onehot: &[f64]) -> Result<f64> {
    if probs.len() != onehot.len() {
        return Err(Error::Shape(format!("{} probabilities vs {} labels", probs.len(), onehot.len())));
    }
    Ok(-probs
        .iter()
        .zip(onehot)
        .filter(|(_, y)| **y != 0.0)
        .map(|(p, y)| y * p.max(LOG_CLAMP).ln())
        .sum::<f64>())
}

/// Batch loss: mean of the per-sample losses.
pub fn mean_cross_entropy(probs: &[Vec<f64>], onehots: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (p, y) in probs.iter().zip(onehots) {
        total += cross_entropy(p, y)?;
    }
    Ok(total / probs.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn dense_hand_arithmetic() {
        let x = Tensor::<f64>::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let y = dense_forward(&x, &[1.0, 2.0], &[-10.0], Activation::Relu).unwrap();
        assert_eq!(y.data(), &[1.0]);
        let y = dense_forward(&x, &[0.0, 0.0], &[0.0], Activation::Relu).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn dense_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (b, n, u) = (3, 7, 5);
        let x = rand_vec(b * n, &mut rng);
        let w = rand_vec(n * u, &mut rng);
        let bias = rand_vec(u, &mut rng);
        let y = dense_forward(&Tensor::new(vec![b, n], x.clone()).unwrap(), &w, &bias, Activation::Identity).unwrap();
        for s in 0..b {
            for j in 0..u {
                let expected: f64 = bias[j] + (0..n).map(|i| x[s * n + i] * w[i * u + j]).sum::<f64>();
                assert!((y.data()[s * u + j] - expected).abs() < 1e-6);
            }
        }
        let bad = dense_forward(&Tensor::new(vec![b, n], x).unwrap(), &w[1..], &bias, Activation::Identity);
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    #[test]
    fn conv_constant_input() {
        let x = Tensor::<f64>::new(vec![1, 2, 2, 1], vec![1.0; 4]).unwrap();
        let g = ConvGeometry { height: 2, width: 2, channels: 1, kernel_h: 1, kernel_w: 1, filters: 1 };
        let (y, _) = conv2d_forward(&x, &g, &[2.0], &[0.0], Activation::Relu).unwrap();
        assert_eq!(y.data(), &[2.0; 4]);
        let (y, _) = conv2d_forward(&x, &g, &[0.0], &[0.0], Activation::Relu).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
    }

    #[test]
    fn conv_matches_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, w, kh, kw) = (2, 8, 2, 3);
        let x = rand_vec(h * w, &mut rng);
        let m = rand_vec(kh * kw, &mut rng);
        let g = ConvGeometry { height: h, width: w, channels: 1, kernel_h: kh, kernel_w: kw, filters: 1 };
        let (y, _) = conv2d_forward(&Tensor::new(vec![1, h, w, 1], x.clone()).unwrap(), &g, &m, &[0.0], Activation::Identity).unwrap();
        for j in 0..h - kh + 1 {
            for k in 0..w - kw + 1 {
                let mut expected = 0.0;
                for l in 0..kh {
                    for ww in 0..kw {
                        expected += x[(j + l) * w + k + ww] * m[l * kw + ww];
                    }
                }
                assert!((y.data()[j * (w - kw + 1) + k] - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let x = Tensor::<f64>::new(vec![1, 2, 2, 1], vec![1.0; 4]).unwrap();
        let g = ConvGeometry { height: 2, width: 2, channels: 1, kernel_h: 3, kernel_w: 1, filters: 1 };
        assert!(conv2d_forward(&x, &g, &[1.0; 3], &[0.0], Activation::Identity).is_err());
    }

    #[test]
    fn lstm_zero_weights_give_zero_output() {
        let x = Tensor::<f64>::new(vec![1, 5, 2], vec![0.7; 10]).unwrap();
        let (d, h) = (2, 3);
        let zeros_in = vec![0.0; d * 4 * h];
        let zeros_rec = vec![0.0; h * 4 * h];
        let zeros_b = vec![0.0; 4 * h];
        let cache = lstm_forward(&x, LstmWeights { input: &zeros_in, recurrent: &zeros_rec, bias: &zeros_b, hidden: h }).unwrap();
        assert!(cache.output_sequence().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lstm_single_unit_hand_computation() {
        // one step, scalar input 0.5, weights chosen per gate
        let x = Tensor::<f64>::new(vec![1, 1, 1], vec![0.5]).unwrap();
        let input = [0.2, -0.3, 0.4, 0.1];
        let recurrent = [0.9, 0.9, 0.9, 0.9];
        let bias = [0.05, 1.0, -0.1, 0.0];
        let cache = lstm_forward(&x, LstmWeights { input: &input, recurrent: &recurrent, bias: &bias, hidden: 1 }).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(0.5 * 0.2 + 0.05);
        let g = (0.5 * 0.4 - 0.1f64).tanh();
        let o = sig(0.5 * 0.1);
        let c = i * g; // forget gate multiplies a zero state
        let expected = c.tanh() * o;
        assert!((cache.last_hidden()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn lstm_empty_sequence_is_an_error() {
        let x = Tensor::<f64>::new(vec![1, 0, 2], vec![]).unwrap();
        let w = vec![0.0; 8];
        let r = vec![0.0; 4];
        let b = vec![0.0; 4];
        assert!(lstm_forward(&x, LstmWeights { input: &w, recurrent: &r, bias: &b, hidden: 1 }).is_err());
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, t, d, h) = (2, 4, 3, 2);
        let x = rand_vec(b * t * d, &mut rng);
        let mut params = rand_vec(d * 4 * h + h * 4 * h + 4 * h, &mut rng);
        // loss = Σ c_k · y_k over the whole output sequence
        let coef = rand_vec(b * t * h, &mut rng);
        let loss = |p: &[f64], x: &[f64]| -> f64 {
            let (wi, rest) = p.split_at(d * 4 * h);
            let (wr, bias) = rest.split_at(h * 4 * h);
            let cache = lstm_forward(&Tensor::new(vec![b, t, d], x.to_vec()).unwrap(), LstmWeights { input: wi, recurrent: wr, bias, hidden: h }).unwrap();
            cache.output_sequence().iter().zip(&coef).map(|(y, c)| y * c).sum()
        };
        let (wi, rest) = params.split_at(d * 4 * h);
        let (wr, bias) = rest.split_at(h * 4 * h);
        let w = LstmWeights { input: wi, recurrent: wr, bias, hidden: h };
        let cache = lstm_forward(&Tensor::new(vec![b, t, d], x.clone()).unwrap(), w).unwrap();
        let mut gi = vec![0.0; wi.len()];
        let mut gr = vec![0.0; wr.len()];
        let mut gb = vec![0.0; bias.len()];
        let dx = lstm_backward(&x, d, w, &cache, None, Some(&coef), LstmGrads { input: &mut gi, recurrent: &mut gr, bias: &mut gb }, true).unwrap();
        let analytic: Vec<f64> = gi.iter().chain(&gr).chain(&gb).copied().collect();
        let eps = 1e-6;
        for k in 0..params.len() {
            let orig = params[k];
            params[k] = orig + eps;
            let up = loss(&params, &x);
            params[k] = orig - eps;
            let down = loss(&params, &x);
            params[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (numeric - analytic[k]).abs() / numeric.abs().max(analytic[k].abs()).max(1e-6);
            assert!(rel < 1e-3, "param {k}: {numeric} vs {}", analytic[k]);
        }
        let mut xp = x.clone();
        for k in 0..x.len() {
            xp[k] = x[k] + eps;
            let up = loss(&params, &xp);
            xp[k] = x[k] - eps;
            let down = loss(&params, &xp);
            xp[k] = x[k];
            let numeric = (up - down) / (2.0 * eps);
            let rel = (numeric - dx[k]).abs() / numeric.abs().max(dx[k].abs()).max(1e-6);
            assert!(rel < 1e-3, "input {k}");
        }
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
        let a = softmax(&[1.5, 4.0]);
        let b = softmax(&[0.0, 2.5]);
        assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        let big = softmax(&[1000.0, 0.0]);
        // e^-1000 underflows to zero in any finite precision oracle
        assert!((big[0] - 1.0).abs() < 1e-15 && big[1] >= 0.0 && big[1] < 1e-300);
        assert!(big.iter().all(|v| v.is_finite()));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = softmax(&rand_vec(10, &mut rng));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_rows_agree_with_scalar_version() {
        let mut rows = vec![0.3f32, -1.0, 2.0, 5.0, 5.0, 5.0];
        softmax_rows(&mut rows, 3);
        let a = softmax(&[0.3, -1.0, 2.0]);
        for (x, y) in rows[..3].iter().zip(&a) {
            assert!((*x as f64 - y).abs() < 1e-6);
        }
        assert!(rows[3..].iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let uniform = cross_entropy(&[0.25; 4], &[0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((uniform - 1.386294).abs() < 1e-6);
        let p = [0.1, 0.6, 0.3];
        let y = [0.0, 0.0, 1.0];
        let direct = -(0.0 * 0.1f64.ln() + 0.0 * 0.6f64.ln() + 1.0 * 0.3f64.ln());
        assert!((cross_entropy(&p, &y).unwrap() - direct).abs() < 1e-15);
        // zero probability at the true class is clamped, not infinite
        let clamped = cross_entropy(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((clamped + LOG_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn softmax_backward_with_cross_entropy_is_p_minus_y() {
        let p = softmax(&[0.2, -0.4, 1.1]);
        let y = [0.0, 1.0, 0.0];
        let mut g: Vec<f64> = p.iter().zip(&y).map(|(pi, yi)| -yi / pi).collect();
        softmax_backward(&p, &mut g, 3);
        for k in 0..3 {
            assert!((g[k] - (p[k] - y[k])).abs() < 1e-12);
        }
    }
}
