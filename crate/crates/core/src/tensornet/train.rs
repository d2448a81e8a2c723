//! Minibatch training with early stopping on validation loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{LayerSpec, Network};
use super::ops::LOG_CLAMP;
use super::optim::{Adam, PlateauSchedule};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed;

/// Batch size used when evaluating rather than training.
pub const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Early-stopping patience in epochs.
    pub patience: usize,
    pub seed: u64,
    #[serde(default)]
    pub schedule: PlateauSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            patience: 50,
            seed: 0,
            schedule: PlateauSchedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is not positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Class index per sample; the network must end in a softmax.
    Classes { labels: Vec<usize>, classes: usize },
    /// Real-valued targets of `width` values per sample, squared loss.
    Values { values: Vec<f32>, width: usize },
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values { values, width } => values.len() / width,
        }
    }
}

/// Inputs flattened per sample, row-major, with their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSet {
    pub inputs: Vec<f32>,
    pub targets: Targets,
}

impl TrainSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize], sample_len: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(idx.len() * sample_len);
        for &i in idx {
            out.extend_from_slice(&self.inputs[i * sample_len..(i + 1) * sample_len]);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(default)]
    pub val_accuracy: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Size of the training set the model saw each epoch.
    #[serde(default)]
    pub train_samples: usize,
}

/// Summed loss over a batch and the gradient of the batch-mean loss with
/// respect to the network output (logits for a trailing softmax).
fn loss_and_grad(out: &[f32], targets: &Targets, idx: &[usize], denom: usize) -> (f64, Vec<f32>, usize) {
    let mut grad = vec![0.0f32; out.len()];
    let mut loss = 0.0f64;
    let mut correct = 0;
    match targets {
        Targets::Classes { labels, classes } => {
            let scale = 1.0 / denom as f64;
            for (s, &i) in idx.iter().enumerate() {
                let row = &out[s * classes..(s + 1) * classes];
                let y = labels[i];
                loss -= (row[y] as f64).max(LOG_CLAMP).ln();
                if argmax(row) == y {
                    correct += 1;
                }
                for (c, g) in grad[s * classes..(s + 1) * classes].iter_mut().enumerate() {
                    let target = if c == y { 1.0 } else { 0.0 };
                    *g = ((row[c] as f64 - target) * scale) as f32;
                }
            }
        }
        Targets::Values { values, width } => {
            let scale = 2.0 / (denom * width) as f64;
            for (s, &i) in idx.iter().enumerate() {
                let mut sq = 0.0f64;
                for k in 0..*width {
                    let d = out[s * width + k] as f64 - values[i * width + k] as f64;
                    sq += d * d;
                    grad[s * width + k] = (d * scale) as f32;
                }
                loss += sq / *width as f64;
            }
        }
    }
    (loss, grad, correct)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn batch_tensor(net: &Network<f32>, data: Vec<f32>, batch: usize) -> Result<Tensor<f32>> {
    let mut shape = vec![batch];
    shape.extend_from_slice(net.input_shape());
    Tensor::new(shape, data)
}

/// Mean loss and (for class targets) accuracy over a set, dropout off.
pub fn evaluate(net: &Network<f32>, set: &TrainSet) -> Result<(f64, Option<f64>)> {
    let sample_len: usize = net.input_shape().iter().product();
    let all: Vec<usize> = (0..set.len()).collect();
    let mut loss = 0.0;
    let mut correct = 0;
    for idx in all.chunks(EVAL_BATCH) {
        let x = batch_tensor(net, set.gather(idx, sample_len), idx.len())?;
        let out = net.predict(&x)?;
        let (l, _, c) = loss_and_grad(out.data(), &set.targets, idx, idx.len());
        loss += l;
        correct += c;
    }
    let n = set.len().max(1) as f64;
    let acc = matches!(set.targets, Targets::Classes { .. }).then(|| correct as f64 / n);
    Ok((loss / n, acc))
}

/// Trains `net` in place and leaves it holding the best-validation parameters.
pub fn train(net: &mut Network<f32>, train_set: &TrainSet, val_set: &TrainSet, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training needs nonempty train and validation sets".into()));
    }
    let sample_len: usize = net.input_shape().iter().product();
    for set in [train_set, val_set] {
        if set.inputs.len() != set.len() * sample_len {
            return Err(Error::Shape(format!(
                "{} input values for {} samples of {sample_len}",
                set.inputs.len(),
                set.len()
            )));
        }
    }
    let fused = matches!(net.specs().last(), Some(LayerSpec::Softmax));
    if matches!(train_set.targets, Targets::Classes { .. }) && !fused {
        return Err(Error::Config("class targets need a network ending in softmax".into()));
    }
    let mut adam = Adam::new(cfg.learning_rate, net.params());
    let mut schedule = cfg.schedule.clone();
    let mut report = TrainReport {
        best_val_loss: f64::INFINITY,
        train_samples: train_set.len(),
        ..Default::default()
    };
    let mut best_params = net.params().to_vec();
    let mut wait = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.max_epochs {
        let mut shuffle_rng = seed::rng(cfg.seed, seed::stream::SHUFFLE, epoch as u64);
        let mut dropout_rng = seed::rng(cfg.seed, seed::stream::DROPOUT, epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let x = batch_tensor(net, train_set.gather(idx, sample_len), idx.len())?;
            let tape = net.forward(&x, Some(&mut dropout_rng))?;
            let (loss, grad, _) = loss_and_grad(tape.output().data(), &train_set.targets, idx, idx.len());
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("loss became {loss} in epoch {epoch}")));
            }
            epoch_loss += loss;
            let grads = net.backward(&tape, grad, fused, false)?;
            let trainable = net.trainable().to_vec();
            adam.update(net.params_mut(), &grads.params, &trainable)
                .map_err(|e| Error::Divergence(format!("{e} in epoch {epoch}")))?;
        }
        let (val_loss, val_accuracy) = evaluate(net, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence(format!("validation loss became {val_loss} in epoch {epoch}")));
        }
        report.history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            val_accuracy,
            learning_rate: adam.lr,
        });
        log::debug!("epoch {epoch}: train {:.4} val {val_loss:.4}", epoch_loss / train_set.len() as f64);
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best_params = net.params().to_vec();
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
        adam.lr = schedule.observe(val_loss, adam.lr);
    }
    net.params_mut().clone_from_slice(&best_params);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable(n: usize, seed: u64) -> TrainSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let sign = if label == 0 { -1.0 } else { 1.0 };
            inputs.push(sign * rng.gen_range(0.2f32..1.0));
            inputs.push(rng.gen_range(-1.0f32..1.0));
            labels.push(label);
        }
        TrainSet {
            inputs,
            targets: Targets::Classes { labels, classes: 2 },
        }
    }

    fn toy_net(seed: u64) -> Network<f32> {
        let mut net = Network::new(
            vec![
                LayerSpec::Dense { units: 8, relu: true },
                LayerSpec::Dense { units: 2, relu: false },
                LayerSpec::Softmax,
            ],
            vec![2],
        )
        .unwrap();
        net.init(seed);
        net
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let train_set = separable(64, 1);
        let val_set = separable(32, 2);
        let mut net = toy_net(3);
        let cfg = TrainConfig { max_epochs: 200, batch_size: 16, learning_rate: 1e-2, patience: 200, ..Default::default() };
        train(&mut net, &train_set, &val_set, &cfg).unwrap();
        let (_, acc) = evaluate(&net, &train_set).unwrap();
        assert_eq!(acc, Some(1.0));
    }

    #[test]
    fn patience_zero_stops_at_first_non_improving_epoch() {
        let train_set = separable(64, 1);
        // flipped labels make validation loss rise as training succeeds
        let mut val_set = separable(32, 2);
        if let Targets::Classes { labels, .. } = &mut val_set.targets {
            labels.iter_mut().for_each(|l| *l = 1 - *l);
        }
        let mut net = toy_net(3);
        let cfg = TrainConfig { max_epochs: 500, patience: 0, learning_rate: 5e-2, ..Default::default() };
        let report = train(&mut net, &train_set, &val_set, &cfg).unwrap();
        let h = &report.history;
        let last = h.len() - 1;
        assert!(report.stopped_early);
        assert!(h[..last].windows(2).all(|w| w[1].val_loss < w[0].val_loss));
        assert!(h[last].val_loss >= report.best_val_loss);
        assert_eq!(report.best_epoch, last - 1);
    }

    #[test]
    fn best_parameters_are_restored() {
        let train_set = separable(64, 1);
        let val_set = separable(32, 2);
        let mut net = toy_net(3);
        let cfg = TrainConfig { max_epochs: 30, patience: 3, learning_rate: 5e-2, ..Default::default() };
        let report = train(&mut net, &train_set, &val_set, &cfg).unwrap();
        let (val_loss, _) = evaluate(&net, &val_set).unwrap();
        assert!((val_loss - report.best_val_loss).abs() < 1e-9);
    }

    #[test]
    fn fixed_seed_gives_identical_parameters() {
        let train_set = separable(64, 1);
        let val_set = separable(32, 2);
        let cfg = TrainConfig { max_epochs: 5, ..Default::default() };
        let mut a = toy_net(9);
        let mut b = toy_net(9);
        train(&mut a, &train_set, &val_set, &cfg).unwrap();
        train(&mut b, &train_set, &val_set, &cfg).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
    }

    #[test]
    fn divergence_is_reported() {
        let mut train_set = separable(8, 1);
        train_set.inputs[0] = f32::NAN;
        let val_set = separable(8, 2);
        let mut net = toy_net(1);
        let err = train(&mut net, &train_set, &val_set, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn squared_loss_regression() {
        // y = 2x fits exactly with one linear unit
        let xs: Vec<f32> = (0..32).map(|i| i as f32 / 16.0 - 1.0).collect();
        let set = TrainSet { inputs: xs.clone(), targets: Targets::Values { values: xs.iter().map(|x| 2.0 * x).collect(), width: 1 } };
        let mut net = Network::new(vec![LayerSpec::Dense { units: 1, relu: false }], vec![1]).unwrap();
        net.init(0);
        let cfg = TrainConfig { max_epochs: 400, batch_size: 8, learning_rate: 5e-2, patience: 400, ..Default::default() };
        train(&mut net, &set, &set, &cfg).unwrap();
        let (mse, acc) = evaluate(&net, &set).unwrap();
        assert!(mse < 1e-4, "{mse}");
        assert_eq!(acc, None);
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }
}
