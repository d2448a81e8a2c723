//! Trained classifiers over ℓ×2 feature matrices.

use serde::{Deserialize, Serialize};

use super::network::{LayerSpec, Network};
use super::tensor::Tensor;
use super::train::{self, argmax, TrainConfig, TrainReport, TrainSet, Targets, EVAL_BATCH};
use crate::archzoo::ArchId;
use crate::error::{Error, Result};
use crate::spectral::{FeatureMatrix, Standardizer};
use crate::Domain;

/// Anything that maps ℓ×2 matrices in one domain to class distributions.
pub trait Classifier: Sync {
    fn input_domain(&self) -> Domain;
    fn num_classes(&self) -> usize;
    /// One length-C distribution per input.
    fn predict_proba(&self, x: &[FeatureMatrix]) -> Result<Vec<Vec<f64>>>;

    fn predict(&self, x: &[FeatureMatrix]) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.iter().map(|p| argmax(p)).collect())
    }
}

/// Cross-entropy logit gradient `p - onehot(y)` divided by `1 - p_y`,
/// computed in f64 from the logits, plus that divisor. Zeros and divisor 0
/// when `p_y` is exactly 1 even in f64.
fn scaled_softmax_residual(logits: &[f32], y: usize) -> (Vec<f64>, f64) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z as f64));
    let e: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let total: f64 = e.iter().sum();
    let rest: f64 = e.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, v)| v).sum();
    if rest == 0.0 {
        return (vec![0.0; e.len()], 0.0);
    }
    let g = e.iter().enumerate().map(|(j, &v)| if j == y { -1.0 } else { v / rest }).collect();
    (g, rest / total)
}

/// A network together with the domain and input normalisation it was
/// trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub arch: ArchId,
    pub domain: Domain,
    pub class_names: Vec<String>,
    pub standardizer: Standardizer,
    pub net: Network<f32>,
    pub seed: u64,
    pub report: TrainReport,
}

/// Training inputs for one model: matrices in a single domain plus labels.
#[derive(Clone, Copy, Debug)]
pub struct LabeledFeatures<'a> {
    pub x: &'a [FeatureMatrix],
    pub labels: &'a [usize],
}

fn check_domain(x: &[FeatureMatrix], domain: Domain) -> Result<()> {
    match x.iter().find(|m| m.domain != domain) {
        Some(m) => Err(Error::DomainMismatch { expected: domain, got: m.domain }),
        None => Ok(()),
    }
}

impl TrainedModel {
    /// Untrained model: standardiser fitted on `train_x`, parameters
    /// initialised from `seed`.
    pub fn prepare(arch: ArchId, mut net: Network<f32>, class_names: Vec<String>, train_x: &[FeatureMatrix], seed: u64) -> Result<Self> {
        let domain = train_x
            .first()
            .map(|m| m.domain)
            .ok_or_else(|| Error::Config("empty training set".into()))?;
        check_domain(train_x, domain)?;
        if *net.output_shape() != [class_names.len()] {
            return Err(Error::Config(format!(
                "network emits {:?} values for {} classes",
                net.output_shape(),
                class_names.len()
            )));
        }
        let standardizer = Standardizer::fit(train_x)?;
        net.init(seed);
        Ok(Self {
            arch,
            domain,
            class_names,
            standardizer,
            net,
            seed,
            report: TrainReport::default(),
        })
    }

    /// Class-target training set in this model's input encoding.
    pub fn class_set(&self, data: LabeledFeatures<'_>) -> Result<TrainSet> {
        let classes = self.num_classes();
        if data.x.len() != data.labels.len() {
            return Err(Error::Shape(format!("{} inputs vs {} labels", data.x.len(), data.labels.len())));
        }
        if data.labels.iter().any(|&l| l >= classes) {
            return Err(Error::Config("label outside the class range".into()));
        }
        Ok(TrainSet {
            inputs: self.encode(data.x)?,
            targets: Targets::Classes {
                labels: data.labels.to_vec(),
                classes,
            },
        })
    }

    /// Fits the standardiser on the training matrices, initialises `net` from
    /// `cfg.seed` and trains it on class targets.
    pub fn fit(
        arch: ArchId,
        net: Network<f32>,
        class_names: Vec<String>,
        train_data: LabeledFeatures<'_>,
        val_data: LabeledFeatures<'_>,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let mut model = Self::prepare(arch, net, class_names, train_data.x, cfg.seed)?;
        let train_set = model.class_set(train_data)?;
        let val_set = model.class_set(val_data)?;
        model.report = train::train(&mut model.net, &train_set, &val_set, cfg)?;
        Ok(model)
    }

    /// Standardised f32 inputs, one flattened sample after another.
    pub fn encode(&self, x: &[FeatureMatrix]) -> Result<Vec<f32>> {
        check_domain(x, self.domain)?;
        let width = self.standardizer.mean.len();
        let mut out = Vec::with_capacity(x.len() * width);
        for m in x {
            if m.values.len() != width {
                return Err(Error::Shape(format!(
                    "model expects {} rows, got {}",
                    width / 2,
                    m.rows()
                )));
            }
            for ((v, mu), sd) in m.values.iter().zip(&self.standardizer.mean).zip(&self.standardizer.std) {
                out.push(((v - mu) / sd) as f32);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.standardizer.mean.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.standardizer.mean.is_empty()
    }

    fn batch(&self, data: Vec<f32>, n: usize) -> Result<Tensor<f32>> {
        let mut shape = vec![n];
        shape.extend_from_slice(self.net.input_shape());
        Tensor::new(shape, data)
    }

    /// Gradient of each sample's cross-entropy loss with respect to its raw
    /// (unstandardised) input matrix, dropout off.
    pub fn loss_input_gradients(&self, x: &[FeatureMatrix], labels: &[usize]) -> Result<Vec<FeatureMatrix>> {
        if x.len() != labels.len() {
            return Err(Error::Shape(format!("{} inputs vs {} labels", x.len(), labels.len())));
        }
        if !matches!(self.net.specs().last(), Some(LayerSpec::Softmax)) {
            return Err(Error::Config("input gradients need a softmax classifier".into()));
        }
        let classes = self.num_classes();
        if labels.iter().any(|&l| l >= classes) {
            return Err(Error::Config("label outside the class range".into()));
        }
        let encoded = self.encode(x)?;
        let width = self.standardizer.mean.len();
        let mut out = Vec::with_capacity(x.len());
        for (chunk, idx) in encoded.chunks(EVAL_BATCH * width).zip(labels.chunks(EVAL_BATCH)) {
            let n = idx.len();
            let tape = self.net.forward(&self.batch(chunk.to_vec(), n)?.with_grad(), None)?;
            let logits = tape
                .layer_input(self.net.specs().len() - 1)
                .expect("softmax has an input")
                .data();
            let mut grad = Vec::with_capacity(n * classes);
            let mut scales = Vec::with_capacity(n);
            for (z, &y) in logits.chunks_exact(classes).zip(idx) {
                let (g, scale) = scaled_softmax_residual(z, y);
                grad.extend(g.into_iter().map(|v| v as f32));
                scales.push(scale);
            }
            let dx = self.net.input_gradient(&tape, grad, true)?;
            for (row, scale) in dx.chunks_exact(width).zip(scales) {
                let values = row
                    .iter()
                    .zip(&self.standardizer.std)
                    .map(|(g, sd)| scale * *g as f64 / sd)
                    .collect();
                out.push(FeatureMatrix::from_values(values, self.domain)?);
            }
        }
        Ok(out)
    }

    /// Hex SHA-256 of the checkpoint parameter blob.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(super::checkpoint::encode_params(&self.net)))
    }
}

impl Classifier for TrainedModel {
    fn input_domain(&self) -> Domain {
        self.domain
    }

    fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn predict_proba(&self, x: &[FeatureMatrix]) -> Result<Vec<Vec<f64>>> {
        let encoded = self.encode(x)?;
        let width = self.standardizer.mean.len();
        let classes = self.num_classes();
        let mut out = Vec::with_capacity(x.len());
        for chunk in encoded.chunks(EVAL_BATCH * width.max(1)) {
            let y = self.net.predict(&self.batch(chunk.to_vec(), chunk.len() / width)?)?;
            y.ensure_finite("model output")?;
            out.extend(y.data().chunks_exact(classes).map(|r| r.iter().map(|v| *v as f64).collect()));
        }
        Ok(out)
    }
}

/// Serialisable description of a model without its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub arch: ArchId,
    pub domain: Domain,
    pub class_names: Vec<String>,
    pub layers: Vec<LayerSpec>,
    pub input_shape: Vec<usize>,
    pub trainable: Vec<bool>,
    pub standardizer: Standardizer,
    pub seed: u64,
    pub training: TrainReport,
}

impl TrainedModel {
    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            arch: self.arch,
            domain: self.domain,
            class_names: self.class_names.clone(),
            layers: self.net.specs().to_vec(),
            input_shape: self.net.input_shape().to_vec(),
            trainable: self.net.trainable().to_vec(),
            standardizer: self.standardizer.clone(),
            seed: self.seed,
            training: self.report.clone(),
        }
    }

    pub fn from_meta(meta: ModelMeta, params: &[f32]) -> Result<Self> {
        let mut net = Network::new(meta.layers, meta.input_shape)?;
        if meta.trainable.len() != net.specs().len() {
            return Err(Error::Format("trainable mask does not match the layers".into()));
        }
        for (i, t) in meta.trainable.iter().enumerate() {
            net.set_trainable(i, *t);
        }
        net.load_flat_params(params)?;
        if *net.output_shape() != [meta.class_names.len()] {
            return Err(Error::Format("network output does not match the class list".into()));
        }
        Ok(Self {
            arch: meta.arch,
            domain: meta.domain,
            class_names: meta.class_names,
            standardizer: meta.standardizer,
            net,
            seed: meta.seed,
            report: meta.training,
        })
    }
}
