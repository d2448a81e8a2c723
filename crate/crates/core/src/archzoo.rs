//! Layer stacks for the four classifiers, the black-box surrogate and the
//! autoencoder baseline.
//!
//! Inputs are ℓ×2 matrices. Convolutional stacks view them as a 2×ℓ image,
//! the FCNN flattens them and the RNN reads them as ℓ steps of 2-vectors.
//! Convolutions are valid-mode with stride 1 and no pooling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensornet::LayerSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchId {
    #[serde(rename = "fcnn")]
    Fcnn,
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "rnn")]
    Rnn,
    #[serde(rename = "crnn")]
    Crnn,
    #[serde(rename = "surrogate_cnn")]
    SurrogateCnn,
    #[serde(rename = "autoencoder")]
    Autoencoder,
}

impl ArchId {
    pub const ALL: [ArchId; 6] = [
        ArchId::Fcnn,
        ArchId::Cnn,
        ArchId::Rnn,
        ArchId::Crnn,
        ArchId::SurrogateCnn,
        ArchId::Autoencoder,
    ];
    /// The four classifiers compared throughout the experiments.
    pub const CLASSIFIERS: [ArchId; 4] = [ArchId::Fcnn, ArchId::Cnn, ArchId::Rnn, ArchId::Crnn];

    pub fn name(self) -> &'static str {
        match self {
            ArchId::Fcnn => "fcnn",
            ArchId::Cnn => "cnn",
            ArchId::Rnn => "rnn",
            ArchId::Crnn => "crnn",
            ArchId::SurrogateCnn => "surrogate_cnn",
            ArchId::Autoencoder => "autoencoder",
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let id = match lower.as_str() {
            "fcnn" => ArchId::Fcnn,
            "cnn" => ArchId::Cnn,
            "rnn" => ArchId::Rnn,
            "crnn" => ArchId::Crnn,
            "surrogate_cnn" | "surrogate" | "vtcnn2" | "vt-cnn2" => ArchId::SurrogateCnn,
            "autoencoder" | "ae" => ArchId::Autoencoder,
            _ => return Err(Error::UnknownArch(s.to_string())),
        };
        Ok(id)
    }
}

/// Default dropout rate of the four classifiers.
pub const DROPOUT: f64 = 0.2;
/// Dropout rate of the surrogate's convolutions.
pub const SURROGATE_DROPOUT: f64 = 0.5;
/// Hidden width of the autoencoder encoder and decoder.
pub const AE_HIDDEN: usize = 256;
/// Latent width of the autoencoder.
pub const AE_LATENT: usize = 64;
/// Hidden width of the classifier head on the latent code.
pub const AE_HEAD: usize = 128;

fn scaled(n: usize, width_scale: f64) -> usize {
    ((n as f64 * width_scale).ceil() as usize).max(1)
}

fn conv(filters: usize, kernel_h: usize, kernel_w: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        filters,
        kernel_h,
        kernel_w,
        relu: true,
    }
}

fn relu(units: usize) -> LayerSpec {
    LayerSpec::Dense { units, relu: true }
}

fn linear(units: usize) -> LayerSpec {
    LayerSpec::Dense { units, relu: false }
}

fn drop(rate: f64) -> LayerSpec {
    LayerSpec::Dropout { rate }
}

/// Layer stack for `id` on ℓ×2 inputs with `classes` outputs.
///
/// For [`ArchId::Autoencoder`] this is the reconstruction network; its
/// classifier is assembled by [`autoencoder_classifier`].
pub fn build(id: ArchId, len: usize, classes: usize, width_scale: f64) -> Result<Vec<LayerSpec>> {
    if len < 8 {
        return Err(Error::Config(format!("window length {len} is below 8")));
    }
    if classes < 2 {
        return Err(Error::Config(format!("{classes} classes; need at least 2")));
    }
    if !(width_scale > 0.0 && width_scale <= 1.0) {
        return Err(Error::Config(format!("width_scale {width_scale} outside (0, 1]")));
    }
    let w = |n| scaled(n, width_scale);
    let stack = match id {
        ArchId::Fcnn => vec![
            LayerSpec::Flatten,
            relu(w(256)),
            drop(DROPOUT),
            relu(w(128)),
            drop(DROPOUT),
            relu(w(128)),
            drop(DROPOUT),
            linear(classes),
            LayerSpec::Softmax,
        ],
        ArchId::Cnn => vec![
            LayerSpec::AsImage,
            conv(w(256), 2, 5),
            drop(DROPOUT),
            conv(w(64), 1, 3),
            drop(DROPOUT),
            LayerSpec::Flatten,
            relu(w(128)),
            linear(classes),
            LayerSpec::Softmax,
        ],
        ArchId::Rnn => vec![
            LayerSpec::Lstm { hidden: w(75) },
            relu(w(128)),
            linear(classes),
            LayerSpec::Softmax,
        ],
        ArchId::Crnn => vec![
            LayerSpec::AsImage,
            conv(w(256), 2, 5),
            drop(DROPOUT),
            conv(w(128), 1, 4),
            drop(DROPOUT),
            LayerSpec::AsSequence,
            LayerSpec::Lstm { hidden: w(128) },
            relu(w(64)),
            linear(classes),
            LayerSpec::Softmax,
        ],
        ArchId::SurrogateCnn => vec![
            LayerSpec::AsImage,
            conv(w(256), 1, 3),
            drop(SURROGATE_DROPOUT),
            conv(w(80), 2, 3),
            drop(SURROGATE_DROPOUT),
            LayerSpec::Flatten,
            relu(w(256)),
            linear(classes),
            LayerSpec::Softmax,
        ],
        ArchId::Autoencoder => vec![
            LayerSpec::Flatten,
            relu(AE_HIDDEN),
            relu(AE_LATENT),
            relu(AE_HIDDEN),
            linear(2 * len),
        ],
    };
    Ok(stack)
}

/// Number of leading autoencoder layers that form the encoder.
pub const AE_ENCODER_LAYERS: usize = 3;

/// Encoder layers followed by the latent classifier head.
pub fn autoencoder_classifier(len: usize, classes: usize) -> Result<Vec<LayerSpec>> {
    let mut stack = build(ArchId::Autoencoder, len, classes, 1.0)?;
    stack.truncate(AE_ENCODER_LAYERS);
    stack.extend([relu(AE_HEAD), linear(classes), LayerSpec::Softmax]);
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::{Network, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_units(stack: &[LayerSpec]) -> Vec<usize> {
        stack
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { units, relu: true } => Some(*units),
                _ => None,
            })
            .collect()
    }

    fn filters(stack: &[LayerSpec]) -> Vec<usize> {
        stack
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv2d { filters, .. } => Some(*filters),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn fcnn_hidden_units() {
        assert_eq!(dense_units(&build(ArchId::Fcnn, 128, 4, 1.0).unwrap()), vec![256, 128, 128]);
    }

    #[test]
    fn cnn_filters_scale_up() {
        assert_eq!(filters(&build(ArchId::Cnn, 128, 4, 0.25).unwrap()), vec![64, 16]);
        assert_eq!(filters(&build(ArchId::Cnn, 128, 4, 1.0).unwrap()), vec![256, 64]);
        assert_eq!(filters(&build(ArchId::Crnn, 128, 4, 0.3).unwrap()), vec![77, 39]);
    }

    #[test]
    fn every_stack_composes_into_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for len in [64, 128] {
            for classes in [2, 4, 8] {
                for id in ArchId::ALL {
                    let stack = if id == ArchId::Autoencoder {
                        autoencoder_classifier(len, classes).unwrap()
                    } else {
                        build(id, len, classes, 0.125).unwrap()
                    };
                    let mut net = Network::<f32>::new(stack, vec![len, 2]).unwrap();
                    net.init(1);
                    assert_eq!(net.output_shape(), &[classes]);
                    let x: Vec<f64> = (0..2 * len).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let y = net.predict(&Tensor::from_f64(vec![1, len, 2], &x).unwrap()).unwrap();
                    let sum: f32 = y.data().iter().sum();
                    assert!((sum - 1.0).abs() < 1e-5, "{id} {len} {classes}");
                    assert!(y.data().iter().all(|p| (0.0..=1.0).contains(p)));
                }
                let ae = Network::<f32>::new(build(ArchId::Autoencoder, len, classes, 1.0).unwrap(), vec![len, 2]).unwrap();
                assert_eq!(ae.output_shape(), &[2 * len]);
            }
        }
    }

    #[test]
    fn full_width_parameter_counts_are_stable() {
        let count = |id| {
            Network::<f32>::new(build(id, 128, 4, 1.0).unwrap(), vec![128, 2])
                .unwrap()
                .param_count()
        };
        assert_eq!(count(ArchId::Fcnn), 115_716);
        assert_eq!(count(ArchId::Cnn), 1_052_100);
        assert_eq!(count(ArchId::Rnn), 33_644);
        assert_eq!(count(ArchId::Crnn), 274_116);
        assert_eq!(count(ArchId::SurrogateCnn), 2_664_788);
        assert_eq!(count(ArchId::Autoencoder), 164_672);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        assert!(matches!("resnet".parse::<ArchId>(), Err(Error::UnknownArch(_))));
        assert!(build(ArchId::Cnn, 4, 4, 1.0).is_err());
        assert!(build(ArchId::Cnn, 128, 1, 1.0).is_err());
        assert!(build(ArchId::Cnn, 128, 4, 0.0).is_err());
        assert!(build(ArchId::Cnn, 128, 4, 1.5).is_err());
    }

    #[test]
    fn names_roundtrip() {
        for id in ArchId::ALL {
            assert_eq!(id.to_string().parse::<ArchId>().unwrap(), id);
        }
    }
}
