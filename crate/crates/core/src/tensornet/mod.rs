//! Minimal network core: dense, convolutional and LSTM layers with
//! reverse-mode gradients, Adam training and checkpointing.

pub mod checkpoint;
pub mod model;
pub mod network;
pub mod ops;
pub mod optim;
pub mod real;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_model, save_model, CheckpointManifest};
pub use model::{Classifier, LabeledFeatures, ModelMeta, TrainedModel};
pub use network::{Gradients, LayerSpec, Network, Tape};
pub use ops::{cross_entropy, softmax, Activation};
pub use optim::{Adam, PlateauSchedule};
pub use real::Real;
pub use tensor::Tensor;
pub use train::{argmax, evaluate, train, EpochRecord, TrainConfig, TrainReport, TrainSet, Targets};
