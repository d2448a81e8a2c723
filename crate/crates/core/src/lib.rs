//! Adversarial robustness lab for deep-learning modulation classifiers.
//!
//! The crate synthesises labelled radio signals, trains small neural
//! classifiers on IQ samples or their DFT, crafts l2-budgeted FGSM and BIM
//! perturbations, and evaluates transfer attacks and ensemble defenses.

pub mod archzoo;
pub mod attacks;
pub mod defenses;
pub mod error;
pub mod labharness;
pub mod seed;
pub mod sigsynth;
pub mod spectral;
pub mod tensornet;

pub use archzoo::ArchId;
pub use attacks::{AttackConfig, AttackKind, Perturbation};
pub use defenses::Ensemble;
pub use error::{Error, Result};
pub use labharness::{ExperimentReport, LabConfig};
pub use sigsynth::{Domain, LabeledDataset, Scheme, Signal};
pub use spectral::FeatureMatrix;
pub use tensornet::{Classifier, TrainedModel};
