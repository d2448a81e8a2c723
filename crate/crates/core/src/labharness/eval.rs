use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::FeatureMatrix;
use crate::tensornet::Classifier;

/// Accuracy with its confusion matrix (rows: true class, columns: predicted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn from_predictions(predicted: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(Error::Shape(format!("{} predictions vs {} labels", predicted.len(), labels.len())));
        }
        if labels.is_empty() {
            return Err(Error::Config("cannot evaluate on an empty split".into()));
        }
        let mut confusion = vec![vec![0; classes]; classes];
        for (&p, &y) in predicted.iter().zip(labels) {
            if p >= classes || y >= classes {
                return Err(Error::Config(format!("class index outside 0..{classes}")));
            }
            confusion[y][p] += 1;
        }
        let correct = (0..classes).map(|c| confusion[c][c]).sum();
        Ok(Self {
            correct,
            total: labels.len(),
            accuracy: correct as f64 / labels.len() as f64,
            confusion,
        })
    }
}

/// Deterministic accuracy of any classifier on matrices in its input domain.
pub fn eval_accuracy<C: Classifier + ?Sized>(model: &C, x: &[FeatureMatrix], labels: &[usize]) -> Result<Evaluation> {
    let domain = model.input_domain();
    if let Some(m) = x.iter().find(|m| m.domain != domain) {
        return Err(Error::DomainMismatch { expected: domain, got: m.domain });
    }
    Evaluation::from_predictions(&model.predict(x)?, labels, model.num_classes())
}
