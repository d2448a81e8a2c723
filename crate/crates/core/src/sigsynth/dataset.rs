use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::channel::{apply_channel, random_channel, Impairments};
use super::modulation::{modulate, Scheme};
use super::signal::{normalize_energy, Domain, Signal};
use crate::error::{Error, Result};
use crate::seed;
use crate::spectral::{self, FeatureMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub schemes: Vec<Scheme>,
    pub per_class: usize,
    pub len: usize,
    pub sps: usize,
    pub snr_db: f64,
    pub seed: u64,
    #[serde(default)]
    pub impairments: Impairments,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            schemes: vec![Scheme::Cpfsk, Scheme::Gfsk, Scheme::Pam4, Scheme::Qpsk],
            per_class: 1000,
            len: 128,
            sps: 8,
            snr_db: 18.0,
            seed: 0,
            impairments: Impairments::default(),
        }
    }
}

/// Signals with class labels and a train/val/test assignment per record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub signals: Vec<Signal>,
    /// Class index per record; `one_hot` expands it.
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub splits: Vec<Split>,
    pub len: usize,
    pub snr_db: f64,
    pub seed: u64,
}

/// Per-class record counts for the 70/15/15 split.
pub fn split_counts(per_class: usize) -> (usize, usize, usize) {
    let train = (per_class as f64 * 0.70).round() as usize;
    let val = (per_class as f64 * 0.15).round() as usize;
    (train, val, per_class - train - val)
}

pub fn generate_dataset(cfg: &GenerationConfig) -> Result<LabeledDataset> {
    if cfg.schemes.len() < 2 {
        return Err(Error::Config("need at least two schemes".into()));
    }
    if cfg.per_class < 10 {
        return Err(Error::Config(format!(
            "{} signals per class is too few to split",
            cfg.per_class
        )));
    }
    let (n_train, n_val, n_test) = split_counts(cfg.per_class);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config("per-class count too small to split".into()));
    }
    let total = cfg.schemes.len() * cfg.per_class;
    let signals: Vec<Signal> = (0..total)
        .into_par_iter()
        .map(|i| {
            let scheme = cfg.schemes[i / cfg.per_class];
            let mut rng = seed::rng(cfg.seed, seed::stream::BITS, i as u64);
            let bits: Vec<u8> = (0..scheme.bits_needed(cfg.len, cfg.sps))
                .map(|_| rng.gen_range(0..2u8))
                .collect();
            let s = modulate(&bits, scheme, cfg.sps, cfg.len)?;
            let ch = random_channel(cfg.len, cfg.impairments, &mut rng);
            normalize_energy(&apply_channel(&s, &ch, cfg.snr_db)?)
        })
        .collect::<Result<_>>()?;

    let mut split_rng = seed::rng(cfg.seed, seed::stream::SPLIT, 0);
    let mut assignment = vec![Split::Train; total];
    for class in 0..cfg.schemes.len() {
        let mut idx: Vec<usize> = (class * cfg.per_class..(class + 1) * cfg.per_class).collect();
        idx.shuffle(&mut split_rng);
        for &i in &idx[n_train..n_train + n_val] {
            assignment[i] = Split::Val;
        }
        for &i in &idx[n_train + n_val..] {
            assignment[i] = Split::Test;
        }
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut split_rng);

    let mut ds = LabeledDataset {
        signals: Vec::with_capacity(total),
        labels: Vec::with_capacity(total),
        class_names: cfg.schemes.iter().map(|s| s.to_string()).collect(),
        splits: Vec::with_capacity(total),
        len: cfg.len,
        snr_db: cfg.snr_db,
        seed: cfg.seed,
    };
    let mut signals: Vec<Option<Signal>> = signals.into_iter().map(Some).collect();
    for i in order {
        ds.signals.push(signals[i].take().expect("each record is placed once"));
        ds.labels.push(i / cfg.per_class);
        ds.splits.push(assignment[i]);
    }
    Ok(ds)
}

impl LabeledDataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn size(&self) -> usize {
        self.signals.len()
    }

    pub fn domain(&self) -> Domain {
        self.signals.first().map_or(Domain::Time, |s| s.domain)
    }

    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_classes()];
        v[self.labels[i]] = 1.0;
        v
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.size()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Records of one split, in dataset order.
    pub fn subset(&self, split: Split) -> LabeledDataset {
        self.select(&self.indices(split))
    }

    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            signals: indices.iter().map(|&i| self.signals[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            splits: indices.iter().map(|&i| self.splits[i]).collect(),
            len: self.len,
            snr_db: self.snr_db,
            seed: self.seed,
        }
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for (l, s) in self.labels.iter().zip(&self.splits) {
            if *s == split {
                counts[*l] += 1;
            }
        }
        counts
    }

    /// The same records re-expressed in `domain` via the DFT or its inverse.
    pub fn to_domain(&self, domain: Domain) -> Result<LabeledDataset> {
        let signals = self
            .signals
            .par_iter()
            .map(|s| spectral::convert(s, domain))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledDataset {
            signals,
            ..self.clone()
        })
    }

    /// ℓ×2 real matrices of every record, in the records' own domain.
    pub fn features(&self) -> Vec<FeatureMatrix> {
        self.signals.iter().map(FeatureMatrix::from_signal).collect()
    }
}
