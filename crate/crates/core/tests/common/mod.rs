#![allow(dead_code)]

use amclab::archzoo::ArchId;
use amclab::defenses::{train_model, SplitData};
use amclab::labharness::TestSet;
use amclab::sigsynth::{generate_dataset, GenerationConfig, LabeledDataset, Split};
use amclab::tensornet::{TrainConfig, TrainedModel};
use amclab::{Domain, FeatureMatrix};

pub fn tiny_dataset(seed: u64) -> LabeledDataset {
    generate_dataset(&GenerationConfig {
        per_class: 60,
        len: 64,
        seed,
        ..GenerationConfig::default()
    })
    .unwrap()
}

pub struct Split2 {
    pub x: Vec<FeatureMatrix>,
    pub labels: Vec<usize>,
}

impl Split2 {
    pub fn new(ds: &LabeledDataset, split: Split, domain: Domain) -> Self {
        let sub = ds.subset(split).to_domain(domain).unwrap();
        Self {
            x: sub.features(),
            labels: sub.labels,
        }
    }

    pub fn data(&self) -> SplitData<'_> {
        SplitData { x: &self.x, labels: &self.labels }
    }
}

pub fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: 8,
        patience: 8,
        seed,
        ..TrainConfig::default()
    }
}

pub fn quick_model(ds: &LabeledDataset, arch: ArchId, domain: Domain, seed: u64) -> TrainedModel {
    let tr = Split2::new(ds, Split::Train, domain);
    let va = Split2::new(ds, Split::Val, domain);
    train_model(arch, &ds.class_names, tr.data(), va.data(), 0.125, &quick_config(seed)).unwrap()
}

pub fn test_set(ds: &LabeledDataset) -> TestSet {
    TestSet::from_dataset(&ds.subset(Split::Test)).unwrap()
}
