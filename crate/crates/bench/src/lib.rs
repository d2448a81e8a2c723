//! Shared fixtures for the criterion benches.

use amclab::archzoo::ArchId;
use amclab::defenses::{train_model, SplitData};
use amclab::sigsynth::{generate_dataset, GenerationConfig, LabeledDataset, Split};
use amclab::tensornet::{TrainConfig, TrainedModel};
use amclab::{Domain, Result};

/// Small four-class dataset with 128-sample windows.
pub fn dataset(per_class: usize) -> Result<LabeledDataset> {
    generate_dataset(&GenerationConfig {
        per_class,
        seed: 3,
        ..GenerationConfig::default()
    })
}

/// A briefly trained classifier; weights only need to be realistic, not accurate.
pub fn model(ds: &LabeledDataset, arch: ArchId, domain: Domain, width_scale: f64) -> Result<TrainedModel> {
    let ds = ds.to_domain(domain)?;
    let (tr, va) = (ds.subset(Split::Train), ds.subset(Split::Val));
    let (tx, vx) = (tr.features(), va.features());
    let cfg = TrainConfig {
        max_epochs: 1,
        seed: 11,
        ..TrainConfig::default()
    };
    train_model(
        arch,
        &ds.class_names,
        SplitData { x: &tx, labels: &tr.labels },
        SplitData { x: &vx, labels: &va.labels },
        width_scale,
        &cfg,
    )
}
