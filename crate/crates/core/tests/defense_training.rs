mod common;

use amclab::archzoo::{ArchId, AE_ENCODER_LAYERS};
use amclab::defenses::{
    ade_construct, augment, autoencoder_pretrain_parts, gaussian_smoothing_train, member_seed, reconstruction_mse,
    train_model, DefenseConfig, SplitData,
};
use amclab::labharness::eval_accuracy;
use amclab::sigsynth::Split;
use amclab::tensornet::{Classifier, TrainConfig};
use amclab::{Domain, FeatureMatrix};
use common::{quick_config, tiny_dataset, Split2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn ade_members_train_on_n_times_k_samples() {
    let ds = tiny_dataset(4);
    let tr = Split2::new(&ds, Split::Train, Domain::Time);
    let va = Split2::new(&ds, Split::Val, Domain::Time);
    let x = &tr.x[..10];
    let labels = &tr.labels[..10];
    let cfg = DefenseConfig {
        arch_ids: vec![ArchId::Fcnn, ArchId::Fcnn],
        copies: 3,
        width_scale: 0.125,
        train: TrainConfig {
            max_epochs: 2,
            ..quick_config(5)
        },
        ..DefenseConfig::default()
    };
    let e = ade_construct(&ds.class_names, SplitData { x, labels }, va.data(), &cfg).unwrap();
    assert_eq!(e.members(), 2);
    for m in e.time_members.iter().chain(&e.freq_members) {
        assert_eq!(m.report.train_samples, 30);
    }
    assert!(e.freq_members.iter().all(|m| m.domain == Domain::Frequency));
    let hashes: Vec<String> = e.time_members.iter().chain(&e.freq_members).map(|m| m.hash()).collect();
    for i in 0..hashes.len() {
        for j in i + 1..hashes.len() {
            assert_ne!(hashes[i], hashes[j]);
        }
    }
}

#[test]
fn noiseless_single_copy_members_equal_plain_training() {
    let ds = tiny_dataset(6);
    let tr = Split2::new(&ds, Split::Train, Domain::Time);
    let va = Split2::new(&ds, Split::Val, Domain::Time);
    let cfg = DefenseConfig {
        arch_ids: vec![ArchId::Fcnn],
        copies: 1,
        sigma_iq: 0.0,
        sigma_dft: 0.0,
        width_scale: 0.125,
        train: quick_config(8),
        ..DefenseConfig::default()
    };
    let e = ade_construct(&ds.class_names, tr.data(), va.data(), &cfg).unwrap();
    let plain_cfg = TrainConfig {
        seed: member_seed(8, Domain::Time, 0),
        ..quick_config(8)
    };
    let plain = train_model(ArchId::Fcnn, &ds.class_names, tr.data(), va.data(), 0.125, &plain_cfg).unwrap();
    assert_eq!(e.time_members[0].hash(), plain.hash());
}

#[test]
fn smoothing_degenerates_to_plain_training() {
    let ds = tiny_dataset(7);
    let tr = Split2::new(&ds, Split::Train, Domain::Time);
    let va = Split2::new(&ds, Split::Val, Domain::Time);
    let cfg = quick_config(3);
    let plain = train_model(ArchId::Fcnn, &ds.class_names, tr.data(), va.data(), 0.125, &cfg).unwrap();
    let smooth = gaussian_smoothing_train(ArchId::Fcnn, &ds.class_names, tr.data(), va.data(), 1, 0.0, 0.125, &cfg).unwrap();
    assert_eq!(plain.hash(), smooth.hash());

    let k3 = gaussian_smoothing_train(ArchId::Fcnn, &ds.class_names, tr.data(), va.data(), 3, 0.001, 0.125, &cfg).unwrap();
    assert_eq!(k3.report.train_samples, 3 * tr.x.len());
}

#[test]
fn light_smoothing_keeps_clean_accuracy() {
    let ds = amclab::sigsynth::generate_dataset(&amclab::sigsynth::GenerationConfig {
        per_class: 200,
        len: 64,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let tr = Split2::new(&ds, Split::Train, Domain::Time);
    let va = Split2::new(&ds, Split::Val, Domain::Time);
    let te = Split2::new(&ds, Split::Test, Domain::Time);
    let cfg = TrainConfig {
        max_epochs: 60,
        patience: 10,
        seed: 2,
        ..TrainConfig::default()
    };
    let plain = train_model(ArchId::Fcnn, &ds.class_names, tr.data(), va.data(), 0.25, &cfg).unwrap();
    let smooth = gaussian_smoothing_train(ArchId::Fcnn, &ds.class_names, tr.data(), va.data(), 1, 0.001, 0.25, &cfg).unwrap();
    let a = eval_accuracy(&plain, &te.x, &te.labels).unwrap().accuracy;
    let b = eval_accuracy(&smooth, &te.x, &te.labels).unwrap().accuracy;
    assert!((a - b).abs() <= 0.03, "plain {a} smoothed {b}");
}

fn prototype_data(n: usize, seed: u64) -> (Vec<FeatureMatrix>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let x = labels
        .iter()
        .map(|&c| {
            let values = protos[c].iter().map(|v| v + rng.gen_range(-1e-4..1e-4)).collect();
            FeatureMatrix::from_values(values, Domain::Time).unwrap()
        })
        .collect();
    (x, labels)
}

#[test]
fn autoencoder_reconstructs_toy_data_and_keeps_its_encoder_frozen() {
    let (x, labels) = prototype_data(200, 1);
    let (vx, vl) = prototype_data(40, 1);
    let names: Vec<String> = (0..4).map(|c| format!("c{c}")).collect();
    let cfg = TrainConfig {
        max_epochs: 150,
        patience: 150,
        seed: 4,
        ..TrainConfig::default()
    };
    let parts = autoencoder_pretrain_parts(&names, SplitData { x: &x, labels: &labels }, SplitData { x: &vx, labels: &vl }, &cfg).unwrap();
    let mse = reconstruction_mse(&parts.autoencoder, &parts.model.encode(&vx).unwrap()).unwrap();
    assert!(mse < 1e-3, "reconstruction MSE {mse}");
    for layer in 0..AE_ENCODER_LAYERS {
        assert_eq!(parts.model.net.params()[layer], parts.autoencoder.params()[layer]);
        assert!(!parts.model.net.trainable()[layer]);
    }
    for p in parts.model.predict_proba(&vx).unwrap() {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn augmentation_count_and_order() {
    let (x, labels) = prototype_data(10, 2);
    let (ax, al) = augment(&x, &labels, 3, 0.01, false, 0).unwrap();
    assert_eq!(ax.len(), 30);
    assert_eq!(al, labels.iter().flat_map(|&l| [l; 3]).collect::<Vec<_>>());
}
