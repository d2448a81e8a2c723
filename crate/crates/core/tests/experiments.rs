mod common;

use amclab::archzoo::ArchId;
use amclab::attacks::AttackKind;
use amclab::defenses::Ensemble;
use amclab::labharness::{
    arch_transfer_experiment, blackbox_experiment, domain_transfer_experiment, emit_report, from_json, model_label,
    to_csv, to_json, BlackboxArm, CraftCache, ExperimentReport, GridSpec, ReportFormat, Victim,
};
use amclab::Domain;
use common::{quick_model, test_set, tiny_dataset};

fn grid(pnrs: &[f64], kinds: &[AttackKind]) -> GridSpec {
    GridSpec {
        pnr_grid: pnrs.to_vec(),
        kinds: kinds.to_vec(),
        ..GridSpec::default()
    }
}

struct Fixture {
    ds: amclab::LabeledDataset,
    fcnn_t: amclab::TrainedModel,
    cnn_t: amclab::TrainedModel,
    fcnn_f: amclab::TrainedModel,
}

fn fixture() -> Fixture {
    let ds = tiny_dataset(11);
    Fixture {
        fcnn_t: quick_model(&ds, ArchId::Fcnn, Domain::Time, 1),
        cnn_t: quick_model(&ds, ArchId::Cnn, Domain::Time, 2),
        fcnn_f: quick_model(&ds, ArchId::Fcnn, Domain::Frequency, 3),
        ds,
    }
}

fn arch_report(f: &Fixture, g: &GridSpec) -> ExperimentReport {
    arch_transfer_experiment(&[&f.fcnn_t, &f.cnn_t], g, &test_set(&f.ds), &CraftCache::new()).unwrap()
}

#[test]
fn arch_transfer_report_shape_and_artifacts() {
    let f = fixture();
    let g = grid(&[-10.0, -4.0, 2.0], &[AttackKind::Fgsm]);
    let r = arch_report(&f, &g);
    r.validate().unwrap();

    let csv = to_csv(&r).unwrap();
    assert_eq!(csv.lines().count() - 1, 2 + 2 * 2 * 3);
    assert_eq!(csv.lines().filter(|l| l.contains(",none,")).count(), 2);

    let back = from_json(&to_json(&r).unwrap()).unwrap();
    assert_eq!(back, r);

    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&r, dir.path(), "arch", &ReportFormat::ALL).unwrap();
    let svgs: Vec<_> = files.iter().filter(|p| p.extension().unwrap() == "svg").collect();
    assert_eq!(svgs.len(), 2);
    for path in svgs {
        let text = std::fs::read_to_string(path).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        let polylines: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("polyline")).collect();
        assert_eq!(polylines.len(), 2);
        for p in polylines {
            assert_eq!(p.attribute("points").unwrap().split_whitespace().count(), 3);
        }
    }
    let again = emit_report(&r, dir.path(), "arch2", &ReportFormat::ALL).unwrap();
    for (a, b) in files.iter().zip(&again) {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}

#[test]
fn zero_budget_matches_clean_and_reruns_are_identical() {
    let f = fixture();
    let g = grid(&[-300.0], &[AttackKind::Fgsm, AttackKind::Bim]);
    let r = arch_report(&f, &g);
    for c in &r.cells {
        let clean = r.clean_cell(&c.victim).unwrap();
        assert!((c.accuracy - clean.accuracy).abs() <= 0.01, "{} -> {}", c.source, c.victim);
    }
    assert_eq!(arch_report(&f, &g).cells, r.cells);
}

#[test]
fn provenance_lists_every_model() {
    let f = fixture();
    let r = arch_report(&f, &grid(&[0.0], &[AttackKind::Fgsm]));
    for m in [&f.fcnn_t, &f.cnn_t] {
        let rec = r.provenance.models.iter().find(|x| x.hash == m.hash()).unwrap();
        assert_eq!(rec.seed, m.seed);
        assert_eq!(rec.label, model_label(m));
    }
    assert_eq!(r.provenance.attacks.len(), 1);
    assert!(r.provenance.received_power["time"] > 0.0);
}

#[test]
fn white_box_potency_trend_is_roughly_monotone() {
    let ds = amclab::sigsynth::generate_dataset(&amclab::sigsynth::GenerationConfig {
        per_class: 200,
        len: 64,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let tr = common::Split2::new(&ds, amclab::sigsynth::Split::Train, Domain::Time);
    let va = common::Split2::new(&ds, amclab::sigsynth::Split::Val, Domain::Time);
    let cfg = amclab::tensornet::TrainConfig {
        max_epochs: 60,
        patience: 10,
        seed: 2,
        ..Default::default()
    };
    let m = amclab::defenses::train_model(ArchId::Fcnn, &ds.class_names, tr.data(), va.data(), 0.25, &cfg).unwrap();
    let pnrs: Vec<f64> = (0..16).map(|i| -20.0 + 2.0 * i as f64).collect();
    let r = arch_transfer_experiment(&[&m], &grid(&pnrs, &AttackKind::ALL), &test_set(&ds), &CraftCache::new()).unwrap();
    let label = model_label(&m);
    assert!(r.clean_cell(&label).unwrap().accuracy > 0.8);
    for kind in AttackKind::ALL {
        let curve = r.curve(kind, &label, &label);
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 0.03, "{kind}: {curve:?}");
        }
    }
}

#[test]
fn domain_transfer_covers_both_directions() {
    let f = fixture();
    let test = test_set(&f.ds);
    let g = GridSpec {
        highlight_pnr: 1.0,
        ..grid(&[-300.0, -6.0, 0.0], &[AttackKind::Fgsm])
    };
    let r = domain_transfer_experiment(&[(&f.fcnn_t, &f.fcnn_f)], &g, &test, &CraftCache::new()).unwrap();
    r.validate().unwrap();
    let (t, fr) = (model_label(&f.fcnn_t), model_label(&f.fcnn_f));
    assert_eq!(r.sources(), vec![t.as_str(), fr.as_str()]);
    assert_eq!(r.victims_of(&t), vec![t.as_str(), fr.as_str()]);
    assert_eq!(r.victims_of(&fr), vec![fr.as_str(), t.as_str()]);
    for c in r.cells.iter().filter(|c| c.pnr_db == -300.0) {
        assert!((c.accuracy - r.clean_cell(&c.victim).unwrap().accuracy).abs() <= 0.01);
    }
    // confusion matrices kept at the grid point nearest the highlight
    assert_eq!(r.confusions.len(), 4);
    assert!(r.confusions.iter().all(|c| c.pnr_db == 0.0));
    assert!(domain_transfer_experiment(&[(&f.fcnn_f, &f.fcnn_t)], &g, &test, &CraftCache::new()).is_err());
}

#[test]
fn blackbox_runs_ensembles_and_single_defenses() {
    let f = fixture();
    let test = test_set(&f.ds);
    let ade = Ensemble {
        time_members: vec![f.fcnn_t.clone()],
        freq_members: vec![f.fcnn_f.clone()],
        arch_ids: vec![ArchId::Fcnn],
        copies: 1,
        sigma_iq: 0.0,
        sigma_dft: 0.0,
    };
    let arms = vec![BlackboxArm {
        surrogate: &f.cnn_t,
        defenses: vec![Victim::ensemble("ade", &ade), Victim::single("none/time", &f.fcnn_t)],
    }];
    let r = blackbox_experiment(arms, &grid(&[-300.0, 0.0], &[AttackKind::Bim]), &test, &CraftCache::new()).unwrap();
    r.validate().unwrap();
    assert_eq!(r.cells.len(), 4);
    for c in r.cells.iter().filter(|c| c.pnr_db == -300.0) {
        assert!((c.accuracy - r.clean_cell(&c.victim).unwrap().accuracy).abs() <= 0.01);
    }
    for m in [&f.cnn_t, &f.fcnn_t, &f.fcnn_f] {
        assert!(r.provenance.models.iter().any(|x| x.hash == m.hash()));
    }
}
