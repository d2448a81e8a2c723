//! Subcommand implementations. Results are printed to stdout as JSON.

use std::fs;
use std::path::Path;

use amclab::archzoo::ArchId;
use amclab::attacks::{self, AttackProvenance};
use amclab::defenses::{self, load_ensemble, save_ensemble, DefenseConfig, SplitData};
use amclab::labharness::{emit_report, eval_accuracy, from_json, run_lab, AttackSettings, Evaluation};
use amclab::sigsynth::io::{read_dataset, write_dataset};
use amclab::sigsynth::{generate_dataset, LabeledDataset, Split};
use amclab::spectral::{from_matrix, FeatureMatrix};
use amclab::tensornet::{load_model, save_model, Classifier, TrainedModel};
use amclab::{Domain, Error, Result};
use log::info;
use serde_json::json;

use crate::config::{self, required, SplitSel};
use crate::Command;

macro_rules! set {
    ($target:expr, $flag:expr) => {
        if let Some(v) = $flag {
            $target = v;
        }
    };
}

fn print(value: serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn select(ds: &LabeledDataset, sel: SplitSel) -> Result<LabeledDataset> {
    let out = match sel.split() {
        Some(s) => ds.subset(s),
        None => ds.clone(),
    };
    if out.size() == 0 {
        return Err(Error::Config(format!("dataset has no {sel:?} records")));
    }
    Ok(out)
}

fn features(ds: &LabeledDataset, domain: Domain) -> Result<Vec<FeatureMatrix>> {
    Ok(ds.to_domain(domain)?.features())
}

fn evaluation_json(label: &str, e: &Evaluation) -> serde_json::Value {
    json!({
        "label": label,
        "accuracy": e.accuracy,
        "correct": e.correct,
        "total": e.total,
        "confusion": e.confusion,
    })
}

fn evaluate(label: &str, model: &dyn Classifier, ds: &LabeledDataset) -> Result<serde_json::Value> {
    let x = features(ds, model.input_domain())?;
    Ok(evaluation_json(label, &eval_accuracy(model, &x, &ds.labels)?))
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gen {
            cfg,
            schemes,
            per_class,
            len,
            sps,
            snr_db,
            seed,
            out,
        } => {
            let mut c: config::GenConfig = config::load(cfg.config.as_deref())?;
            set!(c.schemes, schemes);
            set!(c.per_class, per_class);
            set!(c.len, len);
            set!(c.sps, sps);
            set!(c.snr_db, snr_db);
            set!(c.seed, seed);
            c.out = out.or(c.out);
            let out = required(&c.out, "out")?;
            let ds = generate_dataset(&c.generation())?;
            write_dataset(&out, &ds, None)?;
            info!("wrote {} signals to {}", ds.size(), out.display());
            print(json!({
                "manifest": out,
                "count": ds.size(),
                "class_names": ds.class_names,
                "class_counts": Split::ALL.iter().map(|&s| ds.class_counts(s)).collect::<Vec<_>>(),
            }))
        }
        Command::Train {
            cfg,
            dataset,
            arch,
            domain,
            width_scale,
            train,
            out,
        } => {
            let mut c: config::TrainCmdConfig = config::load(cfg.config.as_deref())?;
            c.dataset = dataset.or(c.dataset);
            set!(c.arch, arch);
            set!(c.domain, domain);
            set!(c.width_scale, width_scale);
            set!(c.max_epochs, train.max_epochs);
            set!(c.batch_size, train.batch_size);
            set!(c.learning_rate, train.learning_rate);
            set!(c.patience, train.patience);
            set!(c.seed, train.seed);
            c.out = out.or(c.out);
            let out = required(&c.out, "out")?;
            let (ds, _) = read_dataset(&required(&c.dataset, "dataset")?)?;
            let model = train_model(&ds, &c)?;
            save_model(&out, &model)?;
            let test = ds.subset(Split::Test);
            let mut summary = json!({
                "manifest": out,
                "arch": model.arch,
                "domain": model.domain,
                "hash": model.hash(),
                "epochs": model.report.history.len(),
                "best_epoch": model.report.best_epoch,
                "best_val_loss": model.report.best_val_loss,
            });
            if test.size() > 0 {
                summary["test"] = evaluate("test", &model, &test)?;
            }
            print(summary)
        }
        Command::Attack {
            cfg,
            dataset,
            model,
            kind,
            pnr_db,
            power,
            bim_alpha_fraction,
            bim_iterations,
            split,
            out,
        } => {
            let mut c: config::AttackCmdConfig = config::load(cfg.config.as_deref())?;
            c.dataset = dataset.or(c.dataset);
            c.model = model.or(c.model);
            set!(c.kind, kind);
            set!(c.pnr_db, pnr_db);
            c.power = power.or(c.power);
            set!(c.bim_alpha_fraction, bim_alpha_fraction);
            set!(c.bim_iterations, bim_iterations);
            set!(c.split, split);
            c.out = out.or(c.out);
            attack(&c)
        }
        Command::Eval {
            cfg,
            dataset,
            model,
            ensemble,
            split,
        } => {
            let mut c: config::EvalCmdConfig = config::load(cfg.config.as_deref())?;
            c.dataset = dataset.or(c.dataset);
            c.model = model.or(c.model);
            c.ensemble = ensemble.or(c.ensemble);
            set!(c.split, split);
            let (ds, _) = read_dataset(&required(&c.dataset, "dataset")?)?;
            let ds = select(&ds, c.split)?;
            match (&c.model, &c.ensemble) {
                (Some(m), None) => print(evaluate(&m.display().to_string(), &load_model(m)?, &ds)?),
                (None, Some(e)) => print(evaluate(&e.display().to_string(), &load_ensemble(e)?, &ds)?),
                _ => Err(Error::Config("give exactly one of `model` and `ensemble`".into())),
            }
        }
        Command::Ensemble {
            cfg,
            dataset,
            arch_ids,
            copies,
            sigma_iq,
            sigma_dft,
            include_clean,
            width_scale,
            train,
            out,
        } => {
            let mut c: config::EnsembleCmdConfig = config::load(cfg.config.as_deref())?;
            c.dataset = dataset.or(c.dataset);
            set!(c.arch_ids, arch_ids);
            set!(c.copies, copies);
            set!(c.sigma_iq, sigma_iq);
            set!(c.sigma_dft, sigma_dft);
            set!(c.include_clean, include_clean);
            set!(c.width_scale, width_scale);
            set!(c.max_epochs, train.max_epochs);
            set!(c.batch_size, train.batch_size);
            set!(c.learning_rate, train.learning_rate);
            set!(c.patience, train.patience);
            set!(c.seed, train.seed);
            c.out = out.or(c.out);
            ensemble(&c)
        }
        Command::DefendEval {
            cfg,
            dataset,
            ensemble,
            baselines,
            split,
        } => {
            let mut c: config::DefendEvalCmdConfig = config::load(cfg.config.as_deref())?;
            c.dataset = dataset.or(c.dataset);
            c.ensemble = ensemble.or(c.ensemble);
            set!(c.baselines, baselines);
            set!(c.split, split);
            let (ds, manifest) = read_dataset(&required(&c.dataset, "dataset")?)?;
            let ds = select(&ds, c.split)?;
            let ade = load_ensemble(&required(&c.ensemble, "ensemble")?)?;
            let mut rows = vec![evaluate("ade", &ade, &ds)?];
            for path in &c.baselines {
                rows.push(evaluate(&path.display().to_string(), &load_model(path)?, &ds)?);
            }
            print(json!({ "attack": manifest.attack, "results": rows }))
        }
        Command::Report {
            cfg,
            seed,
            per_class,
            width_scale,
            patience,
            copies,
            pnr_grid,
            kinds,
            out_dir,
            formats,
            from,
        } => {
            let mut c: config::ReportCmdConfig = config::load(cfg.config.as_deref())?;
            let lab = &mut c.lab;
            set!(lab.seed, seed);
            set!(lab.generation.per_class, per_class);
            if let Some(w) = width_scale {
                lab.width_scale = w;
                lab.defense.width_scale = w;
            }
            if let Some(p) = patience {
                lab.train.patience = p;
                lab.defense.train.patience = p;
            }
            if let Some(k) = copies {
                lab.defense.copies = k;
                lab.smoothing_copies = k;
            }
            set!(lab.grid.pnr_grid, pnr_grid);
            set!(lab.grid.kinds, kinds);
            set!(c.out_dir, out_dir);
            set!(c.formats, formats);
            c.from = from.or(c.from);
            report(&c)
        }
    }
}

fn train_model(ds: &LabeledDataset, c: &config::TrainCmdConfig) -> Result<TrainedModel> {
    let ds = ds.to_domain(c.domain)?;
    let (tr, va) = (ds.subset(Split::Train), ds.subset(Split::Val));
    let (tx, vx) = (tr.features(), va.features());
    let train_data = SplitData { x: &tx, labels: &tr.labels };
    let val = SplitData { x: &vx, labels: &va.labels };
    let tc = c.train_config();
    if c.arch == ArchId::Autoencoder {
        defenses::autoencoder_pretrain(&ds.class_names, train_data, val, &tc)
    } else {
        defenses::train_model(c.arch, &ds.class_names, train_data, val, c.width_scale, &tc)
    }
}

fn attack(c: &config::AttackCmdConfig) -> Result<()> {
    let out = required(&c.out, "out")?;
    let (ds, _) = read_dataset(&required(&c.dataset, "dataset")?)?;
    let model = load_model(&required(&c.model, "model")?)?;
    let ds = select(&ds, c.split)?.to_domain(model.domain)?;
    let x = ds.features();
    let received = attacks::mean_power(&x)?;
    let power = match c.power {
        Some(p) => p,
        None => attacks::budget_for_pnr(c.pnr_db, received, ds.snr_db)?,
    };
    let settings = AttackSettings {
        bim_iterations: c.bim_iterations,
        bim_alpha_fraction: c.bim_alpha_fraction,
    };
    let acfg = settings.config(c.kind, power);
    acfg.validate()?;
    let perturbations = attacks::craft_batch(&model, &x, &ds.labels, &acfg)?;
    let perturbed = attacks::apply_batch(&x, &perturbations)?;
    let degenerate = perturbations.iter().filter(|p| p.degenerate).count();
    let pnr = attacks::pnr_db(power, received, ds.snr_db)?;
    let signals = perturbed.iter().map(from_matrix).collect::<Result<Vec<_>>>()?;
    let adv = LabeledDataset { signals, ..ds.clone() };
    let provenance = AttackProvenance {
        kind: c.kind,
        power,
        alpha: acfg.alpha,
        iterations: acfg.iterations,
        source_model: model.hash(),
        domain: model.domain,
        pnr_db: pnr,
        degenerate,
    };
    write_dataset(&out, &adv, Some(provenance.clone()))?;
    print(json!({
        "manifest": out,
        "attack": provenance,
        "clean": evaluation_json("clean", &eval_accuracy(&model, &x, &ds.labels)?),
        "adversarial": evaluation_json("adversarial", &eval_accuracy(&model, &perturbed, &ds.labels)?),
    }))
}

fn ensemble(c: &config::EnsembleCmdConfig) -> Result<()> {
    let out = required(&c.out, "out")?;
    let (ds, _) = read_dataset(&required(&c.dataset, "dataset")?)?;
    let ds = ds.to_domain(Domain::Time)?;
    let (tr, va) = (ds.subset(Split::Train), ds.subset(Split::Val));
    let (tx, vx) = (tr.features(), va.features());
    let dcfg = DefenseConfig {
        arch_ids: c.arch_ids.clone(),
        copies: c.copies,
        sigma_iq: c.sigma_iq,
        sigma_dft: c.sigma_dft,
        include_clean: c.include_clean,
        width_scale: c.width_scale,
        train: c.train_config(),
    };
    let ade = defenses::ade_construct(
        &ds.class_names,
        SplitData { x: &tx, labels: &tr.labels },
        SplitData { x: &vx, labels: &va.labels },
        &dcfg,
    )?;
    save_ensemble(&out, &ade)?;
    let test = ds.subset(Split::Test);
    let mut summary = json!({ "manifest": out, "members": 2 * ade.members() });
    if test.size() > 0 {
        summary["test"] = evaluate("ade", &ade, &test)?;
    }
    print(summary)
}

fn report(c: &config::ReportCmdConfig) -> Result<()> {
    if let Some(from) = &c.from {
        let r = from_json(&fs::read_to_string(from)?)?;
        r.validate()?;
        let files = emit_report(&r, &c.out_dir, r.kind.name(), &c.formats)?;
        return print(json!({ "files": files }));
    }
    let outcome = run_lab(&c.lab)?;
    let mut files = Vec::new();
    for r in outcome.reports() {
        files.extend(emit_report(r, &c.out_dir, r.kind.name(), &c.formats)?);
    }
    let summary = json!({
        "dataset_hash": outcome.dataset_hash,
        "seed": c.lab.seed,
        "timings_s": outcome.timings.iter().map(|(s, t)| json!({ "stage": s, "seconds": t })).collect::<Vec<_>>(),
        "clean": outcome.clean.clean.iter().map(|x| json!({ "victim": x.victim, "accuracy": x.accuracy })).collect::<Vec<_>>(),
        "files": files,
    });
    write_json(&c.out_dir.join("summary.json"), &summary)?;
    print(summary)
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}
