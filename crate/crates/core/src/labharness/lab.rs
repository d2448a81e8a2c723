//! The desk-scale pipeline: generate, train every model, run the clean,
//! transfer and black-box experiments.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::experiments::{
    arch_transfer_experiment, blackbox_experiment, clean_experiment, domain_transfer_experiment, model_label, BlackboxArm,
    CraftCache, GridSpec, TestSet, Victim,
};
use super::report::ExperimentReport;
use crate::archzoo::ArchId;
use crate::defenses::{self, DefenseConfig, Ensemble, SplitData};
use crate::error::{Error, Result};
use crate::seed;
use crate::sigsynth::{generate_dataset, io::dataset_hash, GenerationConfig, LabeledDataset, Split};
use crate::spectral::FeatureMatrix;
use crate::tensornet::{TrainConfig, TrainedModel};
use crate::Domain;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabConfig {
    pub seed: u64,
    pub generation: GenerationConfig,
    pub width_scale: f64,
    pub train: TrainConfig,
    pub grid: GridSpec,
    pub defense: DefenseConfig,
    /// Architecture of the undefended and smoothed baselines.
    pub baseline_arch: ArchId,
    pub surrogate_arch: ArchId,
    /// Noisy copies per signal for the smoothing baseline.
    pub smoothing_copies: usize,
}

impl Default for LabConfig {
    fn default() -> Self {
        let train = TrainConfig {
            patience: 10,
            ..TrainConfig::default()
        };
        Self {
            seed: 1,
            generation: GenerationConfig::default(),
            width_scale: 0.25,
            train: train.clone(),
            grid: GridSpec::default(),
            defense: DefenseConfig {
                copies: 3,
                width_scale: 0.25,
                train,
                ..DefenseConfig::default()
            },
            baseline_arch: ArchId::Cnn,
            surrogate_arch: ArchId::SurrogateCnn,
            smoothing_copies: 3,
        }
    }
}

impl LabConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.grid.validate()?;
        self.defense.validate()?;
        if !(self.width_scale > 0.0 && self.width_scale <= 1.0) {
            return Err(Error::Config(format!("width_scale {} outside (0, 1]", self.width_scale)));
        }
        if self.smoothing_copies == 0 {
            return Err(Error::Config("smoothing needs at least one copy".into()));
        }
        if !ArchId::CLASSIFIERS.contains(&self.baseline_arch) {
            return Err(Error::Config(format!("baseline {} is not one of the four classifiers", self.baseline_arch)));
        }
        Ok(())
    }

    fn model_seed(&self, slot: u64) -> u64 {
        seed::derive(self.seed, seed::stream::MODEL, slot)
    }
}

/// Every model the lab trains.
#[derive(Clone, Debug)]
pub struct LabModels {
    /// The four classifiers over IQ samples, in [`ArchId::CLASSIFIERS`] order.
    pub time: Vec<TrainedModel>,
    /// The same four over DFT coefficients.
    pub freq: Vec<TrainedModel>,
    pub surrogates: Vec<TrainedModel>,
    pub smoothing: Vec<TrainedModel>,
    pub autoencoders: Vec<TrainedModel>,
    pub ade: Ensemble,
}

impl LabModels {
    pub fn classifiers(&self, domain: Domain) -> &[TrainedModel] {
        match domain {
            Domain::Time => &self.time,
            Domain::Frequency => &self.freq,
        }
    }

    fn per_domain(models: &[TrainedModel], domain: Domain) -> Result<&TrainedModel> {
        models
            .iter()
            .find(|m| m.domain == domain)
            .ok_or_else(|| Error::Config(format!("no {} model", domain.as_str())))
    }
}

#[derive(Clone, Debug)]
pub struct LabOutcome {
    pub dataset_hash: String,
    pub models: LabModels,
    pub clean: ExperimentReport,
    pub arch_transfer: ExperimentReport,
    pub domain_transfer: ExperimentReport,
    pub blackbox: ExperimentReport,
    /// Wall-clock seconds per stage, in execution order.
    pub timings: Vec<(String, f64)>,
}

impl LabOutcome {
    pub fn reports(&self) -> [&ExperimentReport; 4] {
        [&self.clean, &self.arch_transfer, &self.domain_transfer, &self.blackbox]
    }

    pub fn timing(&self, stage: &str) -> Option<f64> {
        self.timings.iter().find(|(s, _)| s == stage).map(|(_, t)| *t)
    }
}

struct Splits {
    x: [Vec<FeatureMatrix>; 2],
    labels: Vec<usize>,
}

impl Splits {
    fn new(ds: &LabeledDataset, split: Split) -> Result<Self> {
        let sub = ds.subset(split);
        Ok(Self {
            x: [sub.to_domain(Domain::Time)?.features(), sub.to_domain(Domain::Frequency)?.features()],
            labels: sub.labels,
        })
    }

    fn data(&self, domain: Domain) -> SplitData<'_> {
        let x = match domain {
            Domain::Time => &self.x[0],
            Domain::Frequency => &self.x[1],
        };
        SplitData { x, labels: &self.labels }
    }
}

fn domain_slot(domain: Domain) -> u64 {
    u64::from(domain == Domain::Frequency)
}

fn sigma_for(cfg: &DefenseConfig, domain: Domain) -> f64 {
    match domain {
        Domain::Time => cfg.sigma_iq,
        Domain::Frequency => cfg.sigma_dft,
    }
}

struct Stopwatch(Vec<(String, f64)>, Instant);

impl Stopwatch {
    fn lap(&mut self, stage: &str) {
        let t = self.1.elapsed().as_secs_f64();
        info!("{stage}: {t:.1}s");
        self.0.push((stage.to_string(), t));
        self.1 = Instant::now();
    }
}

/// Trains the eight clean classifiers only.
pub fn train_classifiers(cfg: &LabConfig, ds: &LabeledDataset) -> Result<(Vec<TrainedModel>, Vec<TrainedModel>)> {
    let train = Splits::new(ds, Split::Train)?;
    let val = Splits::new(ds, Split::Val)?;
    let mut out = (Vec::new(), Vec::new());
    for domain in [Domain::Time, Domain::Frequency] {
        for (i, &arch) in ArchId::CLASSIFIERS.iter().enumerate() {
            let tc = TrainConfig {
                seed: cfg.model_seed(2 * i as u64 + domain_slot(domain)),
                ..cfg.train.clone()
            };
            let t = Instant::now();
            let m = defenses::train_model(arch, &ds.class_names, train.data(domain), val.data(domain), cfg.width_scale, &tc)?;
            info!("trained {} in {:.1}s ({} epochs)", model_label(&m), t.elapsed().as_secs_f64(), m.report.history.len());
            match domain {
                Domain::Time => out.0.push(m),
                Domain::Frequency => out.1.push(m),
            }
        }
    }
    Ok(out)
}

/// Runs the whole pipeline from the generation config.
pub fn run_lab(cfg: &LabConfig) -> Result<LabOutcome> {
    cfg.validate()?;
    let mut watch = Stopwatch(Vec::new(), Instant::now());
    let ds = generate_dataset(&GenerationConfig {
        seed: cfg.seed,
        ..cfg.generation.clone()
    })?;
    let hash = dataset_hash(&ds)?;
    watch.lap("generate");

    let (time, freq) = train_classifiers(cfg, &ds)?;
    watch.lap("train_classifiers");

    let train = Splits::new(&ds, Split::Train)?;
    let val = Splits::new(&ds, Split::Val)?;
    let names = &ds.class_names;
    let mut surrogates = Vec::new();
    let mut smoothing = Vec::new();
    let mut autoencoders = Vec::new();
    for domain in [Domain::Time, Domain::Frequency] {
        let d = domain_slot(domain);
        let tc = |slot: u64| TrainConfig {
            seed: cfg.model_seed(slot + d),
            ..cfg.train.clone()
        };
        let (tr, va) = (train.data(domain), val.data(domain));
        surrogates.push(defenses::train_model(cfg.surrogate_arch, names, tr, va, cfg.width_scale, &tc(100))?);
        smoothing.push(defenses::gaussian_smoothing_train(
            cfg.baseline_arch,
            names,
            tr,
            va,
            cfg.smoothing_copies,
            sigma_for(&cfg.defense, domain),
            cfg.width_scale,
            &tc(200),
        )?);
        autoencoders.push(defenses::autoencoder_pretrain(names, tr, va, &tc(300))?);
    }
    watch.lap("train_baselines");

    let ade_cfg = DefenseConfig {
        train: TrainConfig {
            seed: cfg.seed,
            ..cfg.defense.train.clone()
        },
        ..cfg.defense.clone()
    };
    let ade = defenses::ade_construct(names, train.data(Domain::Time), val.data(Domain::Time), &ade_cfg)?;
    watch.lap("train_ade");

    let models = LabModels {
        time,
        freq,
        surrogates,
        smoothing,
        autoencoders,
        ade,
    };
    let test = TestSet::from_dataset(&ds.subset(Split::Test))?;
    let (clean, arch_transfer, domain_transfer, blackbox) = run_experiments(cfg, &models, &test, &mut watch)?;
    let mut outcome = LabOutcome {
        dataset_hash: hash,
        models,
        clean,
        arch_transfer,
        domain_transfer,
        blackbox,
        timings: Vec::new(),
    };
    for r in [
        &mut outcome.clean,
        &mut outcome.arch_transfer,
        &mut outcome.domain_transfer,
        &mut outcome.blackbox,
    ] {
        r.provenance.dataset_hash = outcome.dataset_hash.clone();
        r.provenance.master_seed = cfg.seed;
    }
    outcome.timings = watch.0;
    Ok(outcome)
}

type Reports = (ExperimentReport, ExperimentReport, ExperimentReport, ExperimentReport);

fn run_experiments(cfg: &LabConfig, m: &LabModels, test: &TestSet, watch: &mut Stopwatch) -> Result<Reports> {
    let mut victims: Vec<Victim<'_>> = m
        .time
        .iter()
        .chain(&m.freq)
        .chain(&m.surrogates)
        .map(|x| Victim::single(model_label(x), x))
        .collect();
    for x in &m.smoothing {
        victims.push(Victim::single(format!("smoothing/{}", x.domain.as_str()), x));
    }
    for x in &m.autoencoders {
        victims.push(Victim::single(model_label(x), x));
    }
    victims.push(Victim::ensemble("ade", &m.ade));
    let clean = clean_experiment(&victims, test)?;
    watch.lap("clean");

    let cache = CraftCache::new();
    let mut arch = None;
    for domain in [Domain::Time, Domain::Frequency] {
        let refs: Vec<&TrainedModel> = m.classifiers(domain).iter().collect();
        let r = arch_transfer_experiment(&refs, &cfg.grid, test, &cache)?;
        arch = Some(match arch {
            None => r,
            Some(mut acc) => {
                merge(&mut acc, r);
                acc
            }
        });
    }
    let arch = arch.expect("two domains");
    watch.lap("arch_transfer");

    let pairs: Vec<(&TrainedModel, &TrainedModel)> = m.time.iter().zip(&m.freq).collect();
    let domain = domain_transfer_experiment(&pairs, &cfg.grid, test, &cache)?;
    watch.lap("domain_transfer");
    drop(cache);

    let baseline = |d: Domain| -> Result<&TrainedModel> {
        m.classifiers(d)
            .iter()
            .find(|x| x.arch == cfg.baseline_arch)
            .ok_or_else(|| Error::Config(format!("no {} baseline", cfg.baseline_arch)))
    };
    let mut arms = Vec::new();
    for d in [Domain::Time, Domain::Frequency] {
        arms.push(BlackboxArm {
            surrogate: LabModels::per_domain(&m.surrogates, d)?,
            defenses: vec![
                Victim::ensemble("ade", &m.ade),
                Victim::single(format!("none/{}", d.as_str()), baseline(d)?),
                Victim::single(format!("smoothing/{}", d.as_str()), LabModels::per_domain(&m.smoothing, d)?),
                Victim::single(format!("autoencoder/{}", d.as_str()), LabModels::per_domain(&m.autoencoders, d)?),
            ],
        });
    }
    let blackbox = blackbox_experiment(arms, &cfg.grid, test, &CraftCache::new())?;
    watch.lap("blackbox");
    Ok((clean, arch, domain, blackbox))
}

fn merge(into: &mut ExperimentReport, other: ExperimentReport) {
    into.cells.extend(other.cells);
    into.clean.extend(other.clean);
    into.confusions.extend(other.confusions);
    for r in other.provenance.models {
        if !into.provenance.models.contains(&r) {
            into.provenance.models.push(r);
        }
    }
    into.provenance.wall_clock_s += other.provenance.wall_clock_s;
}
