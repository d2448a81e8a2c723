//! Transfer and black-box experiments over a PNR grid.
//!
//! Every experiment is a list of panels: one gradient source attacked at each
//! grid PNR, with the perturbed test split handed to several victims. The
//! perturbed waveform is converted to each victim's domain; the budget is set
//! in the source domain. Because the unnormalised DFT scales signal and
//! perturbation energy by the same factor ℓ, the PNR is the same in both
//! domains.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{eval_accuracy, Evaluation};
use super::report::{AttackRecord, Cell, CleanCell, ConfusionRecord, ExperimentKind, ExperimentReport, ModelRecord, Provenance};
use crate::attacks::{self, AttackConfig, AttackKind, DEFAULT_BIM_ALPHA_FRACTION, DEFAULT_BIM_ITERATIONS};
use crate::defenses::Ensemble;
use crate::error::{Error, Result};
use crate::sigsynth::LabeledDataset;
use crate::spectral::{convert_matrix, FeatureMatrix};
use crate::tensornet::{Classifier, TrainedModel};
use crate::Domain;

/// Default grid: −20 dB to +10 dB in 2 dB steps.
pub fn default_pnr_grid() -> Vec<f64> {
    (0..16).map(|i| -20.0 + 2.0 * i as f64).collect()
}

/// The test split in both domains.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSet {
    pub time: Vec<FeatureMatrix>,
    pub freq: Vec<FeatureMatrix>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub snr_db: f64,
}

impl TestSet {
    pub fn from_dataset(ds: &LabeledDataset) -> Result<Self> {
        if ds.size() == 0 {
            return Err(Error::Config("empty test split".into()));
        }
        Ok(Self {
            time: ds.to_domain(Domain::Time)?.features(),
            freq: ds.to_domain(Domain::Frequency)?.features(),
            labels: ds.labels.clone(),
            class_names: ds.class_names.clone(),
            snr_db: ds.snr_db,
        })
    }

    pub fn features(&self, domain: Domain) -> &[FeatureMatrix] {
        match domain {
            Domain::Time => &self.time,
            Domain::Frequency => &self.freq,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Mean clean power in `domain`, the PNR reference.
    pub fn received_power(&self, domain: Domain) -> Result<f64> {
        attacks::mean_power(self.features(domain))
    }

    /// The same set restricted to `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            time: indices.iter().map(|&i| self.time[i].clone()).collect(),
            freq: indices.iter().map(|&i| self.freq[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            snr_db: self.snr_db,
        }
    }
}

/// Iterative-attack settings; the one-step attack has none.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSettings {
    pub bim_iterations: usize,
    pub bim_alpha_fraction: f64,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            bim_iterations: DEFAULT_BIM_ITERATIONS,
            bim_alpha_fraction: DEFAULT_BIM_ALPHA_FRACTION,
        }
    }
}

impl AttackSettings {
    pub fn config(&self, kind: AttackKind, power: f64) -> AttackConfig {
        match kind {
            AttackKind::Fgsm => AttackConfig::fgsm(power),
            AttackKind::Bim => AttackConfig {
                kind,
                power,
                alpha: power * self.bim_alpha_fraction,
                iterations: self.bim_iterations,
            },
        }
    }

    pub fn record(&self, kind: AttackKind) -> AttackRecord {
        match kind {
            AttackKind::Fgsm => AttackRecord {
                kind,
                alpha_fraction: 1.0,
                iterations: 1,
            },
            AttackKind::Bim => AttackRecord {
                kind,
                alpha_fraction: self.bim_alpha_fraction,
                iterations: self.bim_iterations,
            },
        }
    }
}

/// Grid and attack settings shared by every panel of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub pnr_grid: Vec<f64>,
    pub kinds: Vec<AttackKind>,
    pub settings: AttackSettings,
    /// PNR whose confusion matrices are kept; the nearest grid point is used.
    pub highlight_pnr: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            pnr_grid: default_pnr_grid(),
            kinds: AttackKind::ALL.to_vec(),
            settings: AttackSettings::default(),
            highlight_pnr: 0.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pnr_grid.is_empty() || self.kinds.is_empty() {
            return Err(Error::Config("empty PNR grid or attack list".into()));
        }
        if self.pnr_grid.iter().any(|p| !p.is_finite()) || self.pnr_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("PNR grid must be finite and strictly increasing".into()));
        }
        self.settings.config(AttackKind::Bim, 1.0).validate()
    }

    fn highlight(&self) -> f64 {
        let mut best = self.pnr_grid[0];
        for &p in &self.pnr_grid {
            if (p - self.highlight_pnr).abs() < (best - self.highlight_pnr).abs() {
                best = p;
            }
        }
        best
    }
}

pub fn model_label(m: &TrainedModel) -> String {
    format!("{}/{}", m.arch, m.domain.as_str())
}

pub fn model_record(label: &str, m: &TrainedModel) -> ModelRecord {
    ModelRecord {
        label: label.to_string(),
        arch: m.arch,
        domain: m.domain,
        hash: m.hash(),
        seed: m.seed,
    }
}

/// A classifier under evaluation with the models it is built from.
pub struct Victim<'a> {
    pub label: String,
    pub model: &'a dyn Classifier,
    pub records: Vec<ModelRecord>,
}

impl<'a> Victim<'a> {
    pub fn single(label: impl Into<String>, m: &'a TrainedModel) -> Self {
        let label = label.into();
        Self {
            records: vec![model_record(&label, m)],
            label,
            model: m,
        }
    }

    pub fn ensemble(label: impl Into<String>, e: &'a Ensemble) -> Self {
        let label = label.into();
        let records = e
            .time_members
            .iter()
            .chain(&e.freq_members)
            .enumerate()
            .map(|(i, m)| model_record(&format!("{label}[{i}]"), m))
            .collect();
        Self { label, model: e, records }
    }
}

/// One gradient source and the victims that receive its perturbations.
pub struct Panel<'a> {
    pub source_label: String,
    pub source: &'a TrainedModel,
    pub victims: Vec<Victim<'a>>,
}

/// Perturbed test split in the source domain.
#[derive(Debug)]
pub struct Crafted {
    pub inputs: Vec<FeatureMatrix>,
    pub power: f64,
    pub degenerate: usize,
}

type CraftKey = (String, AttackKind, u64, u64);

/// Perturbed sets and one-step directions keyed by source hash, so that
/// experiments sharing a source craft each attack once.
#[derive(Default)]
pub struct CraftCache {
    crafted: Mutex<HashMap<CraftKey, Arc<Crafted>>>,
    directions: Mutex<HashMap<String, Arc<Vec<Option<FeatureMatrix>>>>>,
}

impl CraftCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.crafted.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn directions(&self, hash: &str, source: &TrainedModel, x: &[FeatureMatrix], labels: &[usize]) -> Result<Arc<Vec<Option<FeatureMatrix>>>> {
        if let Some(d) = self.directions.lock().expect("cache lock").get(hash) {
            return Ok(d.clone());
        }
        let d = Arc::new(attacks::fgsm_directions(source, x, labels)?);
        self.directions.lock().expect("cache lock").insert(hash.to_string(), d.clone());
        Ok(d)
    }

    /// Crafts (or fetches) the perturbed test split for one grid point.
    pub fn craft(
        &self,
        hash: &str,
        source: &TrainedModel,
        kind: AttackKind,
        pnr_db: f64,
        settings: &AttackSettings,
        test: &TestSet,
    ) -> Result<Arc<Crafted>> {
        let key = (hash.to_string(), kind, pnr_db.to_bits(), test_fingerprint(test, settings));
        if let Some(c) = self.crafted.lock().expect("cache lock").get(&key) {
            return Ok(c.clone());
        }
        let domain = source.domain;
        let x = test.features(domain);
        let power = attacks::budget_for_pnr(pnr_db, test.received_power(domain)?, test.snr_db)?;
        let perturbations = match kind {
            AttackKind::Fgsm => {
                let dirs = self.directions(hash, source, x, &test.labels)?;
                dirs.iter()
                    .zip(x)
                    .map(|(d, m)| attacks::scale_direction(d.as_ref(), m.rows(), domain, power))
                    .collect()
            }
            AttackKind::Bim => attacks::bim_batch(source, x, &test.labels, &settings.config(kind, power))?,
        };
        let crafted = Arc::new(Crafted {
            degenerate: perturbations.iter().filter(|p| p.degenerate).count(),
            inputs: attacks::apply_batch(x, &perturbations)?,
            power,
        });
        self.crafted.lock().expect("cache lock").insert(key, crafted.clone());
        Ok(crafted)
    }
}

fn test_fingerprint(test: &TestSet, settings: &AttackSettings) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    test.len().hash(&mut h);
    test.labels.hash(&mut h);
    test.snr_db.to_bits().hash(&mut h);
    for v in test.time.iter().flat_map(|m| &m.values) {
        v.to_bits().hash(&mut h);
    }
    settings.bim_iterations.hash(&mut h);
    settings.bim_alpha_fraction.to_bits().hash(&mut h);
    h.finish()
}

struct JobOutput {
    cells: Vec<Cell>,
    confusions: Vec<ConfusionRecord>,
}

fn check_classes(panels: &[Panel<'_>], test: &TestSet) -> Result<()> {
    let classes = test.class_names.len();
    for p in panels {
        if p.source.num_classes() != classes || p.victims.iter().any(|v| v.model.num_classes() != classes) {
            return Err(Error::Config("models disagree with the test split's class count".into()));
        }
    }
    Ok(())
}

/// Runs every panel at every grid point. Jobs run on the rayon pool; cells
/// come back in (panel, attack, PNR, victim) order.
pub fn run_panels(
    kind: ExperimentKind,
    panels: &[Panel<'_>],
    grid: &GridSpec,
    test: &TestSet,
    cache: &CraftCache,
) -> Result<ExperimentReport> {
    grid.validate()?;
    check_classes(panels, test)?;
    let started = Instant::now();
    let highlight = grid.highlight();
    let hashes: Vec<String> = panels.iter().map(|p| p.source.hash()).collect();
    let jobs: Vec<(usize, AttackKind, f64)> = panels
        .iter()
        .enumerate()
        .flat_map(|(i, _)| grid.kinds.iter().flat_map(move |&k| grid.pnr_grid.iter().map(move |&p| (i, k, p))))
        .collect();
    let outputs = jobs
        .par_iter()
        .map(|&(i, attack, pnr)| {
            let panel = &panels[i];
            let crafted = cache.craft(&hashes[i], panel.source, attack, pnr, &grid.settings, test)?;
            let mut converted: HashMap<Domain, Vec<FeatureMatrix>> = HashMap::new();
            let mut out = JobOutput { cells: Vec::new(), confusions: Vec::new() };
            for victim in &panel.victims {
                let domain = victim.model.input_domain();
                if domain != panel.source.domain && !converted.contains_key(&domain) {
                    let x = crafted
                        .inputs
                        .iter()
                        .map(|m| convert_matrix(m, domain))
                        .collect::<Result<Vec<_>>>()?;
                    converted.insert(domain, x);
                }
                let x = converted.get(&domain).map_or(crafted.inputs.as_slice(), Vec::as_slice);
                let e = eval_accuracy(victim.model, x, &test.labels)?;
                if pnr == highlight {
                    out.confusions.push(ConfusionRecord {
                        attack,
                        source: panel.source_label.clone(),
                        victim: victim.label.clone(),
                        pnr_db: pnr,
                        confusion: e.confusion.clone(),
                    });
                }
                out.cells.push(Cell {
                    attack,
                    source: panel.source_label.clone(),
                    victim: victim.label.clone(),
                    pnr_db: pnr,
                    power: crafted.power,
                    accuracy: e.accuracy,
                    correct: e.correct,
                    total: e.total,
                    degenerate: crafted.degenerate,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut victims: Vec<&Victim<'_>> = Vec::new();
    for v in panels.iter().flat_map(|p| &p.victims) {
        if !victims.iter().any(|u| u.label == v.label) {
            victims.push(v);
        }
    }
    let clean = victims
        .par_iter()
        .map(|v| {
            let domain = v.model.input_domain();
            let e: Evaluation = eval_accuracy(v.model, test.features(domain), &test.labels)?;
            Ok(CleanCell {
                victim: v.label.clone(),
                domain,
                accuracy: e.accuracy,
                correct: e.correct,
                total: e.total,
                confusion: e.confusion,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut models: Vec<ModelRecord> = Vec::new();
    let source_records = panels.iter().zip(&hashes).map(|(p, h)| ModelRecord {
        label: p.source_label.clone(),
        arch: p.source.arch,
        domain: p.source.domain,
        hash: h.clone(),
        seed: p.source.seed,
    });
    for r in source_records.chain(victims.iter().flat_map(|v| v.records.iter().cloned())) {
        if !models.contains(&r) {
            models.push(r);
        }
    }
    let mut received_power = std::collections::BTreeMap::new();
    for d in [Domain::Time, Domain::Frequency] {
        received_power.insert(d.as_str().to_string(), test.received_power(d)?);
    }
    let (mut cells, mut confusions) = (Vec::new(), Vec::new());
    for o in outputs {
        cells.extend(o.cells);
        confusions.extend(o.confusions);
    }
    Ok(ExperimentReport {
        kind,
        class_names: test.class_names.clone(),
        pnr_grid: grid.pnr_grid.clone(),
        cells,
        clean,
        confusions,
        provenance: Provenance {
            dataset_hash: String::new(),
            master_seed: 0,
            snr_db: test.snr_db,
            received_power,
            models,
            attacks: grid.kinds.iter().map(|&k| grid.settings.record(k)).collect(),
            wall_clock_s: started.elapsed().as_secs_f64(),
        },
    })
}

/// Same-domain models attacking each other: every model is a source and
/// every model a victim.
pub fn arch_transfer_experiment(models: &[&TrainedModel], grid: &GridSpec, test: &TestSet, cache: &CraftCache) -> Result<ExperimentReport> {
    let domain = models
        .first()
        .map(|m| m.domain)
        .ok_or_else(|| Error::Config("no models to compare".into()))?;
    if let Some(m) = models.iter().find(|m| m.domain != domain) {
        return Err(Error::DomainMismatch { expected: domain, got: m.domain });
    }
    let panels: Vec<Panel<'_>> = models
        .iter()
        .map(|&s| Panel {
            source_label: model_label(s),
            source: s,
            victims: models.iter().map(|&v| Victim::single(model_label(v), v)).collect(),
        })
        .collect();
    run_panels(ExperimentKind::ArchTransfer, &panels, grid, test, cache)
}

/// `(time, frequency)` pairs per architecture: each model attacks itself and
/// its counterpart in the other domain.
pub fn domain_transfer_experiment(
    pairs: &[(&TrainedModel, &TrainedModel)],
    grid: &GridSpec,
    test: &TestSet,
    cache: &CraftCache,
) -> Result<ExperimentReport> {
    if pairs.is_empty() {
        return Err(Error::Config("no model pairs".into()));
    }
    let mut panels = Vec::with_capacity(2 * pairs.len());
    for &(f, g) in pairs {
        if f.domain != Domain::Time {
            return Err(Error::DomainMismatch { expected: Domain::Time, got: f.domain });
        }
        if g.domain != Domain::Frequency {
            return Err(Error::DomainMismatch { expected: Domain::Frequency, got: g.domain });
        }
        if f.arch != g.arch {
            return Err(Error::Config(format!("pair mixes {} and {}", f.arch, g.arch)));
        }
        for (s, t) in [(f, g), (g, f)] {
            panels.push(Panel {
                source_label: model_label(s),
                source: s,
                victims: vec![Victim::single(model_label(s), s), Victim::single(model_label(t), t)],
            });
        }
    }
    run_panels(ExperimentKind::DomainTransfer, &panels, grid, test, cache)
}

/// A surrogate and the defended classifiers it is thrown at.
pub struct BlackboxArm<'a> {
    pub surrogate: &'a TrainedModel,
    pub defenses: Vec<Victim<'a>>,
}

/// Surrogate-crafted attacks, one panel per surrogate domain.
pub fn blackbox_experiment(arms: Vec<BlackboxArm<'_>>, grid: &GridSpec, test: &TestSet, cache: &CraftCache) -> Result<ExperimentReport> {
    if arms.is_empty() {
        return Err(Error::Config("no surrogate".into()));
    }
    let panels: Vec<Panel<'_>> = arms
        .into_iter()
        .map(|a| Panel {
            source_label: model_label(a.surrogate),
            source: a.surrogate,
            victims: a.defenses,
        })
        .collect();
    run_panels(ExperimentKind::Blackbox, &panels, grid, test, cache)
}

/// Clean accuracy of each victim, with no attack cells.
pub fn clean_experiment(victims: &[Victim<'_>], test: &TestSet) -> Result<ExperimentReport> {
    let started = Instant::now();
    let mut clean = Vec::with_capacity(victims.len());
    let mut models = Vec::new();
    for v in victims {
        let domain = v.model.input_domain();
        let e = eval_accuracy(v.model, test.features(domain), &test.labels)?;
        clean.push(CleanCell {
            victim: v.label.clone(),
            domain,
            accuracy: e.accuracy,
            correct: e.correct,
            total: e.total,
            confusion: e.confusion,
        });
        models.extend(v.records.iter().cloned());
    }
    Ok(ExperimentReport {
        kind: ExperimentKind::Clean,
        class_names: test.class_names.clone(),
        pnr_grid: Vec::new(),
        cells: Vec::new(),
        clean,
        confusions: Vec::new(),
        provenance: Provenance {
            snr_db: test.snr_db,
            models,
            wall_clock_s: started.elapsed().as_secs_f64(),
            ..Provenance::default()
        },
    })
}
