//! Assorted deep ensembles (time- and frequency-domain members trained on
//! Gaussian-noised copies) and the single-model baselines.

use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archzoo::{self, ArchId};
use crate::error::{Error, Result};
use crate::seed;
use crate::spectral::{convert_matrix, FeatureMatrix};
use crate::tensornet::{self, train, Classifier, LabeledFeatures, Network, Targets, TrainConfig, TrainSet, TrainedModel};
use crate::Domain;

pub use crate::tensornet::argmax;

/// Noise std for time-domain members.
pub const SIGMA_IQ: f64 = 0.001;
/// Noise std for frequency-domain members, in unnormalised DFT units.
pub const SIGMA_DFT: f64 = 0.005;

/// `2M` classifiers: `M` over IQ samples and `M` over their DFT.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble<M = TrainedModel> {
    pub time_members: Vec<M>,
    pub freq_members: Vec<M>,
    pub arch_ids: Vec<ArchId>,
    pub copies: usize,
    pub sigma_iq: f64,
    pub sigma_dft: f64,
}

/// Settings shared by the ensemble and the baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    pub arch_ids: Vec<ArchId>,
    /// Noisy copies per training signal.
    pub copies: usize,
    pub sigma_iq: f64,
    pub sigma_dft: f64,
    /// Keep the clean originals next to the noisy copies.
    #[serde(default)]
    pub include_clean: bool,
    pub width_scale: f64,
    pub train: TrainConfig,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            arch_ids: vec![ArchId::Cnn, ArchId::Crnn, ArchId::Cnn, ArchId::Crnn],
            copies: 30,
            sigma_iq: SIGMA_IQ,
            sigma_dft: SIGMA_DFT,
            include_clean: false,
            width_scale: 1.0,
            train: TrainConfig::default(),
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arch_ids.is_empty() {
            return Err(Error::Config("an ensemble needs at least one architecture".into()));
        }
        if self.copies == 0 {
            return Err(Error::Config("need at least one copy per signal".into()));
        }
        if !(self.sigma_iq >= 0.0 && self.sigma_dft >= 0.0) {
            return Err(Error::Config("noise standard deviations must be nonnegative".into()));
        }
        self.train.validate()
    }
}

/// Noisy copies of every matrix, signal-major: copy `j` of signal `i` sits at
/// `i * copies + j`. Entry noise is i.i.d. `N(0, sigma²)`.
pub fn augment(
    x: &[FeatureMatrix],
    labels: &[usize],
    copies: usize,
    sigma: f64,
    include_clean: bool,
    noise_seed: u64,
) -> Result<(Vec<FeatureMatrix>, Vec<usize>)> {
    if x.len() != labels.len() {
        return Err(Error::Shape(format!("{} inputs vs {} labels", x.len(), labels.len())));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let per = copies + usize::from(include_clean);
    let mut out = Vec::with_capacity(x.len() * per);
    let mut out_labels = Vec::with_capacity(x.len() * per);
    for (i, (m, &y)) in x.iter().zip(labels).enumerate() {
        let mut rng = seed::rng(noise_seed, seed::stream::AUGMENT, i as u64);
        if include_clean {
            out.push(m.clone());
            out_labels.push(y);
        }
        for _ in 0..copies {
            let values = if sigma == 0.0 {
                m.values.clone()
            } else {
                m.values.iter().map(|v| v + normal.sample(&mut rng)).collect()
            };
            out.push(FeatureMatrix { values, domain: m.domain });
            out_labels.push(y);
        }
    }
    Ok((out, out_labels))
}

/// Labelled matrices of one split, borrowed.
#[derive(Clone, Copy, Debug)]
pub struct SplitData<'a> {
    pub x: &'a [FeatureMatrix],
    pub labels: &'a [usize],
}

impl<'a> From<SplitData<'a>> for LabeledFeatures<'a> {
    fn from(d: SplitData<'a>) -> Self {
        LabeledFeatures { x: d.x, labels: d.labels }
    }
}

/// Trains one classifier of `arch` on `train_data`, validating on `val`.
pub fn train_model(
    arch: ArchId,
    class_names: &[String],
    train_data: SplitData<'_>,
    val: SplitData<'_>,
    width_scale: f64,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let len = train_data.x.first().map(FeatureMatrix::rows).ok_or_else(|| Error::Config("empty training set".into()))?;
    let net = Network::new(archzoo::build(arch, len, class_names.len(), width_scale)?, vec![len, 2])?;
    TrainedModel::fit(arch, net, class_names.to_vec(), train_data.into(), val.into(), cfg)
}

/// Seed of member `index` in `domain`, derived from the master seed.
pub fn member_seed(master: u64, domain: Domain, index: usize) -> u64 {
    let slot = 2 * index as u64 + u64::from(domain == Domain::Frequency);
    seed::derive(master, seed::stream::MEMBER, slot)
}

fn domain_sigma(cfg: &DefenseConfig, domain: Domain) -> f64 {
    match domain {
        Domain::Time => cfg.sigma_iq,
        Domain::Frequency => cfg.sigma_dft,
    }
}

/// Builds the ensemble: for each architecture, one member on noisy IQ copies
/// and one on noisy DFT copies. Training data in either domain are accepted
/// and converted as needed.
pub fn ade_construct(
    class_names: &[String],
    train_data: SplitData<'_>,
    val: SplitData<'_>,
    cfg: &DefenseConfig,
) -> Result<Ensemble> {
    cfg.validate()?;
    let data = [
        (to_domain(train_data.x, Domain::Time)?, to_domain(val.x, Domain::Time)?),
        (to_domain(train_data.x, Domain::Frequency)?, to_domain(val.x, Domain::Frequency)?),
    ];
    let jobs: Vec<(Domain, usize, ArchId)> = [Domain::Time, Domain::Frequency]
        .into_iter()
        .flat_map(|d| cfg.arch_ids.iter().enumerate().map(move |(i, &a)| (d, i, a)))
        .collect();
    let mut members = jobs
        .par_iter()
        .map(|&(domain, i, arch)| {
            let (tx, vx) = &data[usize::from(domain == Domain::Frequency)];
            let member_cfg = TrainConfig {
                seed: member_seed(cfg.train.seed, domain, i),
                ..cfg.train.clone()
            };
            let (ax, al) = augment(tx, train_data.labels, cfg.copies, domain_sigma(cfg, domain), cfg.include_clean, member_cfg.seed)?;
            train_model(
                arch,
                class_names,
                SplitData { x: &ax, labels: &al },
                SplitData { x: vx, labels: val.labels },
                cfg.width_scale,
                &member_cfg,
            )
            .map_err(|e| match e {
                Error::Divergence(msg) => Error::Divergence(format!("{domain:?} member {i} ({arch}): {msg}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let freq_members = members.split_off(cfg.arch_ids.len());
    let time_members = members;
    Ok(Ensemble {
        time_members,
        freq_members,
        arch_ids: cfg.arch_ids.clone(),
        copies: cfg.copies,
        sigma_iq: cfg.sigma_iq,
        sigma_dft: cfg.sigma_dft,
    })
}

fn to_domain(x: &[FeatureMatrix], domain: Domain) -> Result<Vec<FeatureMatrix>> {
    x.iter().map(|m| convert_matrix(m, domain)).collect()
}

impl<M: Classifier> Ensemble<M> {
    pub fn members(&self) -> usize {
        self.time_members.len()
    }

    fn check(&self) -> Result<usize> {
        if self.time_members.is_empty() || self.freq_members.is_empty() {
            return Err(Error::Config("ensemble has no members".into()));
        }
        if self.time_members.len() != self.freq_members.len() {
            return Err(Error::Config("ensemble needs as many frequency members as time members".into()));
        }
        let classes = self.time_members[0].num_classes();
        for (m, domain) in self
            .time_members
            .iter()
            .map(|m| (m, Domain::Time))
            .chain(self.freq_members.iter().map(|m| (m, Domain::Frequency)))
        {
            if m.input_domain() != domain {
                return Err(Error::DomainMismatch { expected: domain, got: m.input_domain() });
            }
            if m.num_classes() != classes {
                return Err(Error::Config("ensemble members disagree on the class count".into()));
            }
        }
        Ok(classes)
    }

    /// Averaged distributions for time-domain inputs: the `M` time members
    /// see `r_a`, the `M` frequency members see its DFT, and the `2M` rows
    /// are averaged column-wise.
    pub fn predict_proba_batch(&self, x: &[FeatureMatrix]) -> Result<Vec<Vec<f64>>> {
        let classes = self.check()?;
        if let Some(m) = x.iter().find(|m| m.domain != Domain::Time) {
            return Err(Error::DomainMismatch { expected: Domain::Time, got: m.domain });
        }
        let spectra = to_domain(x, Domain::Frequency)?;
        let mut sum = vec![vec![0.0; classes]; x.len()];
        let members: Vec<(&M, &[FeatureMatrix])> = self
            .time_members
            .iter()
            .map(|m| (m, x))
            .chain(self.freq_members.iter().map(|m| (m, spectra.as_slice())))
            .collect();
        // members run concurrently; rows are summed in fixed member order
        let rows = members
            .par_iter()
            .map(|(m, input)| m.predict_proba(input))
            .collect::<Result<Vec<_>>>()?;
        for member_rows in rows {
            for (acc, p) in sum.iter_mut().zip(member_rows) {
                for (a, v) in acc.iter_mut().zip(p) {
                    *a += v;
                }
            }
        }
        let scale = 1.0 / (2 * self.members()) as f64;
        for row in &mut sum {
            row.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(sum)
    }
}

/// Class index (lowest index on ties) and averaged distribution for one
/// time-domain signal.
pub fn ade_predict<M: Classifier>(ensemble: &Ensemble<M>, r_a: &FeatureMatrix) -> Result<(usize, Vec<f64>)> {
    let p = ensemble.predict_proba_batch(std::slice::from_ref(r_a))?.remove(0);
    Ok((argmax(&p), p))
}

impl<M: Classifier> Classifier for Ensemble<M> {
    fn input_domain(&self) -> Domain {
        Domain::Time
    }

    fn num_classes(&self) -> usize {
        self.time_members.first().map_or(0, |m| m.num_classes())
    }

    fn predict_proba(&self, x: &[FeatureMatrix]) -> Result<Vec<Vec<f64>>> {
        self.predict_proba_batch(x)
    }
}

/// Single model of `arch` retrained on noisy copies of its own domain's
/// training matrices.
pub fn gaussian_smoothing_train(
    arch: ArchId,
    class_names: &[String],
    train_data: SplitData<'_>,
    val: SplitData<'_>,
    copies: usize,
    sigma: f64,
    width_scale: f64,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    if copies == 0 || !(sigma >= 0.0) {
        return Err(Error::Config("smoothing needs copies >= 1 and sigma >= 0".into()));
    }
    let (ax, al) = augment(train_data.x, train_data.labels, copies, sigma, false, cfg.seed)?;
    train_model(arch, class_names, SplitData { x: &ax, labels: &al }, val, width_scale, cfg)
}

/// Trains the autoencoder on reconstruction of the standardised input, then
/// trains a classifier head on the frozen encoder.
pub fn autoencoder_pretrain(
    class_names: &[String],
    train_data: SplitData<'_>,
    val: SplitData<'_>,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    Ok(autoencoder_pretrain_parts(class_names, train_data, val, cfg)?.model)
}

/// The composite classifier together with the reconstruction network it was
/// built from.
#[derive(Clone, Debug)]
pub struct AutoencoderParts {
    pub model: TrainedModel,
    pub autoencoder: Network<f32>,
}

/// [`autoencoder_pretrain`], keeping the trained reconstruction network.
pub fn autoencoder_pretrain_parts(
    class_names: &[String],
    train_data: SplitData<'_>,
    val: SplitData<'_>,
    cfg: &TrainConfig,
) -> Result<AutoencoderParts> {
    let len = train_data.x.first().map(FeatureMatrix::rows).ok_or_else(|| Error::Config("empty training set".into()))?;
    let classes = class_names.len();
    let ae_net = Network::<f32>::new(archzoo::build(ArchId::Autoencoder, len, classes, 1.0)?, vec![len, 2])?;
    let clf_net = Network::<f32>::new(archzoo::autoencoder_classifier(len, classes)?, vec![len, 2])?;
    let mut model = TrainedModel::prepare(ArchId::Autoencoder, clf_net, class_names.to_vec(), train_data.x, cfg.seed)?;
    let encode = |d: SplitData<'_>| -> Result<TrainSet> {
        let inputs = model.encode(d.x)?;
        Ok(TrainSet {
            targets: Targets::Values { values: inputs.clone(), width: 2 * len },
            inputs,
        })
    };
    let (ae_train, ae_val) = (encode(train_data)?, encode(val)?);
    let mut ae = ae_net;
    ae.init(cfg.seed);
    train(&mut ae, &ae_train, &ae_val, cfg).map_err(|e| match e {
        Error::Divergence(msg) => Error::Divergence(format!("autoencoder reconstruction: {msg}")),
        other => other,
    })?;

    for layer in 0..archzoo::AE_ENCODER_LAYERS {
        model.net.params_mut()[layer] = ae.params()[layer].clone();
        model.net.set_trainable(layer, false);
    }
    let clf_train = model.class_set(train_data.into())?;
    let clf_val = model.class_set(val.into())?;
    model.report = train(&mut model.net, &clf_train, &clf_val, cfg)?;
    Ok(AutoencoderParts { model, autoencoder: ae })
}

/// Reconstruction MSE of an autoencoder network on standardised inputs.
pub fn reconstruction_mse(ae: &Network<f32>, inputs: &[f32]) -> Result<f64> {
    let width: usize = ae.input_shape().iter().product();
    let set = TrainSet {
        inputs: inputs.to_vec(),
        targets: Targets::Values { values: inputs.to_vec(), width },
    };
    Ok(tensornet::evaluate(ae, &set)?.0)
}

/// Ensemble manifest: member checkpoints plus the construction settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub arch_ids: Vec<ArchId>,
    pub copies: usize,
    pub sigma_iq: f64,
    pub sigma_dft: f64,
    pub time_members: Vec<String>,
    pub freq_members: Vec<String>,
    pub seeds: Vec<u64>,
}

pub fn save_ensemble(manifest_path: &Path, ensemble: &Ensemble) -> Result<PathBuf> {
    let dir = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()).map(Path::to_path_buf);
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad ensemble path {}", manifest_path.display())))?;
    let mut names = [Vec::new(), Vec::new()];
    let mut seeds = Vec::new();
    for (slot, (tag, members)) in [("time", &ensemble.time_members), ("freq", &ensemble.freq_members)].into_iter().enumerate() {
        for (i, m) in members.iter().enumerate() {
            let name = format!("{stem}.{tag}{i}.json");
            let path = dir.as_ref().map_or_else(|| PathBuf::from(&name), |d| d.join(&name));
            tensornet::save_model(&path, m)?;
            names[slot].push(name);
            seeds.push(m.seed);
        }
    }
    let [time_members, freq_members] = names;
    let manifest = EnsembleManifest {
        arch_ids: ensemble.arch_ids.clone(),
        copies: ensemble.copies,
        sigma_iq: ensemble.sigma_iq,
        sigma_dft: ensemble.sigma_dft,
        time_members,
        freq_members,
        seeds,
    };
    fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest_path.to_path_buf())
}

pub fn load_ensemble(manifest_path: &Path) -> Result<Ensemble> {
    let manifest: EnsembleManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let load = |names: &[String]| -> Result<Vec<TrainedModel>> { names.iter().map(|n| tensornet::load_model(&dir.join(n))).collect() };
    let ensemble = Ensemble {
        time_members: load(&manifest.time_members)?,
        freq_members: load(&manifest.freq_members)?,
        arch_ids: manifest.arch_ids,
        copies: manifest.copies,
        sigma_iq: manifest.sigma_iq,
        sigma_dft: manifest.sigma_dft,
    };
    ensemble.check()?;
    Ok(ensemble)
}
