//! Per-subcommand settings. Each can be loaded from a JSON file whose keys
//! match the long flag names (with underscores); flags given on the command
//! line override the file.

use std::fs;
use std::path::{Path, PathBuf};

use amclab::archzoo::ArchId;
use amclab::attacks::AttackKind;
use amclab::defenses::{SIGMA_DFT, SIGMA_IQ};
use amclab::labharness::{LabConfig, ReportFormat};
use amclab::sigsynth::{GenerationConfig, Impairments, Split};
use amclab::tensornet::TrainConfig;
use amclab::{Domain, Error, Result, Scheme};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn required(p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    p.clone().ok_or_else(|| Error::Config(format!("`{key}` is required")))
}

/// Which records of a dataset a command works on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSel {
    Train,
    Val,
    #[default]
    Test,
    All,
}

impl SplitSel {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitSel::Train => Some(Split::Train),
            SplitSel::Val => Some(Split::Val),
            SplitSel::Test => Some(Split::Test),
            SplitSel::All => None,
        }
    }
}

impl std::str::FromStr for SplitSel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(SplitSel::Train),
            "val" => Ok(SplitSel::Val),
            "test" => Ok(SplitSel::Test),
            "all" => Ok(SplitSel::All),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub schemes: Vec<Scheme>,
    pub per_class: usize,
    pub len: usize,
    pub sps: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub impairments: Impairments,
    pub out: Option<PathBuf>,
}

impl Default for GenConfig {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Self {
            schemes: g.schemes,
            per_class: g.per_class,
            len: g.len,
            sps: g.sps,
            snr_db: g.snr_db,
            seed: g.seed,
            impairments: g.impairments,
            out: None,
        }
    }
}

impl GenConfig {
    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            schemes: self.schemes.clone(),
            per_class: self.per_class,
            len: self.len,
            sps: self.sps,
            snr_db: self.snr_db,
            seed: self.seed,
            impairments: self.impairments,
        }
    }
}

fn train_config(max_epochs: usize, batch_size: usize, learning_rate: f64, patience: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs,
        batch_size,
        learning_rate,
        patience,
        seed,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub dataset: Option<PathBuf>,
    pub arch: ArchId,
    pub domain: Domain,
    pub width_scale: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl TrainCmdConfig {
    pub fn train_config(&self) -> TrainConfig {
        train_config(self.max_epochs, self.batch_size, self.learning_rate, self.patience, self.seed)
    }
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            arch: ArchId::Cnn,
            domain: Domain::Time,
            width_scale: 0.25,
            max_epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            patience: 10,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackCmdConfig {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub kind: AttackKind,
    /// Target PNR; ignored when `power` is set.
    pub pnr_db: f64,
    pub power: Option<f64>,
    pub bim_alpha_fraction: f64,
    pub bim_iterations: usize,
    pub split: SplitSel,
    pub out: Option<PathBuf>,
}

impl Default for AttackCmdConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            model: None,
            kind: AttackKind::Fgsm,
            pnr_db: 0.0,
            power: None,
            bim_alpha_fraction: amclab::attacks::DEFAULT_BIM_ALPHA_FRACTION,
            bim_iterations: amclab::attacks::DEFAULT_BIM_ITERATIONS,
            split: SplitSel::Test,
            out: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCmdConfig {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub ensemble: Option<PathBuf>,
    pub split: SplitSel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleCmdConfig {
    pub dataset: Option<PathBuf>,
    pub arch_ids: Vec<ArchId>,
    pub copies: usize,
    pub sigma_iq: f64,
    pub sigma_dft: f64,
    pub include_clean: bool,
    pub width_scale: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl EnsembleCmdConfig {
    pub fn train_config(&self) -> TrainConfig {
        train_config(self.max_epochs, self.batch_size, self.learning_rate, self.patience, self.seed)
    }
}

impl Default for EnsembleCmdConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            arch_ids: vec![ArchId::Cnn, ArchId::Crnn, ArchId::Cnn, ArchId::Crnn],
            copies: 3,
            sigma_iq: SIGMA_IQ,
            sigma_dft: SIGMA_DFT,
            include_clean: false,
            width_scale: 0.25,
            max_epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            patience: 10,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefendEvalCmdConfig {
    pub dataset: Option<PathBuf>,
    pub ensemble: Option<PathBuf>,
    /// Single-model baselines evaluated next to the ensemble.
    pub baselines: Vec<PathBuf>,
    pub split: SplitSel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportCmdConfig {
    pub lab: LabConfig,
    pub out_dir: PathBuf,
    pub formats: Vec<ReportFormat>,
    /// Re-emit an existing report JSON instead of running the lab.
    pub from: Option<PathBuf>,
}

impl Default for ReportCmdConfig {
    fn default() -> Self {
        Self {
            lab: LabConfig::default(),
            out_dir: PathBuf::from("lab-out"),
            formats: ReportFormat::ALL.to_vec(),
            from: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let r: std::result::Result<GenConfig, _> = serde_json::from_str(r#"{"per_klass": 3}"#);
        assert!(r.is_err());
    }

    #[test]
    fn training_keys_parse() {
        let c: TrainCmdConfig = serde_json::from_str(r#"{"arch": "rnn", "patience": 4, "seed": 9}"#).unwrap();
        assert_eq!(c.arch, ArchId::Rnn);
        assert_eq!(c.train_config().patience, 4);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn partial_lab_config_fills_defaults() {
        let c: ReportCmdConfig = serde_json::from_str(r#"{"lab": {"seed": 5}}"#).unwrap();
        assert_eq!(c.lab.seed, 5);
        assert_eq!(c.lab.width_scale, 0.25);
        let c: ReportCmdConfig = serde_json::from_str(r#"{"lab": {"grid": {"pnr_grid": [-4, 0]}, "generation": {"per_class": 9}}}"#).unwrap();
        assert_eq!(c.lab.grid.pnr_grid, vec![-4.0, 0.0]);
        assert_eq!(c.lab.grid.settings, amclab::labharness::AttackSettings::default());
        assert_eq!(c.lab.generation.per_class, 9);
        assert_eq!(c.lab.generation.len, 128);
    }
}
