//! l2-budgeted FGSM and BIM perturbations, crafted in a model's own input
//! domain and added directly to the received matrix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{convert_matrix, FeatureMatrix};
use crate::tensornet::TrainedModel;
use crate::Domain;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Bim,
}

impl AttackKind {
    pub const ALL: [AttackKind; 2] = [AttackKind::Fgsm, AttackKind::Bim];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackKind::Fgsm),
            "bim" => Ok(AttackKind::Bim),
            _ => Err(Error::Config(format!("unknown attack `{s}`"))),
        }
    }
}

/// Number of BIM iterations when none is given.
pub const DEFAULT_BIM_ITERATIONS: usize = 10;
/// Per-iteration BIM power as a fraction of the total budget.
pub const DEFAULT_BIM_ALPHA_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Total perturbation power `P_T` (linear).
    pub power: f64,
    /// Per-iteration power for BIM.
    pub alpha: f64,
    pub iterations: usize,
}

impl AttackConfig {
    pub fn fgsm(power: f64) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            power,
            alpha: power,
            iterations: 1,
        }
    }

    /// BIM with `alpha = power / 10` and ten iterations.
    pub fn bim(power: f64) -> Self {
        Self {
            kind: AttackKind::Bim,
            power,
            alpha: power * DEFAULT_BIM_ALPHA_FRACTION,
            iterations: DEFAULT_BIM_ITERATIONS,
        }
    }

    pub fn new(kind: AttackKind, power: f64) -> Self {
        match kind {
            AttackKind::Fgsm => Self::fgsm(power),
            AttackKind::Bim => Self::bim(power),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::Config(format!("attack power {} must be positive", self.power)));
        }
        if self.kind == AttackKind::Bim && !(self.alpha > 0.0 && self.alpha <= self.power && self.iterations >= 1) {
            return Err(Error::Config(format!(
                "BIM needs 0 < alpha <= power and at least one iteration (alpha {}, {} iterations)",
                self.alpha, self.iterations
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub delta: FeatureMatrix,
    pub achieved_norm: f64,
    /// Set when the loss gradient vanished and no direction existed.
    pub degenerate: bool,
}

impl Perturbation {
    pub fn zero(rows: usize, domain: Domain) -> Self {
        Self {
            delta: FeatureMatrix::zeros(rows, domain),
            achieved_norm: 0.0,
            degenerate: true,
        }
    }

    pub fn domain(&self) -> Domain {
        self.delta.domain
    }
}

/// Record attached to a perturbed dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackProvenance {
    pub kind: AttackKind,
    pub power: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub source_model: String,
    pub domain: Domain,
    pub pnr_db: f64,
    #[serde(default)]
    pub degenerate: usize,
}

/// Models whose per-sample loss can be differentiated with respect to the
/// input matrix.
pub trait InputGradient: Sync {
    fn gradient_domain(&self) -> Domain;
    /// Gradient of each sample's cross-entropy loss at its true label.
    fn loss_gradients(&self, x: &[FeatureMatrix], labels: &[usize]) -> Result<Vec<FeatureMatrix>>;
}

impl InputGradient for TrainedModel {
    fn gradient_domain(&self) -> Domain {
        self.domain
    }

    fn loss_gradients(&self, x: &[FeatureMatrix], labels: &[usize]) -> Result<Vec<FeatureMatrix>> {
        self.loss_input_gradients(x, labels)
    }
}

fn check_inputs<M: InputGradient + ?Sized>(model: &M, x: &[FeatureMatrix], labels: &[usize]) -> Result<()> {
    if x.len() != labels.len() {
        return Err(Error::Shape(format!("{} inputs vs {} labels", x.len(), labels.len())));
    }
    let domain = model.gradient_domain();
    if let Some(m) = x.iter().find(|m| m.domain != domain) {
        return Err(Error::DomainMismatch { expected: domain, got: m.domain });
    }
    Ok(())
}

/// Unit-norm gradient directions, `None` where the gradient vanished.
pub fn fgsm_directions<M: InputGradient + ?Sized>(
    model: &M,
    x: &[FeatureMatrix],
    labels: &[usize],
) -> Result<Vec<Option<FeatureMatrix>>> {
    check_inputs(model, x, labels)?;
    model
        .loss_gradients(x, labels)?
        .into_iter()
        .map(|g| {
            let n = g.norm();
            if !n.is_finite() {
                Err(Error::NonFinite("input gradient".into()))
            } else if n == 0.0 {
                Ok(None)
            } else {
                Ok(Some(g.scaled(1.0 / n)))
            }
        })
        .collect()
}

/// Scales a unit direction to the budget `power`.
pub fn scale_direction(direction: Option<&FeatureMatrix>, rows: usize, domain: Domain, power: f64) -> Perturbation {
    match direction {
        Some(u) => {
            let delta = u.scaled(power.sqrt());
            Perturbation {
                achieved_norm: delta.norm(),
                delta,
                degenerate: false,
            }
        }
        None => Perturbation::zero(rows, domain),
    }
}

/// `delta = sqrt(P_T) · g / ‖g‖₂` for each sample.
pub fn fgsm_batch<M: InputGradient + ?Sized>(
    model: &M,
    x: &[FeatureMatrix],
    labels: &[usize],
    power: f64,
) -> Result<Vec<Perturbation>> {
    AttackConfig::fgsm(power).validate()?;
    let dirs = fgsm_directions(model, x, labels)?;
    Ok(dirs
        .iter()
        .zip(x)
        .map(|(d, m)| scale_direction(d.as_ref(), m.rows(), m.domain, power))
        .collect())
}

pub fn fgsm<M: InputGradient + ?Sized>(model: &M, x: &FeatureMatrix, label: usize, power: f64) -> Result<Perturbation> {
    Ok(fgsm_batch(model, std::slice::from_ref(x), &[label], power)?.remove(0))
}

/// Iterates `Δ ← Δ + sqrt(alpha) · g/‖g‖₂` with `g` taken at `x + Δ`, then
/// rescales the accumulated `Δ` to norm `sqrt(P_T)`. A vanishing gradient
/// freezes that sample's `Δ`.
pub fn bim_batch<M: InputGradient + ?Sized>(
    model: &M,
    x: &[FeatureMatrix],
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Vec<Perturbation>> {
    cfg.validate()?;
    check_inputs(model, x, labels)?;
    let step = cfg.alpha.sqrt();
    let mut acc: Vec<FeatureMatrix> = x.iter().map(|m| FeatureMatrix::zeros(m.rows(), m.domain)).collect();
    let mut active: Vec<usize> = (0..x.len()).collect();
    for _ in 0..cfg.iterations {
        if active.is_empty() {
            break;
        }
        let points = active
            .iter()
            .map(|&i| x[i].try_add(&acc[i]))
            .collect::<Result<Vec<_>>>()?;
        let sub_labels: Vec<usize> = active.iter().map(|&i| labels[i]).collect();
        let dirs = fgsm_directions(model, &points, &sub_labels)?;
        let mut still = Vec::with_capacity(active.len());
        for (&i, d) in active.iter().zip(dirs) {
            if let Some(u) = d {
                acc[i] = acc[i].try_add(&u.scaled(step))?;
                still.push(i);
            }
        }
        active = still;
    }
    Ok(acc
        .into_iter()
        .map(|d| {
            let n = d.norm();
            if n == 0.0 {
                Perturbation::zero(d.rows(), d.domain)
            } else {
                let delta = d.scaled(cfg.power.sqrt() / n);
                Perturbation {
                    achieved_norm: delta.norm(),
                    delta,
                    degenerate: false,
                }
            }
        })
        .collect())
}

pub fn bim<M: InputGradient + ?Sized>(model: &M, x: &FeatureMatrix, label: usize, cfg: &AttackConfig) -> Result<Perturbation> {
    Ok(bim_batch(model, std::slice::from_ref(x), &[label], cfg)?.remove(0))
}

/// Runs whichever attack `cfg` names.
pub fn craft_batch<M: InputGradient + ?Sized>(
    model: &M,
    x: &[FeatureMatrix],
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Vec<Perturbation>> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm_batch(model, x, labels, cfg.power),
        AttackKind::Bim => bim_batch(model, x, labels, cfg),
    }
}

/// `r_a = r_t + delta`; both must live in the same domain.
pub fn apply(x: &FeatureMatrix, p: &Perturbation) -> Result<FeatureMatrix> {
    x.try_add(&p.delta)
}

pub fn apply_batch(x: &[FeatureMatrix], p: &[Perturbation]) -> Result<Vec<FeatureMatrix>> {
    if x.len() != p.len() {
        return Err(Error::Shape(format!("{} inputs vs {} perturbations", x.len(), p.len())));
    }
    x.iter().zip(p).map(|(a, b)| apply(a, b)).collect()
}

/// Re-expresses perturbed matrices in `domain` through the DFT or its inverse.
pub fn to_domain(x: &[FeatureMatrix], domain: Domain) -> Result<Vec<FeatureMatrix>> {
    x.iter().map(|m| convert_matrix(m, domain)).collect()
}

/// Mean squared l2 norm of a set of matrices.
pub fn mean_power(x: &[FeatureMatrix]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Config("mean power of an empty set".into()));
    }
    let p = x.iter().map(FeatureMatrix::norm_sqr).sum::<f64>() / x.len() as f64;
    if p <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(p)
}

/// `PNR = 10 log10(P_T / P_r) + SNR`, with `P_r` the mean received power.
pub fn pnr_db(power: f64, received_power: f64, snr_db: f64) -> Result<f64> {
    if received_power <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    if power <= 0.0 {
        return Err(Error::Config(format!("perturbation power {power} must be positive")));
    }
    Ok(10.0 * (power / received_power).log10() + snr_db)
}

/// Inverse of [`pnr_db`]: the budget `P_T` that yields `pnr_db`.
pub fn budget_for_pnr(pnr_db: f64, received_power: f64, snr_db: f64) -> Result<f64> {
    if received_power <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    if !pnr_db.is_finite() {
        return Err(Error::Config(format!("PNR {pnr_db} dB is not finite")));
    }
    Ok(received_power * 10f64.powf((pnr_db - snr_db) / 10.0))
}
