//! DFT between time and frequency representations, and the ℓ×2 real views
//! the classifiers consume.
//!
//! The forward transform is unnormalised, `R[p] = Σ_k r[k] e^{-j2πpk/ℓ}`,
//! and the inverse carries the `1/ℓ`. An l2 budget in the frequency domain
//! therefore corresponds to `1/ℓ` of that power in the time domain.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigsynth::{Domain, Signal};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform(samples: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let mut buf = samples.to_vec();
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let fft = if inverse {
            planner.plan_fft_inverse(buf.len())
        } else {
            planner.plan_fft_forward(buf.len())
        };
        fft.process(&mut buf);
    });
    buf
}

pub fn dft(s: &Signal) -> Result<Signal> {
    s.expect_domain(Domain::Time)?;
    Ok(Signal {
        samples: transform(&s.samples, false),
        domain: Domain::Frequency,
        snr_db: s.snr_db,
    })
}

pub fn idft(s: &Signal) -> Result<Signal> {
    s.expect_domain(Domain::Frequency)?;
    let scale = 1.0 / s.len() as f64;
    Ok(Signal {
        samples: transform(&s.samples, true).into_iter().map(|z| z * scale).collect(),
        domain: Domain::Time,
        snr_db: s.snr_db,
    })
}

/// Move a signal into `domain`, transforming only when needed.
pub fn convert(s: &Signal, domain: Domain) -> Result<Signal> {
    match (s.domain, domain) {
        (a, b) if a == b => Ok(s.clone()),
        (Domain::Time, Domain::Frequency) => dft(s),
        _ => idft(s),
    }
}

/// ℓ×2 real matrix; column 0 holds real parts, column 1 imaginary parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    /// Row-major, `values[2 * k + c]`.
    pub values: Vec<f64>,
    pub domain: Domain,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, domain: Domain) -> Self {
        Self {
            values: vec![0.0; rows * 2],
            domain,
        }
    }

    pub fn from_values(values: Vec<f64>, domain: Domain) -> Result<Self> {
        if values.len() % 2 != 0 {
            return Err(Error::Shape(format!("{} values do not form an ℓ×2 matrix", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self { values, domain })
    }

    /// Infallible view of a signal; samples are assumed finite.
    pub fn from_signal(s: &Signal) -> Self {
        Self {
            values: s.samples.iter().flat_map(|z| [z.re, z.im]).collect(),
            domain: s.domain,
        }
    }

    pub fn rows(&self) -> usize {
        self.values.len() / 2
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[2 * row + col]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// l2 norms of the real and imaginary columns.
    pub fn column_norms(&self) -> [f64; 2] {
        let mut acc = [0.0; 2];
        for (i, v) in self.values.iter().enumerate() {
            acc[i % 2] += v * v;
        }
        [acc[0].sqrt(), acc[1].sqrt()]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * k).collect(),
            domain: self.domain,
        }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.domain != other.domain {
            return Err(Error::DomainMismatch {
                expected: self.domain,
                got: other.domain,
            });
        }
        if self.values.len() != other.values.len() {
            return Err(Error::Shape(format!(
                "{} rows vs {} rows",
                self.rows(),
                other.rows()
            )));
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            domain: self.domain,
        })
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            domain: self.domain,
        })
    }
}

pub fn to_matrix(s: &Signal) -> Result<FeatureMatrix> {
    if s.samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("signal samples".into()));
    }
    Ok(FeatureMatrix::from_signal(s))
}

pub fn from_matrix(m: &FeatureMatrix) -> Result<Signal> {
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix".into()));
    }
    Ok(Signal::new(
        m.values.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect(),
        m.domain,
    ))
}

/// Re-express a feature matrix in `domain`.
pub fn convert_matrix(m: &FeatureMatrix, domain: Domain) -> Result<FeatureMatrix> {
    if m.domain == domain {
        return Ok(m.clone());
    }
    to_matrix(&convert(&from_matrix(m)?, domain)?)
}

/// Standardisation fitted on a training set with one mean and one scale
/// pooled over every entry of the ℓ×2 matrix, so relative bin powers are
/// kept. Stored per feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &[FeatureMatrix]) -> Result<Self> {
        let first = data.first().ok_or_else(|| Error::Config("cannot fit on an empty set".into()))?;
        let width = first.values.len();
        if data.iter().any(|m| m.values.len() != width) {
            return Err(Error::Shape("feature matrices of different sizes".into()));
        }
        let count = (data.len() * width) as f64;
        let mean = data.iter().flat_map(|m| &m.values).sum::<f64>() / count;
        let var = data.iter().flat_map(|m| &m.values).map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        Ok(Self {
            mean: vec![mean; width],
            std: vec![var.sqrt().max(1e-8); width],
        })
    }
}
