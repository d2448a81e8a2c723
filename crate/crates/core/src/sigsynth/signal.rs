use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which representation a signal or feature matrix lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Time,
    Frequency,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::Time => Domain::Frequency,
            Domain::Frequency => Domain::Time,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Time => "time",
            Domain::Frequency => "frequency",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "time" | "iq" => Ok(Domain::Time),
            "frequency" | "freq" | "dft" => Ok(Domain::Frequency),
            other => Err(Error::Config(format!("unknown domain `{other}`"))),
        }
    }
}

/// A complex baseband observation window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub samples: Vec<Complex64>,
    pub domain: Domain,
    pub snr_db: f64,
}

impl Signal {
    pub fn new(samples: Vec<Complex64>, domain: Domain) -> Self {
        Self {
            samples,
            domain,
            snr_db: f64::INFINITY,
        }
    }

    pub fn time(samples: Vec<Complex64>) -> Self {
        Self::new(samples, Domain::Time)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        self.energy() / self.len().max(1) as f64
    }

    pub(crate) fn expect_domain(&self, expected: Domain) -> Result<()> {
        if self.domain != expected {
            return Err(Error::DomainMismatch {
                expected,
                got: self.domain,
            });
        }
        Ok(())
    }
}

/// Scale a signal so that its total energy is one.
pub fn normalize_energy(s: &Signal) -> Result<Signal> {
    let energy = s.energy();
    if !energy.is_finite() {
        return Err(Error::NonFinite("signal samples".into()));
    }
    if energy == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let scale = energy.sqrt().recip();
    Ok(Signal {
        samples: s.samples.iter().map(|z| z * scale).collect(),
        domain: s.domain,
        snr_db: s.snr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_signal_normalizes_to_half() {
        let s = Signal::time(vec![Complex64::new(2.0, 0.0); 4]);
        let n = normalize_energy(&s).unwrap();
        for z in &n.samples {
            assert!((z.norm() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_signal_is_unchanged() {
        let mut samples = vec![Complex64::new(0.0, 0.0); 8];
        samples[3] = Complex64::new(0.6, 0.8);
        let s = Signal::time(samples);
        let n = normalize_energy(&s).unwrap();
        for (a, b) in s.samples.iter().zip(&n.samples) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn zero_signal_is_rejected() {
        let s = Signal::time(vec![Complex64::new(0.0, 0.0); 8]);
        assert!(matches!(normalize_energy(&s), Err(Error::ZeroEnergy)));
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(v in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..64)) {
            let s = Signal::time(v.iter().map(|&(r, i)| Complex64::new(r, i)).collect());
            prop_assume!(s.energy() > 1e-9);
            let once = normalize_energy(&s).unwrap();
            let twice = normalize_energy(&once).unwrap();
            prop_assert!((once.energy() - 1.0).abs() < 1e-6);
            for (a, b) in once.samples.iter().zip(&twice.samples) {
                prop_assert!((a - b).norm() < 1e-9);
            }
        }
    }
}
