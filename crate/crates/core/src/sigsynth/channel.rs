//! Receiver channel: `r = sqrt(rho) * H s + n` with diagonal `H`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::signal::{Domain, Signal};
use crate::error::{Error, Result};
use crate::seed;

/// Rician K-factor of the optional flat fading, in dB.
pub const RICIAN_K_DB: f64 = 10.0;
/// Bound of the uniform CFO draw, cycles/sample.
pub const MAX_CFO: f64 = 1e-3;
/// Bound of the uniform SRO draw, parts per million.
pub const MAX_SRO_PPM: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Per-sample complex gains, the diagonal of `H`.
    pub taps: Vec<Complex64>,
    pub cfo_hz_norm: f64,
    pub sro_ppm: f64,
    pub noise_seed: u64,
    pub add_noise: bool,
}

impl ChannelParams {
    /// Flat unit taps, no offsets, with AWGN drawn from `noise_seed`.
    pub fn flat(len: usize, noise_seed: u64) -> Self {
        Self {
            taps: vec![Complex64::new(1.0, 0.0); len],
            cfo_hz_norm: 0.0,
            sro_ppm: 0.0,
            noise_seed,
            add_noise: true,
        }
    }

    pub fn noiseless(len: usize) -> Self {
        Self {
            add_noise: false,
            ..Self::flat(len, 0)
        }
    }
}

/// Which stressors `random_channel` draws; everything is off by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Impairments {
    #[serde(default)]
    pub fading: bool,
    #[serde(default)]
    pub cfo: bool,
    #[serde(default)]
    pub sro: bool,
}

/// Draw a channel realisation for one signal.
pub fn random_channel<R: Rng>(len: usize, imp: Impairments, rng: &mut R) -> ChannelParams {
    let noise_seed = rng.gen();
    let mut ch = ChannelParams::flat(len, noise_seed);
    if imp.fading {
        let k = 10f64.powf(RICIAN_K_DB / 10.0);
        let los = Complex64::from_polar((k / (k + 1.0)).sqrt(), rng.gen_range(0.0..2.0 * PI));
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let scatter = Complex64::new(re, im) * (0.5 / (k + 1.0)).sqrt();
        ch.taps = vec![los + scatter; len];
    }
    if imp.cfo {
        ch.cfo_hz_norm = rng.gen_range(-MAX_CFO..=MAX_CFO);
    }
    if imp.sro {
        ch.sro_ppm = rng.gen_range(-MAX_SRO_PPM..=MAX_SRO_PPM);
    }
    ch
}

fn resample(samples: &[Complex64], sro_ppm: f64) -> Vec<Complex64> {
    let ratio = 1.0 + sro_ppm * 1e-6;
    let last = samples.len() - 1;
    (0..samples.len())
        .map(|k| {
            let t = (k as f64 * ratio).min(last as f64);
            let i = t.floor() as usize;
            let frac = t - i as f64;
            if i >= last {
                samples[last]
            } else {
                samples[i] * (1.0 - frac) + samples[i + 1] * frac
            }
        })
        .collect()
}

/// Apply `sqrt(rho) * H s + n` with `rho = 10^(snr_db / 10)` and unit-variance
/// circular AWGN.
pub fn apply_channel(s: &Signal, ch: &ChannelParams, snr_db: f64) -> Result<Signal> {
    s.expect_domain(Domain::Time)?;
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("snr_db must be finite, got {snr_db}")));
    }
    if ch.taps.len() != s.len() {
        return Err(Error::Shape(format!(
            "channel has {} taps for a {}-sample signal",
            ch.taps.len(),
            s.len()
        )));
    }
    if ch.taps.iter().any(|t| !t.re.is_finite() || !t.im.is_finite()) {
        return Err(Error::NonFinite("channel taps".into()));
    }
    let amplitude = 10f64.powf(snr_db / 20.0);
    let base = if ch.sro_ppm != 0.0 {
        resample(&s.samples, ch.sro_ppm)
    } else {
        s.samples.clone()
    };
    let mut noise_rng = seed::rng(ch.noise_seed, seed::stream::CHANNEL, 0);
    let noise_scale = 0.5f64.sqrt();
    let samples = base
        .iter()
        .zip(&ch.taps)
        .enumerate()
        .map(|(k, (&x, &h))| {
            let rotated = if ch.cfo_hz_norm != 0.0 {
                x * Complex64::from_polar(1.0, 2.0 * PI * ch.cfo_hz_norm * k as f64)
            } else {
                x
            };
            let mut y = h * rotated * amplitude;
            if ch.add_noise {
                let re: f64 = StandardNormal.sample(&mut noise_rng);
                let im: f64 = StandardNormal.sample(&mut noise_rng);
                y += Complex64::new(re, im) * noise_scale;
            }
            y
        })
        .collect();
    Ok(Signal {
        samples,
        domain: Domain::Time,
        snr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigsynth::modulation::{modulate, Scheme};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qpsk(seed: u64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits: Vec<u8> = (0..32).map(|_| rng.gen_range(0..2)).collect();
        modulate(&bits, Scheme::Qpsk, 8, 128).unwrap()
    }

    #[test]
    fn degenerate_channel_is_identity() {
        let s = qpsk(1);
        let r = apply_channel(&s, &ChannelParams::noiseless(128), 0.0).unwrap();
        assert_eq!(r.samples, s.samples);
    }

    #[test]
    fn constant_taps_scale_the_input() {
        let s = qpsk(2);
        let mut ch = ChannelParams::noiseless(128);
        ch.taps = vec![Complex64::new(2.0, 0.0); 128];
        let r = apply_channel(&s, &ch, 0.0).unwrap();
        for (a, b) in r.samples.iter().zip(&s.samples) {
            assert!((a - 2.0 * b).norm() < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_snr_matches_target() {
        // unit-power constant-envelope input so signal power is exactly rho
        let mut signal_power = 0.0;
        let mut noise_power = 0.0;
        for i in 0..1000u64 {
            let bits: Vec<u8> = (0..16).map(|b| ((i >> (b % 8)) & 1) as u8).collect();
            let s = modulate(&bits, Scheme::Cpfsk, 8, 128).unwrap();
            let clean = apply_channel(&s, &ChannelParams::noiseless(128), 18.0).unwrap();
            let noisy = apply_channel(&s, &ChannelParams::flat(128, i), 18.0).unwrap();
            signal_power += clean.energy();
            noise_power += noisy
                .samples
                .iter()
                .zip(&clean.samples)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>();
        }
        let measured = 10.0 * (signal_power / noise_power).log10();
        assert!((measured - 18.0).abs() < 0.5, "measured {measured} dB");
    }

    #[test]
    fn frequency_input_is_rejected() {
        let mut s = qpsk(3);
        s.domain = Domain::Frequency;
        assert!(matches!(
            apply_channel(&s, &ChannelParams::noiseless(128), 10.0),
            Err(Error::DomainMismatch { .. })
        ));
    }

    #[test]
    fn impairments_are_off_unless_requested() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ch = random_channel(128, Impairments::default(), &mut rng);
        assert_eq!(ch.cfo_hz_norm, 0.0);
        assert_eq!(ch.sro_ppm, 0.0);
        assert!(ch.taps.iter().all(|t| *t == Complex64::new(1.0, 0.0)));
        let all = Impairments { fading: true, cfo: true, sro: true };
        let ch = random_channel(128, all, &mut rng);
        assert!(ch.cfo_hz_norm.abs() <= MAX_CFO && ch.cfo_hz_norm != 0.0);
        assert!(ch.sro_ppm.abs() <= MAX_SRO_PPM);
        assert!(ch.taps.iter().all(|t| t.re.is_finite() && t.im.is_finite()));
    }

    #[test]
    fn cfo_rotates_phase_linearly() {
        let s = Signal::time(vec![Complex64::new(1.0, 0.0); 128]);
        let mut ch = ChannelParams::noiseless(128);
        ch.cfo_hz_norm = 1e-3;
        let r = apply_channel(&s, &ch, 0.0).unwrap();
        let d = (r.samples[100] * r.samples[0].conj()).arg();
        assert!((d - 2.0 * PI * 0.1).abs() < 1e-9);
    }
}
