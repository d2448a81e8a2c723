//! Baseband modulators for the eight constellations used by the lab.
//!
//! Linear schemes (BPSK, QPSK, PAM4, 8ASK, OOK) are raised-cosine shaped so
//! that the sample at every symbol instant `n * sps` equals the symbol value
//! times a fixed gain. Frequency schemes (CPFSK, GFSK, FM) are constant
//! envelope and built by phase accumulation.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::signal::Signal;
use crate::error::{Error, Result};

/// Modulation index shared by CPFSK and GFSK.
pub const FSK_MODULATION_INDEX: f64 = 0.5;
/// Gaussian filter bandwidth-time product for GFSK.
pub const GFSK_BT: f64 = 0.35;
/// Peak frequency deviation of the analog FM scheme, cycles/sample.
pub const FM_DEVIATION: f64 = 0.1;
/// Roll-off of the raised-cosine pulse used by the linear schemes.
pub const RC_ROLLOFF: f64 = 0.35;
/// One-sided span of the raised-cosine pulse, in symbols.
pub const RC_SPAN: usize = 4;

const FM_TONES: usize = 3;
const FM_BITS_PER_TONE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "CPFSK")]
    Cpfsk,
    #[serde(rename = "GFSK")]
    Gfsk,
    #[serde(rename = "PAM4")]
    Pam4,
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "OOK")]
    Ook,
    #[serde(rename = "8ASK")]
    Ask8,
    #[serde(rename = "BPSK")]
    Bpsk,
    #[serde(rename = "FM")]
    Fm,
}

impl Scheme {
    pub const ALL: [Scheme; 8] = [
        Scheme::Cpfsk,
        Scheme::Gfsk,
        Scheme::Pam4,
        Scheme::Qpsk,
        Scheme::Ook,
        Scheme::Ask8,
        Scheme::Bpsk,
        Scheme::Fm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Cpfsk => "CPFSK",
            Scheme::Gfsk => "GFSK",
            Scheme::Pam4 => "PAM4",
            Scheme::Qpsk => "QPSK",
            Scheme::Ook => "OOK",
            Scheme::Ask8 => "8ASK",
            Scheme::Bpsk => "BPSK",
            Scheme::Fm => "FM",
        }
    }

    /// Bits carried per symbol. FM is analog and reports zero.
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Scheme::Cpfsk | Scheme::Gfsk | Scheme::Ook | Scheme::Bpsk => 1,
            Scheme::Pam4 | Scheme::Qpsk => 2,
            Scheme::Ask8 => 3,
            Scheme::Fm => 0,
        }
    }

    /// Number of bits `modulate` consumes for a window of `len` samples.
    pub fn bits_needed(self, len: usize, sps: usize) -> usize {
        match self {
            Scheme::Fm => FM_TONES * FM_BITS_PER_TONE,
            _ => symbols_in_window(len, sps) * self.bits_per_symbol(),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

pub(crate) fn symbols_in_window(len: usize, sps: usize) -> usize {
    len.div_ceil(sps)
}

fn gray_to_index(gray: usize) -> usize {
    let mut index = gray;
    let mut shift = gray >> 1;
    while shift != 0 {
        index ^= shift;
        shift >>= 1;
    }
    index
}

fn bits_to_gray(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b & 1))
}

/// Unit-average-energy symbol alphabet of a linear scheme, indexed by the
/// Gray-decoded bit group.
pub fn linear_symbol(scheme: Scheme, bits: &[u8]) -> Complex64 {
    let index = gray_to_index(bits_to_gray(bits));
    match scheme {
        Scheme::Bpsk => Complex64::new(if bits[0] & 1 == 1 { 1.0 } else { -1.0 }, 0.0),
        Scheme::Qpsk => {
            let re = if bits[0] & 1 == 0 { 1.0 } else { -1.0 };
            let im = if bits[1] & 1 == 0 { 1.0 } else { -1.0 };
            Complex64::new(re, im) / 2f64.sqrt()
        }
        Scheme::Pam4 => Complex64::new((2.0 * index as f64 - 3.0) / 5f64.sqrt(), 0.0),
        // mean of k^2 over k = 0..7 is 17.5
        Scheme::Ask8 => Complex64::new(index as f64 / 17.5f64.sqrt(), 0.0),
        Scheme::Ook => Complex64::new(if bits[0] & 1 == 1 { 2f64.sqrt() } else { 0.0 }, 0.0),
        _ => unreachable!("{scheme} is not a linear scheme"),
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Raised-cosine pulse evaluated at `t` symbol periods.
fn raised_cosine(t: f64, beta: f64) -> f64 {
    let denom = 1.0 - (2.0 * beta * t).powi(2);
    if denom.abs() < 1e-10 {
        PI / 4.0 * sinc(1.0 / (2.0 * beta))
    } else {
        sinc(t) * (PI * beta * t).cos() / denom
    }
}

/// Gain applied to shaped linear signals so that i.i.d. unit-energy symbols
/// produce unit average sample power.
pub fn pulse_gain(sps: usize) -> f64 {
    let span = (RC_SPAN * sps) as isize;
    let energy: f64 = (-span..=span)
        .map(|k| raised_cosine(k as f64 / sps as f64, RC_ROLLOFF).powi(2))
        .sum();
    (energy / sps as f64).sqrt()
}

fn shape_linear(symbols: &[Complex64], sps: usize, len: usize) -> Vec<Complex64> {
    if sps == 1 {
        return symbols[..len].to_vec();
    }
    let span = (RC_SPAN * sps) as isize;
    let taps: Vec<f64> = (-span..=span)
        .map(|k| raised_cosine(k as f64 / sps as f64, RC_ROLLOFF))
        .collect();
    let gain = pulse_gain(sps);
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (n, &sym) in symbols.iter().enumerate() {
        let center = (n * sps) as isize;
        for (j, &tap) in taps.iter().enumerate() {
            let k = center + j as isize - span;
            if k >= 0 && (k as usize) < len {
                out[k as usize] += sym * tap;
            }
        }
    }
    out.iter_mut().for_each(|z| *z /= gain);
    out
}

fn from_phase_increments(increments: impl Iterator<Item = f64>, len: usize) -> Vec<Complex64> {
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(len);
    for inc in increments.take(len) {
        out.push(Complex64::from_polar(1.0, phase));
        phase += inc;
    }
    out
}

/// Frequency pulse of GFSK at `t` symbol periods from the symbol centre;
/// integrates to one symbol period.
pub(crate) fn gaussian_frequency_pulse(t: f64) -> f64 {
    use statrs::function::erf::erf;
    let c = PI * GFSK_BT * (2.0 / 2f64.ln()).sqrt();
    0.5 * (erf(c * (t + 0.5)) - erf(c * (t - 0.5)))
}

/// Parameters of the FM message decoded from its 48 carrier bits:
/// `(frequency in cycles/sample, phase in radians)` per tone.
pub fn fm_tones(bits: &[u8]) -> [(f64, f64); FM_TONES] {
    let mut tones = [(0.0, 0.0); FM_TONES];
    for (t, chunk) in bits.chunks(FM_BITS_PER_TONE).take(FM_TONES).enumerate() {
        let freq_code = bits_to_gray(&chunk[..8]) as f64 / 255.0;
        let phase_code = bits_to_gray(&chunk[8..]) as f64 / 256.0;
        tones[t] = (0.002 + 0.028 * freq_code, 2.0 * PI * phase_code);
    }
    tones
}

/// FM message sample at time index `k`, bounded to [-1, 1].
pub fn fm_message(tones: &[(f64, f64)], k: usize) -> f64 {
    tones
        .iter()
        .map(|&(f, phi)| (2.0 * PI * f * k as f64 + phi).sin())
        .sum::<f64>()
        / tones.len() as f64
}

/// Modulate `bits` onto a `len`-sample, unit-average-power baseband window.
pub fn modulate(bits: &[u8], scheme: Scheme, sps: usize, len: usize) -> Result<Signal> {
    if sps == 0 || len == 0 {
        return Err(Error::Config("sps and window length must be positive".into()));
    }
    let needed = scheme.bits_needed(len, sps);
    if bits.len() < needed {
        return Err(Error::InsufficientBits {
            scheme: scheme.to_string(),
            needed,
            got: bits.len(),
        });
    }
    let nsym = symbols_in_window(len, sps);
    let samples = match scheme {
        Scheme::Bpsk | Scheme::Qpsk | Scheme::Pam4 | Scheme::Ask8 | Scheme::Ook => {
            let bps = scheme.bits_per_symbol();
            let symbols: Vec<Complex64> = bits[..nsym * bps]
                .chunks(bps)
                .map(|group| linear_symbol(scheme, group))
                .collect();
            shape_linear(&symbols, sps, len)
        }
        Scheme::Cpfsk => {
            let step = PI * FSK_MODULATION_INDEX / sps as f64;
            let incs = (0..len).map(|k| {
                let a = if bits[k / sps] & 1 == 1 { 1.0 } else { -1.0 };
                a * step
            });
            from_phase_increments(incs, len)
        }
        Scheme::Gfsk => {
            let amps: Vec<f64> = bits[..nsym]
                .iter()
                .map(|&b| if b & 1 == 1 { 1.0 } else { -1.0 })
                .collect();
            let scale = PI * FSK_MODULATION_INDEX / sps as f64;
            let incs = (0..len).map(|k| {
                // frequency sampled midway between samples k and k + 1
                let t = (k as f64 + 0.5) / sps as f64;
                let f: f64 = amps
                    .iter()
                    .enumerate()
                    .map(|(n, a)| a * gaussian_frequency_pulse(t - n as f64 - 0.5))
                    .sum();
                scale * f
            });
            from_phase_increments(incs, len)
        }
        Scheme::Fm => {
            let tones = fm_tones(bits);
            let incs = (0..len).map(|k| 2.0 * PI * FM_DEVIATION * fm_message(&tones, k));
            from_phase_increments(incs, len)
        }
    };
    Ok(Signal::time(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Oracle demodulators: noiseless, impairment-free, test-only.

    fn demod_linear(s: &Signal, scheme: Scheme, sps: usize, nsym: usize) -> Vec<u8> {
        let gain = if sps == 1 { 1.0 } else { pulse_gain(sps) };
        let bps = scheme.bits_per_symbol();
        let alphabet: Vec<(Vec<u8>, Complex64)> = (0..1usize << bps)
            .map(|v| {
                let group: Vec<u8> = (0..bps).rev().map(|i| ((v >> i) & 1) as u8).collect();
                let sym = linear_symbol(scheme, &group);
                (group, sym)
            })
            .collect();
        let mut out = Vec::new();
        for n in 0..nsym {
            let z = s.samples[n * sps] * gain;
            let (group, _) = alphabet
                .iter()
                .min_by(|a, b| (a.1 - z).norm().partial_cmp(&(b.1 - z).norm()).unwrap())
                .unwrap();
            out.extend(group);
        }
        out
    }

    fn demod_fsk(s: &Signal, sps: usize, nsym: usize, center: bool) -> Vec<u8> {
        (0..nsym)
            .map(|n| {
                let k = if center { n * sps + sps / 2 - 1 } else { n * sps };
                let d = s.samples[k + 1] * s.samples[k].conj();
                u8::from(d.arg() > 0.0)
            })
            .collect()
    }

    fn random_bits(n: usize, seed: u64) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0..2u8)).collect()
    }

    #[test]
    fn bpsk_antipodal_mapping() {
        let s = modulate(&[0, 1, 1, 0], Scheme::Bpsk, 1, 4).unwrap();
        let re: Vec<f64> = s.samples.iter().map(|z| z.re).collect();
        assert_eq!(re, vec![-1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn pam4_levels_have_unit_average_energy() {
        let groups = [[0u8, 0], [0, 1], [1, 1], [1, 0]];
        let levels: Vec<f64> = groups.iter().map(|g| linear_symbol(Scheme::Pam4, g).re).collect();
        let r5 = 5f64.sqrt();
        let expected = [-3.0 / r5, -1.0 / r5, 1.0 / r5, 3.0 / r5];
        for (l, e) in levels.iter().zip(expected) {
            assert!((l - e).abs() < 1e-12);
        }
        let mean_energy: f64 = levels.iter().map(|l| l * l).sum::<f64>() / 4.0;
        assert!((mean_energy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qpsk_zero_bits_map_to_first_quadrant() {
        let z = linear_symbol(Scheme::Qpsk, &[0, 0]);
        assert!((z - Complex64::new(1.0, 1.0) / 2f64.sqrt()).norm() < 1e-12);
    }

    #[test]
    fn ask_and_ook_alphabets_have_unit_average_energy() {
        for scheme in [Scheme::Ask8, Scheme::Ook, Scheme::Qpsk, Scheme::Bpsk] {
            let bps = scheme.bits_per_symbol();
            let e: f64 = (0..1usize << bps)
                .map(|v| {
                    let g: Vec<u8> = (0..bps).rev().map(|i| ((v >> i) & 1) as u8).collect();
                    linear_symbol(scheme, &g).norm_sqr()
                })
                .sum::<f64>()
                / (1usize << bps) as f64;
            assert!((e - 1.0).abs() < 1e-12, "{scheme}: {e}");
        }
    }

    #[test]
    fn unknown_scheme_and_short_bits_are_errors() {
        assert!(matches!("64QAM".parse::<Scheme>(), Err(Error::UnknownScheme(_))));
        assert_eq!("8ask".parse::<Scheme>().unwrap(), Scheme::Ask8);
        let err = modulate(&[0, 1], Scheme::Qpsk, 8, 128).unwrap_err();
        assert!(matches!(err, Error::InsufficientBits { needed: 32, .. }));
    }

    #[test]
    fn every_scheme_fills_the_window_with_unit_scale_power() {
        for scheme in Scheme::ALL {
            let bits = random_bits(scheme.bits_needed(128, 8), 3);
            let s = modulate(&bits, scheme, 8, 128).unwrap();
            assert_eq!(s.len(), 128);
            let p = s.mean_power();
            assert!(p > 0.3 && p < 2.0, "{scheme}: mean power {p}");
            if matches!(scheme, Scheme::Cpfsk | Scheme::Gfsk | Scheme::Fm) {
                assert!((p - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shaped_linear_signals_average_to_unit_power() {
        for scheme in [Scheme::Qpsk, Scheme::Pam4, Scheme::Bpsk] {
            let total: f64 = (0..200)
                .map(|seed| {
                    let bits = random_bits(scheme.bits_needed(1024, 8), seed);
                    modulate(&bits, scheme, 8, 1024).unwrap().mean_power()
                })
                .sum::<f64>()
                / 200.0;
            assert!((total - 1.0).abs() < 0.05, "{scheme}: {total}");
        }
    }

    #[test]
    fn linear_schemes_demodulate_exactly() {
        for scheme in [Scheme::Bpsk, Scheme::Qpsk, Scheme::Pam4, Scheme::Ask8, Scheme::Ook] {
            for sps in [1, 4, 8] {
                let nsym = symbols_in_window(128, sps);
                let bits = random_bits(scheme.bits_needed(128, sps), sps as u64);
                let s = modulate(&bits, scheme, sps, 128).unwrap();
                assert_eq!(demod_linear(&s, scheme, sps, nsym), bits, "{scheme} sps={sps}");
            }
        }
    }

    #[test]
    fn cpfsk_demodulates_exactly() {
        let bits = random_bits(16, 11);
        let s = modulate(&bits, Scheme::Cpfsk, 8, 128).unwrap();
        assert_eq!(demod_fsk(&s, 8, 16, false), bits);
        // full symbol advances the phase by pi * h
        let d = (s.samples[8] * s.samples[0].conj()).arg().abs();
        assert!((d - PI * FSK_MODULATION_INDEX).abs() < 1e-9);
    }

    #[test]
    fn gfsk_demodulates_exactly_and_differs_from_cpfsk() {
        for seed in 0..20 {
            let bits = random_bits(16, 100 + seed);
            let g = modulate(&bits, Scheme::Gfsk, 8, 128).unwrap();
            assert_eq!(demod_fsk(&g, 8, 16, true), bits);
            let c = modulate(&bits, Scheme::Cpfsk, 8, 128).unwrap();
            let diff: f64 = g.samples.iter().zip(&c.samples).map(|(a, b)| (a - b).norm()).sum();
            assert!(diff > 1e-3);
        }
    }

    #[test]
    fn gaussian_pulse_integrates_to_one_symbol() {
        let n = 4000;
        let area: f64 = (0..n)
            .map(|i| gaussian_frequency_pulse(-5.0 + 10.0 * (i as f64 + 0.5) / n as f64) * 10.0 / n as f64)
            .sum();
        assert!((area - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fm_instantaneous_frequency_tracks_the_message() {
        let bits = random_bits(48, 5);
        let s = modulate(&bits, Scheme::Fm, 8, 128).unwrap();
        let tones = fm_tones(&bits);
        for k in 0..127 {
            let f = (s.samples[k + 1] * s.samples[k].conj()).arg() / (2.0 * PI * FM_DEVIATION);
            assert!((f - fm_message(&tones, k)).abs() < 1e-9);
        }
    }
}
