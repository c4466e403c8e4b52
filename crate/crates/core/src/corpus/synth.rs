//! Synthetic tone speech and coloured noise for desk-scale experiments.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Utterance;
use crate::audio::{AudioBuffer, SAMPLE_RATE_HZ};
use crate::ctc::Vocab;
use crate::error::{Error, Result};
use crate::labels::NoiseLabel;

/// Tone corpus recipe: each symbol is a fixed-length sinusoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Symbol and its tone frequency in Hz.
    pub tones: Vec<(String, f64)>,
    pub symbol_ms: f64,
    pub min_symbols: usize,
    pub max_symbols: usize,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            tones: [("a", 440.0), ("b", 660.0), ("c", 880.0), ("d", 1320.0), ("e", 1760.0)]
                .into_iter()
                .map(|(s, f)| (s.to_string(), f))
                .collect(),
            symbol_ms: 100.0,
            min_symbols: 4,
            max_symbols: 6,
            amplitude: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidVocab(m));
        if self.tones.len() < 2 {
            return bad("a tone corpus needs at least two symbols".into());
        }
        let nyquist = f64::from(SAMPLE_RATE_HZ) / 2.0;
        for (i, (s, f)) in self.tones.iter().enumerate() {
            if !(*f > 0.0 && *f < nyquist) {
                return bad(format!("tone for {s:?} at {f} Hz is outside (0, {nyquist})"));
            }
            if self.tones[..i].iter().any(|(t, g)| t == s || g == f) {
                return bad(format!("symbol {s:?} or its frequency is repeated"));
            }
        }
        if self.min_symbols == 0 || self.min_symbols > self.max_symbols {
            return bad("need 1 <= min_symbols <= max_symbols".into());
        }
        if self.symbol_samples() == 0 || !(self.amplitude > 0.0) {
            return bad("symbol duration and amplitude must be positive".into());
        }
        Ok(())
    }

    pub fn symbol_samples(&self) -> usize {
        (self.symbol_ms * f64::from(SAMPLE_RATE_HZ) / 1000.0).round() as usize
    }

    /// Word-level vocabulary over the tone symbols, blank first.
    pub fn vocab(&self) -> Result<Vocab> {
        let words: Vec<&str> = self.tones.iter().map(|(s, _)| s.as_str()).collect();
        Vocab::words(&words)
    }

    /// Audio for a space-separated symbol string.
    pub fn render(&self, transcript: &str) -> Result<AudioBuffer> {
        let n = self.symbol_samples();
        let mut samples = Vec::new();
        for word in transcript.split_whitespace() {
            let &(_, freq) = self
                .tones
                .iter()
                .find(|(s, _)| s == word)
                .ok_or_else(|| Error::UnknownSymbol(word.to_string()))?;
            let w = 2.0 * PI * freq / f64::from(SAMPLE_RATE_HZ);
            samples.extend((0..n).map(|i| self.amplitude * (w * i as f64).sin()));
        }
        if samples.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok(AudioBuffer::new(samples, SAMPLE_RATE_HZ))
    }
}

/// `n_utts` random symbol strings rendered as tones. Adjacent symbols always
/// differ, since two equal tones in a row are one long tone.
pub fn synth_corpus(spec: &SynthSpec, n_utts: usize) -> Result<Vec<Utterance>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.tones.len();
    (0..n_utts)
        .map(|i| {
            let len = rng.gen_range(spec.min_symbols..=spec.max_symbols);
            let mut picks: Vec<usize> = Vec::with_capacity(len);
            for _ in 0..len {
                let next = match picks.last() {
                    None => rng.gen_range(0..k),
                    Some(&prev) => (prev + rng.gen_range(1..k)) % k,
                };
                picks.push(next);
            }
            let transcript = picks
                .iter()
                .map(|&p| spec.tones[p].0.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            Ok(Utterance {
                id: format!("utt{i:05}"),
                audio: spec.render(&transcript)?,
                transcript,
            })
        })
        .collect()
}

/// One-pole low-pass with cutoff `hz`.
fn lowpass(x: &[f64], hz: f64) -> Vec<f64> {
    let a = (-2.0 * PI * hz / f64::from(SAMPLE_RATE_HZ)).exp();
    let mut y = 0.0;
    x.iter()
        .map(|&v| {
            y = (1.0 - a) * v + a * y;
            y
        })
        .collect()
}

/// Two-pole resonator centred on `hz` with pole radius `r`.
fn resonator(x: &[f64], hz: f64, r: f64) -> Vec<f64> {
    let w = 2.0 * PI * hz / f64::from(SAMPLE_RATE_HZ);
    let (b1, b2) = (2.0 * r * w.cos(), -r * r);
    let (mut y1, mut y2) = (0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = (1.0 - r) * v + b1 * y1 + b2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn tone(len: usize, hz: f64, phase: f64) -> impl Iterator<Item = f64> {
    let w = 2.0 * PI * hz / f64::from(SAMPLE_RATE_HZ);
    (0..len).map(move |i| (w * i as f64 + phase).sin())
}

/// A noise signal with the spectral signature of `label`, scaled to unit RMS.
///
/// Babble: a few wandering amplitude-modulated partials. AirportStation:
/// mid-band noise with a slow swell. Car: deep low-frequency rumble. Metro:
/// a resonance near 1.8 kHz with a rhythmic beat. Cafe: white noise with
/// clatter transients. Traffic: low-mid noise with passing-vehicle swells.
/// AcVacuum: high-passed hiss plus a motor whine near 3.2 kHz.
pub fn synth_noise(label: NoiseLabel, len: usize, seed: u64) -> Result<AudioBuffer> {
    if !label.is_noise() {
        return Err(Error::EmptyNoiseSet("Clean".into()));
    }
    if len == 0 {
        return Err(Error::EmptyBuffer);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = f64::from(SAMPLE_RATE_HZ);
    let white: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    let t = |i: usize| i as f64 / sr;
    let mut x: Vec<f64> = match label {
        NoiseLabel::Babble => {
            let mut acc = vec![0.0; len];
            for _ in 0..6 {
                let f = rng.gen_range(2100.0..2900.0);
                let am = rng.gen_range(2.0..6.0);
                let ph: f64 = rng.gen_range(0.0..2.0 * PI);
                for (i, (a, s)) in acc.iter_mut().zip(tone(len, f, ph)).enumerate() {
                    *a += s * (0.5 + 0.5 * (2.0 * PI * am * t(i) + ph).sin());
                }
            }
            acc.iter().zip(&white).map(|(a, w)| a + 0.1 * w).collect()
        }
        NoiseLabel::AirportStation => {
            let band = resonator(&lowpass(&white, 1500.0), 600.0, 0.97);
            band.iter()
                .enumerate()
                .map(|(i, v)| v * (1.0 + 0.5 * (2.0 * PI * 0.3 * t(i)).sin()))
                .collect()
        }
        NoiseLabel::Car => lowpass(&lowpass(&white, 120.0), 120.0),
        NoiseLabel::Metro => {
            let band = resonator(&white, 1800.0, 0.99);
            band.iter()
                .enumerate()
                .map(|(i, v)| v * (1.0 + 0.8 * (2.0 * PI * 8.0 * t(i)).sin()))
                .collect()
        }
        NoiseLabel::Cafe => {
            let mut x: Vec<f64> = white.iter().map(|w| 0.3 * w).collect();
            let mut i = 0;
            while i < len {
                i += rng.gen_range(200..2400);
                let amp = rng.gen_range(2.0..6.0);
                for (k, v) in x.iter_mut().skip(i).take(160).enumerate() {
                    *v += amp * (-(k as f64) / 30.0).exp() * white[(i + k * 7) % len];
                }
            }
            x
        }
        NoiseLabel::Traffic => {
            let low = resonator(&white, 300.0, 0.95);
            let rate = rng.gen_range(0.5..0.9);
            low.iter()
                .enumerate()
                .map(|(i, v)| v * (1.0 + 0.8 * (2.0 * PI * rate * t(i)).sin()))
                .collect()
        }
        NoiseLabel::AcVacuum => {
            let low = lowpass(&white, 2000.0);
            let whine = rng.gen_range(3100.0..3300.0);
            white
                .iter()
                .zip(&low)
                .zip(tone(len, whine, 0.0))
                .map(|((w, l), s)| (w - l) + 0.8 * s)
                .collect()
        }
        NoiseLabel::Clean => unreachable!(),
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if !(rms > 0.0) {
        return Err(Error::SilentSignal("synthetic noise"));
    }
    for v in &mut x {
        *v /= rms;
    }
    Ok(AudioBuffer::new(x, SAMPLE_RATE_HZ))
}

/// `per_type` noise files of `seconds` each for every noise type.
pub fn synth_noise_files(per_type: usize, seconds: f64, seed: u64) -> Result<BTreeMap<NoiseLabel, Vec<AudioBuffer>>> {
    let len = (seconds * f64::from(SAMPLE_RATE_HZ)).round() as usize;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for label in NoiseLabel::NOISE_TYPES {
        let files = (0..per_type)
            .map(|_| synth_noise(label, len, master.gen()))
            .collect::<Result<Vec<_>>>()?;
        out.insert(label, files);
    }
    Ok(out)
}

/// Shuffles `items` deterministically under `rng`.
pub(crate) fn shuffled<T: Clone>(items: &[T], rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(rng);
    v
}
