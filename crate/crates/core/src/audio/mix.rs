use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{power, AudioBuffer};
use crate::error::{Error, Result};
use crate::labels::NoiseLabel;

/// Everything needed to reproduce one noisy mixture from its sources.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixRecipe {
    pub noise_label: NoiseLabel,
    pub snr_db: f64,
    /// Start sample of the noise section; reads wrap around the noise file.
    pub noise_offset: usize,
    pub gain: f64,
}

/// Amplitude factor that brings noise of power `noise_power` to `snr_db`
/// below a signal of power `clean_power`.
pub fn mixing_gain(clean_power: f64, noise_power: f64, snr_db: f64) -> Result<f64> {
    if !(clean_power > 0.0) {
        return Err(Error::SilentSignal("clean"));
    }
    if !(noise_power > 0.0) {
        return Err(Error::SilentSignal("noise"));
    }
    Ok((clean_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `len` samples of `noise` starting at `offset`, tiled circularly.
pub fn noise_segment(noise: &[f64], offset: usize, len: usize) -> Vec<f64> {
    (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
}

/// SNR in dB of `clean` against an additive `noise_component`.
pub fn measured_snr(clean: &AudioBuffer, noise_component: &AudioBuffer) -> Result<f64> {
    if clean.len() != noise_component.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: noise_component.len(),
        });
    }
    let pn = power(&noise_component.samples)?;
    if pn == 0.0 {
        return Err(Error::SilentSignal("noise component"));
    }
    let ps = power(&clean.samples)?;
    if ps == 0.0 {
        return Err(Error::SilentSignal("clean"));
    }
    Ok(10.0 * (ps / pn).log10())
}

/// Adds a random section of `noise` to `clean` at exactly `snr_db`.
///
/// The gain is computed over the selected section, so the SNR holds for this
/// utterance rather than on average over the noise file. When the noise is
/// at least as long as the utterance the section is contiguous; otherwise it
/// wraps around from the random offset.
pub fn mix_at_snr(
    clean: &AudioBuffer,
    noise: &AudioBuffer,
    noise_label: NoiseLabel,
    snr_db: f64,
    seed: u64,
) -> Result<(AudioBuffer, MixRecipe)> {
    check_sources(clean, noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = if noise.len() >= clean.len() {
        noise.len() - clean.len() + 1
    } else {
        noise.len()
    };
    let offset = rng.gen_range(0..span);
    let segment = noise_segment(&noise.samples, offset, clean.len());
    let gain = mixing_gain(power(&clean.samples)?, power(&segment)?, snr_db)?;
    let recipe = MixRecipe {
        noise_label,
        snr_db,
        noise_offset: offset,
        gain,
    };
    let mixed = add_scaled(clean, &segment, gain);
    Ok((mixed, recipe))
}

/// Rebuilds a mixture from a stored recipe.
pub fn mix_with_recipe(clean: &AudioBuffer, noise: &AudioBuffer, recipe: &MixRecipe) -> Result<AudioBuffer> {
    check_sources(clean, noise)?;
    let segment = noise_segment(&noise.samples, recipe.noise_offset, clean.len());
    Ok(add_scaled(clean, &segment, recipe.gain))
}

fn check_sources(clean: &AudioBuffer, noise: &AudioBuffer) -> Result<()> {
    if clean.sample_rate_hz != noise.sample_rate_hz {
        return Err(Error::SampleRateMismatch {
            left: clean.sample_rate_hz,
            right: noise.sample_rate_hz,
        });
    }
    if clean.is_empty() || noise.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if power(&clean.samples)? == 0.0 {
        return Err(Error::SilentSignal("clean"));
    }
    if power(&noise.samples)? == 0.0 {
        return Err(Error::SilentSignal("noise"));
    }
    Ok(())
}

fn add_scaled(clean: &AudioBuffer, segment: &[f64], gain: f64) -> AudioBuffer {
    let samples = clean
        .samples
        .iter()
        .zip(segment)
        .map(|(s, n)| s + gain * n)
        .collect();
    AudioBuffer::new(samples, clean.sample_rate_hz)
}
