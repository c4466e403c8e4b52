//! Mono audio buffers, WAV I/O, SNR-controlled mixing and spectrogram
//! features.

mod features;
mod mix;

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

pub use features::{
    extract_features, normalize_features, stft_magnitude, FeatureConfig, FeatureMatrix,
    SpectrogramConfig, WindowShape,
};
pub use mix::{mix_at_snr, mix_with_recipe, measured_snr, mixing_gain, noise_segment, MixRecipe};

/// Sample rate of all protocol data.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

const PCM16_SCALE: f64 = 32768.0;

/// Mono PCM samples with their sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        AudioBuffer {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }
}

/// Mean squared amplitude.
pub fn rms_power(buf: &AudioBuffer) -> Result<f64> {
    power(&buf.samples)
}

pub(crate) fn power(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    Ok(samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64)
}

/// Reads a mono WAV file: 16-bit integer PCM or 32-bit float.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedWav(format!("{} channels", spec.channels)));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / PCM16_SCALE))
            .collect::<Result<Vec<_>, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<Vec<_>, _>>()?,
        (format, bits) => {
            return Err(Error::UnsupportedWav(format!("{format:?} at {bits} bits")));
        }
    };
    Ok(AudioBuffer::new(samples, spec.sample_rate))
}

/// Writes 16-bit PCM, clamping to the representable range.
pub fn write_wav_pcm16(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &buf.samples {
        let q = (s * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Writes 32-bit float samples without clipping.
pub fn write_wav_f32(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate_hz,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &buf.samples {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rms_power_examples() {
        let p = |v: &[f64]| rms_power(&AudioBuffer::new(v.to_vec(), SAMPLE_RATE_HZ)).unwrap();
        assert_eq!(p(&[1.0, -1.0, 1.0, -1.0]), 1.0);
        assert_eq!(p(&[0.0; 5]), 0.0);
        assert_eq!(p(&[0.5, 0.5]), 0.25);
        assert!(matches!(
            rms_power(&AudioBuffer::new(vec![], SAMPLE_RATE_HZ)),
            Err(Error::EmptyBuffer)
        ));
    }

    #[test]
    fn pcm16_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let samples: Vec<f64> = (0..1000).map(|i| 0.9 * (i as f64 * 0.05).sin()).collect();
        let buf = AudioBuffer::new(samples.clone(), SAMPLE_RATE_HZ);
        write_wav_pcm16(&path, &buf).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate_hz, SAMPLE_RATE_HZ);
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / PCM16_SCALE);
        }
    }

    #[test]
    fn float_wav_keeps_out_of_range_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let buf = AudioBuffer::new(vec![1.5, -2.25, 0.125], SAMPLE_RATE_HZ);
        write_wav_f32(&path, &buf).unwrap();
        assert_eq!(read_wav(&path).unwrap(), buf);
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: SAMPLE_RATE_HZ,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::UnsupportedWav(_))));
    }
}
