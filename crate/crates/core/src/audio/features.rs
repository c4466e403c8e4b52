use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowShape {
    Rectangular,
    Hann,
    Hamming,
}

impl WindowShape {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let denom = (len.max(2) - 1) as f64;
        (0..len)
            .map(|n| {
                let phase = 2.0 * PI * n as f64 / denom;
                match self {
                    WindowShape::Rectangular => 1.0,
                    WindowShape::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowShape::Hamming => 0.54 - 0.46 * phase.cos(),
                }
            })
            .collect()
    }
}

/// STFT framing. Defaults to 20 ms Hamming windows every 10 ms at 16 kHz.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub window_len: usize,
    pub hop_len: usize,
    pub window: WindowShape,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            window_len: 320,
            hop_len: 160,
            window: WindowShape::Hamming,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_len == 0 || self.hop_len > self.window_len {
            return Err(Error::InvalidSpectrogram(format!(
                "need 0 < hop_len ({}) <= window_len ({})",
                self.hop_len, self.window_len
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Frame count for a signal of `len` samples (zero if shorter than a window).
    pub fn frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop_len + 1
        }
    }
}

/// A `bins × frames` matrix, stored bin-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub bins: usize,
    pub frames: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }
}

/// Magnitude spectrogram over the non-negative frequency bins `0..=W/2`.
pub fn stft_magnitude(buf: &AudioBuffer, cfg: &SpectrogramConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if buf.len() < cfg.window_len {
        return Err(Error::BufferTooShort {
            len: buf.len(),
            window: cfg.window_len,
        });
    }
    let frames = cfg.frames(buf.len());
    let bins = cfg.bins();
    let window = cfg.window.coefficients(cfg.window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.window_len);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut frame = vec![Complex::default(); cfg.window_len];
    let mut values = vec![0.0; bins * frames];
    for t in 0..frames {
        let start = t * cfg.hop_len;
        for (n, slot) in frame.iter_mut().enumerate() {
            *slot = Complex::new(window[n] * buf.samples[start + n], 0.0);
        }
        fft.process_with_scratch(&mut frame, &mut scratch);
        for k in 0..bins {
            values[k * frames + t] = frame[k].norm();
        }
    }
    Ok(FeatureMatrix {
        bins,
        frames,
        values,
    })
}

/// Standardises all cells to zero mean and unit variance; a constant matrix
/// maps to zeros.
pub fn normalize_features(f: &FeatureMatrix) -> FeatureMatrix {
    let n = f.values.len() as f64;
    let mean = f.values.iter().sum::<f64>() / n;
    let var = f.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let values = if var > 0.0 {
        let sd = var.sqrt();
        f.values.iter().map(|v| (v - mean) / sd).collect()
    } else {
        vec![0.0; f.values.len()]
    };
    FeatureMatrix {
        bins: f.bins,
        frames: f.frames,
        values,
    }
}

/// Front end applied to every utterance before the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub spectrogram: SpectrogramConfig,
    /// Take `ln(magnitude + log_floor)` before normalisation.
    pub log_compress: bool,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            spectrogram: SpectrogramConfig::default(),
            log_compress: true,
            log_floor: 1e-4,
        }
    }
}

/// STFT magnitude, optional log compression, then per-utterance
/// standardisation.
pub fn extract_features(buf: &AudioBuffer, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    let mut spec = stft_magnitude(buf, &cfg.spectrogram)?;
    if cfg.log_compress {
        for v in &mut spec.values {
            *v = (*v + cfg.log_floor).ln();
        }
    }
    Ok(normalize_features(&spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE_HZ;

    /// Direct O(W²) DFT magnitude of one windowed frame.
    fn dft_oracle(frame: &[f64], window: &[f64]) -> Vec<f64> {
        let w = frame.len();
        (0..=w / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..w {
                    let ang = -2.0 * PI * (k * n) as f64 / w as f64;
                    let x = window[n] * frame[n];
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    fn buf(v: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(v, SAMPLE_RATE_HZ)
    }

    #[test]
    fn zeros_give_zeros() {
        let m = stft_magnitude(&buf(vec![0.0; 1000]), &SpectrogramConfig::default()).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert_eq!(m.frames, (1000 - 320) / 160 + 1);
        assert_eq!(m.bins, 161);
    }

    #[test]
    fn single_window_gives_one_frame() {
        let m = stft_magnitude(&buf(vec![0.1; 320]), &SpectrogramConfig::default()).unwrap();
        assert_eq!(m.frames, 1);
    }

    #[test]
    fn too_short_is_an_error() {
        let err = stft_magnitude(&buf(vec![0.1; 319]), &SpectrogramConfig::default());
        assert!(matches!(err, Err(Error::BufferTooShort { len: 319, window: 320 })));
    }

    #[test]
    fn bad_hop_is_rejected() {
        let cfg = SpectrogramConfig {
            window_len: 64,
            hop_len: 65,
            window: WindowShape::Hann,
        };
        assert!(stft_magnitude(&buf(vec![0.1; 100]), &cfg).is_err());
    }

    #[test]
    fn bin_centred_sinusoid_peaks_at_its_bin() {
        let cfg = SpectrogramConfig {
            window_len: 64,
            hop_len: 16,
            window: WindowShape::Rectangular,
        };
        let j = 5;
        let s: Vec<f64> = (0..400)
            .map(|n| (2.0 * PI * j as f64 * n as f64 / 64.0).sin())
            .collect();
        let m = stft_magnitude(&buf(s.clone()), &cfg).unwrap();
        let window = cfg.window.coefficients(64);
        for t in 0..m.frames {
            let col: Vec<f64> = (0..m.bins).map(|k| m.get(k, t)).collect();
            let peak = (0..m.bins).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert_eq!(peak, j);
            let oracle = dft_oracle(&s[t * 16..t * 16 + 64], &window);
            assert_eq!(oracle.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0, j);
        }
    }

    #[test]
    fn matches_direct_dft_on_one_second() {
        let cfg = SpectrogramConfig::default();
        let s: Vec<f64> = (0..16_000)
            .map(|n| {
                let t = n as f64 / 16_000.0;
                0.4 * (2.0 * PI * 440.0 * t).sin() + 0.2 * (2.0 * PI * 1234.5 * t).cos() + 0.05 * ((n * 7919 % 101) as f64 / 101.0 - 0.5)
            })
            .collect();
        let m = stft_magnitude(&buf(s.clone()), &cfg).unwrap();
        let window = cfg.window.coefficients(cfg.window_len);
        let scale = m.values.iter().fold(0.0f64, |a, &b| a.max(b));
        for t in (0..m.frames).step_by(7) {
            let start = t * cfg.hop_len;
            let oracle = dft_oracle(&s[start..start + cfg.window_len], &window);
            for (k, o) in oracle.iter().enumerate() {
                // Relative to the spectrogram's dynamic range; near-zero bins
                // carry only rounding noise.
                assert!((m.get(k, t) - o).abs() <= 1e-9 * scale, "t={t} k={k}");
            }
        }
    }

    #[test]
    fn normalisation_examples() {
        let constant = FeatureMatrix {
            bins: 2,
            frames: 3,
            values: vec![4.0; 6],
        };
        assert!(normalize_features(&constant).values.iter().all(|&v| v == 0.0));

        let pair = FeatureMatrix {
            bins: 1,
            frames: 2,
            values: vec![0.0, 2.0],
        };
        assert_eq!(normalize_features(&pair).values, vec![-1.0, 1.0]);

        let any = FeatureMatrix {
            bins: 3,
            frames: 4,
            values: (0..12).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect(),
        };
        let n = normalize_features(&any);
        let mean = n.values.iter().sum::<f64>() / 12.0;
        let var = n.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
    }
}
