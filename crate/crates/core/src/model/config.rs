use serde::{Deserialize, Serialize};

use crate::audio::FeatureConfig;
use crate::ctc::Vocab;
use crate::error::{Error, Result};
use crate::labels::NoiseLabel;

/// One 2-D convolution over (frequency, time).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel_freq: usize,
    pub kernel_time: usize,
    pub stride_freq: usize,
    pub stride_time: usize,
}

impl ConvSpec {
    fn out_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
        (len >= kernel).then(|| (len - kernel) / stride + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub features: FeatureConfig,
    pub conv: Vec<ConvSpec>,
    pub n_recurrent: usize,
    /// LSTM units per direction in the main stack.
    pub hidden_size: usize,
    pub vocab: Vocab,
    /// Recurrent layer (0-based) whose output feeds the noise classifier.
    pub tap_index: usize,
    pub n_noise_labels: usize,
    /// LSTM units per direction in the noise classifier.
    pub head_hidden: usize,
    /// Width between the classifier's two linear layers.
    pub head_linear: usize,
    /// Upper clamp of the conv activation (lower clamp is zero).
    pub conv_clip: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            features: FeatureConfig::default(),
            conv: vec![
                ConvSpec {
                    channels: 4,
                    kernel_freq: 11,
                    kernel_time: 3,
                    stride_freq: 4,
                    stride_time: 2,
                },
                ConvSpec {
                    channels: 4,
                    kernel_freq: 5,
                    kernel_time: 3,
                    stride_freq: 2,
                    stride_time: 2,
                },
            ],
            n_recurrent: 5,
            hidden_size: 32,
            vocab: Vocab::words(&["a", "b", "c", "d", "e"]).expect("default vocab"),
            tap_index: 2,
            n_noise_labels: NoiseLabel::COUNT,
            head_hidden: 16,
            head_linear: 32,
            conv_clip: 20.0,
        }
    }
}

impl ModelConfig {
    pub fn input_bins(&self) -> usize {
        self.features.spectrogram.bins()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModelConfig(msg));
        if self.n_recurrent == 0 {
            return bad("need at least one recurrent layer".into());
        }
        if self.tap_index >= self.n_recurrent {
            return bad(format!(
                "tap_index {} must be below n_recurrent {}",
                self.tap_index, self.n_recurrent
            ));
        }
        if self.n_noise_labels != NoiseLabel::COUNT {
            return bad(format!("n_noise_labels must be {}", NoiseLabel::COUNT));
        }
        if self.hidden_size == 0 || self.head_hidden == 0 || self.head_linear == 0 {
            return bad("layer widths must be positive".into());
        }
        for c in &self.conv {
            if c.channels == 0 || c.kernel_freq == 0 || c.kernel_time == 0 || c.stride_freq == 0 || c.stride_time == 0 {
                return bad(format!("degenerate conv layer {c:?}"));
            }
        }
        if self.frame_width().is_none() {
            return bad(format!("{} input bins are too few for the conv stack", self.input_bins()));
        }
        self.features.spectrogram.validate()?;
        Ok(())
    }

    /// Per-frame feature width entering the recurrent stack.
    pub fn frame_width(&self) -> Option<usize> {
        let mut bins = self.input_bins();
        let mut channels = 1;
        for c in &self.conv {
            bins = ConvSpec::out_len(bins, c.kernel_freq, c.stride_freq)?;
            channels = c.channels;
        }
        Some(bins * channels)
    }

    /// Output frames for `frames` input frames, or `None` if too short.
    pub fn output_frames(&self, frames: usize) -> Option<usize> {
        self.conv
            .iter()
            .try_fold(frames, |t, c| ConvSpec::out_len(t, c.kernel_time, c.stride_time))
    }

    /// Fewest input frames that survive the conv stack.
    pub fn min_input_frames(&self) -> usize {
        self.conv
            .iter()
            .rev()
            .fold(1, |need, c| (need - 1) * c.stride_time + c.kernel_time)
    }

    /// Small configuration used by gradient checks and unit tests.
    pub fn tiny(input_bins: usize, vocab: Vocab) -> Self {
        let mut features = FeatureConfig::default();
        features.spectrogram.window_len = 2 * (input_bins - 1);
        features.spectrogram.hop_len = input_bins - 1;
        ModelConfig {
            features,
            conv: vec![ConvSpec {
                channels: 2,
                kernel_freq: 3,
                kernel_time: 3,
                stride_freq: 2,
                stride_time: 2,
            }],
            n_recurrent: 2,
            hidden_size: 4,
            vocab,
            tap_index: 0,
            n_noise_labels: NoiseLabel::COUNT,
            head_hidden: 3,
            head_linear: 5,
            conv_clip: 20.0,
        }
    }
}
