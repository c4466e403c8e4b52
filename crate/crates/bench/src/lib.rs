//! Shared fixtures for the criterion benches.

use noiseadapt_core::autodiff::Tensor;
use noiseadapt_core::corpus::{synth_corpus, synth_noise, SynthSpec, Utterance};
use noiseadapt_core::audio::AudioBuffer;
use noiseadapt_core::model::{init_params, ModelConfig, ModelParams};
use noiseadapt_core::NoiseLabel;

/// One synthetic utterance of the default tone corpus.
pub fn utterance() -> Utterance {
    synth_corpus(&SynthSpec::default(), 1).expect("default spec is valid").remove(0)
}

pub fn noise(len: usize) -> AudioBuffer {
    synth_noise(NoiseLabel::Babble, len, 1).expect("babble noise")
}

/// Default-sized model over the synthetic vocabulary.
pub fn model() -> ModelParams {
    let cfg = ModelConfig {
        vocab: SynthSpec::default().vocab().expect("default vocab"),
        ..ModelConfig::default()
    };
    init_params(&cfg, 0).expect("default model")
}

/// Deterministic `[frames, vocab]` log-probabilities.
pub fn log_probs(frames: usize, vocab: usize) -> Tensor {
    let mut data = Vec::with_capacity(frames * vocab);
    for t in 0..frames {
        let logits: Vec<f64> = (0..vocab).map(|v| ((t * 7 + v * 13) % 11) as f64 / 5.0).collect();
        let lse = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
        data.extend(logits.iter().map(|x| x - lse));
    }
    Tensor::new(vec![frames, vocab], data).expect("consistent shape")
}
