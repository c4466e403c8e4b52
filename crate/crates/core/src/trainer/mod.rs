//! Training regimes: augmentation-based training with optional soft
//! freezing, multi-task learning with a noise classifier, and adversarial
//! training through a gradient reversal.

mod config;
mod optim;
mod run;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::{extract_features, mix_at_snr, AudioBuffer, FeatureMatrix};
use crate::autodiff::{Graph, Tensor};
use crate::corpus::NoiseSet;
use crate::ctc::{ctc_loss, LabelSequence};
use crate::error::{Error, Result};
use crate::labels::NoiseLabel;
use crate::model::{cross_entropy, ModelParams, Network};

pub use config::{anneal_eta, effective_lr, hybrid_loss, LossBreakdown, TrainConfig, TrainMode};
pub use optim::{grad_norm, sgd_step, OptimizerState};
pub use run::{
    evaluate_dev, make_dev_set, train, write_metrics_csv, DevScore, EpochMetrics, TrainData, TrainOutcome,
    METRICS_HEADER,
};

/// One utterance after augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub audio: AudioBuffer,
    pub label: NoiseLabel,
    pub snr_db: Option<f64>,
}

/// Mixes each utterance, with probability `aug_prob`, with a random training
/// noise file of a uniformly drawn type at a uniformly drawn SNR. Untouched
/// utterances are labelled Clean.
pub fn augment_batch(
    clean: &[&AudioBuffer],
    noise: &NoiseSet,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Augmented>> {
    if cfg.aug_prob > 0.0 {
        noise.require_all_types()?;
        if cfg.train_snr_set.is_empty() {
            return Err(Error::InvalidTrainConfig("empty train_snr_set".into()));
        }
    }
    clean
        .iter()
        .map(|&audio| {
            if !rng.gen_bool(cfg.aug_prob) {
                return Ok(Augmented {
                    audio: audio.clone(),
                    label: NoiseLabel::Clean,
                    snr_db: None,
                });
            }
            let label = NoiseLabel::NOISE_TYPES[rng.gen_range(0..NoiseLabel::NOISE_TYPES.len())];
            let snr = cfg.train_snr_set[rng.gen_range(0..cfg.train_snr_set.len())];
            let files = noise.get(label);
            let file = &files[rng.gen_range(0..files.len())];
            let (mixed, _) = mix_at_snr(audio, file, label, snr, rng.gen())?;
            Ok(Augmented {
                audio: mixed,
                label,
                snr_db: Some(snr),
            })
        })
        .collect()
}

/// Network-ready inputs for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: FeatureMatrix,
    pub target: LabelSequence,
    pub label: NoiseLabel,
}

impl Example {
    pub fn new(params: &ModelParams, audio: &AudioBuffer, transcript: &str, label: NoiseLabel) -> Result<Self> {
        Ok(Example {
            features: extract_features(audio, &params.config.features)?,
            target: params.config.vocab.encode(transcript)?,
            label,
        })
    }
}

/// Weights of the two loss terms for one gradient evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub ctc_weight: f64,
    /// Zero skips the noise classifier entirely.
    pub noise_weight: f64,
    /// Gradient reversal coefficient in front of the classifier.
    pub reversal: Option<f64>,
}

impl Objective {
    /// The loss a mode trains on at the current `eta`.
    pub fn for_mode(cfg: &TrainConfig, eta: f64) -> Self {
        match cfg.mode {
            TrainMode::VanillaDat | TrainMode::SoftFreezeDat => Objective {
                ctc_weight: 1.0,
                noise_weight: 0.0,
                reversal: None,
            },
            TrainMode::Mtl => Objective {
                ctc_weight: cfg.lambda,
                noise_weight: config::noise_weight(cfg.lambda, eta),
                reversal: None,
            },
            TrainMode::Avt => Objective {
                ctc_weight: cfg.lambda,
                noise_weight: config::noise_weight(cfg.lambda, eta),
                reversal: Some(cfg.grl_coef),
            },
        }
    }

    fn uses_head(&self) -> bool {
        self.noise_weight != 0.0
    }
}

/// Gradient and outputs for one utterance.
#[derive(Clone, Debug)]
pub struct ExampleOutput {
    pub grads: Vec<Tensor>,
    pub loss: LossBreakdown,
    pub log_probs: Tensor,
    pub noise_logits: Option<Tensor>,
}

pub fn example_gradient(params: &ModelParams, ex: &Example, obj: &Objective) -> Result<ExampleOutput> {
    let mut g = Graph::new();
    let net = Network::bind(&mut g, params);
    let out = net.forward(&mut g, &ex.features)?;
    let ctc = ctc_loss(&mut g, out.log_probs, &ex.target, params.config.vocab.blank())?;
    let l_ctc = g.value(ctc).item();
    let (root, l_ce, noise_logits) = if obj.uses_head() {
        let logits = net.noise_forward(&mut g, out.tapped, obj.reversal)?;
        let ce = cross_entropy(&mut g, logits, ex.label.index())?;
        let l_ce = g.value(ce).item();
        let a = g.scale(ctc, obj.ctc_weight)?;
        let b = g.scale(ce, obj.noise_weight)?;
        (g.add(a, b)?, Some(l_ce), Some(g.value(logits).clone()))
    } else {
        (g.scale(ctc, obj.ctc_weight)?, None, None)
    };
    g.backward(root)?;
    Ok(ExampleOutput {
        grads: net.grads(&g),
        loss: LossBreakdown {
            l_ctc,
            l_ce,
            l_hybrid: g.value(root).item(),
        },
        log_probs: g.value(out.log_probs).clone(),
        noise_logits,
    })
}

/// Mean gradient and mean losses over a batch. Utterances are evaluated in
/// parallel but reduced in batch order, so the result does not depend on
/// the thread count.
pub fn batch_gradient(params: &ModelParams, batch: &[Example], obj: &Objective) -> Result<(Vec<Tensor>, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::InvalidTrainConfig("empty batch".into()));
    }
    let outs: Vec<ExampleOutput> = batch
        .par_iter()
        .map(|ex| example_gradient(params, ex, obj))
        .collect::<Result<_>>()?;
    let n = outs.len() as f64;
    let mut grads: Vec<Tensor> = params.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
    let mut loss = LossBreakdown::default();
    let mut l_ce = 0.0;
    for o in &outs {
        for (acc, g) in grads.iter_mut().zip(&o.grads) {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        loss.l_ctc += o.loss.l_ctc;
        loss.l_hybrid += o.loss.l_hybrid;
        l_ce += o.loss.l_ce.unwrap_or(0.0);
    }
    for g in &mut grads {
        for v in g.data_mut() {
            *v /= n;
        }
    }
    loss.l_ctc /= n;
    loss.l_hybrid /= n;
    loss.l_ce = obj.uses_head().then_some(l_ce / n);
    Ok((grads, loss))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::audio::measured_snr;
    use crate::corpus::{synth_corpus, synth_noise_files, SynthSpec};

    fn noise() -> NoiseSet {
        NoiseSet::new(synth_noise_files(2, 0.3, 2).unwrap())
    }

    #[test]
    fn no_augmentation_is_identity() {
        let utts = synth_corpus(&SynthSpec::default(), 4).unwrap();
        let refs: Vec<&AudioBuffer> = utts.iter().map(|u| &u.audio).collect();
        let mut cfg = TrainConfig::new(TrainMode::VanillaDat);
        cfg.aug_prob = 0.0;
        let out = augment_batch(&refs, &NoiseSet::default(), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (o, u) in out.iter().zip(&utts) {
            assert_eq!(o.audio, u.audio);
            assert_eq!(o.label, NoiseLabel::Clean);
        }
    }

    #[test]
    fn full_augmentation_hits_the_snr_set() {
        let utts = synth_corpus(&SynthSpec::default(), 30).unwrap();
        let refs: Vec<&AudioBuffer> = utts.iter().map(|u| &u.audio).collect();
        let mut cfg = TrainConfig::new(TrainMode::VanillaDat);
        cfg.aug_prob = 1.0;
        let out = augment_batch(&refs, &noise(), &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (o, u) in out.iter().zip(&utts) {
            assert!(o.label.is_noise());
            let snr = o.snr_db.unwrap();
            assert!(cfg.train_snr_set.contains(&snr));
            let comp = AudioBuffer::new(
                o.audio.samples.iter().zip(&u.audio.samples).map(|(m, c)| m - c).collect(),
                u.audio.sample_rate_hz,
            );
            assert!((measured_snr(&u.audio, &comp).unwrap() - snr).abs() < 1e-6);
        }
    }

    #[test]
    fn augmentation_rate_is_near_half() {
        let clip = AudioBuffer::new(vec![0.1; 400], 16_000);
        let refs = vec![&clip; 10_000];
        let cfg = TrainConfig::new(TrainMode::VanillaDat);
        let small = NoiseSet::new(synth_noise_files(1, 0.05, 3).unwrap());
        let out = augment_batch(&refs, &small, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let frac = out.iter().filter(|o| o.label.is_noise()).count() as f64 / out.len() as f64;
        assert!((0.47..=0.53).contains(&frac), "{frac}");
    }

    #[test]
    fn empty_noise_set_is_an_error() {
        let utts = synth_corpus(&SynthSpec::default(), 1).unwrap();
        let cfg = TrainConfig::new(TrainMode::VanillaDat);
        let err = augment_batch(&[&utts[0].audio], &NoiseSet::default(), &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::EmptyNoiseSet(_))));
    }

    #[test]
    fn dat_objective_has_no_noise_term() {
        use crate::model::{init_params, ModelConfig};
        let spec = SynthSpec::default();
        let cfg = ModelConfig {
            vocab: spec.vocab().unwrap(),
            ..ModelConfig::default()
        };
        let p = init_params(&cfg, 0).unwrap();
        let u = &synth_corpus(&spec, 1).unwrap()[0];
        let ex = Example::new(&p, &u.audio, &u.transcript, NoiseLabel::Clean).unwrap();
        let out = example_gradient(&p, &ex, &Objective::for_mode(&TrainConfig::new(TrainMode::VanillaDat), 10.0)).unwrap();
        assert_eq!(out.loss.l_ce, None);
        assert_eq!(out.loss.l_hybrid, out.loss.l_ctc);
        let mtl = TrainConfig::new(TrainMode::Mtl);
        let out = example_gradient(&p, &ex, &Objective::for_mode(&mtl, 10.0)).unwrap();
        let expected = hybrid_loss(out.loss.l_ctc, out.loss.l_ce.unwrap(), 0.7, 10.0);
        assert!((out.loss.l_hybrid - expected).abs() < 1e-12);
    }
}
