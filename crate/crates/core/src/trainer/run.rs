use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{anneal_eta, augment_batch, batch_gradient, sgd_step, Example, Objective, OptimizerState, TrainConfig};
use crate::autodiff::Graph;
use crate::corpus::{ConditionedUtterance, NoiseSet, Utterance};
use crate::ctc::{ctc_forward_backward, greedy_decode};
use crate::error::{Error, Result};
use crate::eval::word_errors;
use crate::model::{ModelParams, Network};

pub const METRICS_HEADER: &str = "epoch,l_ctc,l_ce,l_hybrid,eta,dev_wer,noise_acc";

/// Inputs of one training run.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [Utterance],
    pub dev: &'a [ConditionedUtterance],
    pub noise: &'a NoiseSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub l_ctc: f64,
    pub l_ce: Option<f64>,
    pub l_hybrid: f64,
    /// Noise-term weight used during the epoch.
    pub eta: f64,
    pub dev_wer: f64,
    pub dev_loss: f64,
    pub noise_acc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the epoch with the best dev WER (ties: lower dev loss).
    pub best: ModelParams,
    pub best_epoch: usize,
    pub last: ModelParams,
    pub metrics: Vec<EpochMetrics>,
}

/// Development utterances, each augmented once with the run's
/// augmentation settings and then fixed.
pub fn make_dev_set(clean: &[Utterance], noise: &NoiseSet, cfg: &TrainConfig, seed: u64) -> Result<Vec<ConditionedUtterance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<_> = clean.iter().map(|u| &u.audio).collect();
    let aug = augment_batch(&refs, noise, cfg, &mut rng)?;
    Ok(clean
        .iter()
        .zip(aug)
        .map(|(u, a)| ConditionedUtterance {
            id: u.id.clone(),
            audio: a.audio,
            transcript: u.transcript.clone(),
            label: a.label,
            snr_db: a.snr_db,
            recipe: None,
        })
        .collect())
}

/// Greedy dev WER, mean CTC loss and noise-classifier accuracy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DevScore {
    pub wer: f64,
    pub loss: f64,
    pub noise_acc: f64,
}

pub fn evaluate_dev(params: &ModelParams, dev: &[(Example, String)]) -> Result<DevScore> {
    if dev.is_empty() {
        return Err(Error::InvalidTrainConfig("empty development set".into()));
    }
    let per: Vec<(usize, usize, f64, bool)> = dev
        .par_iter()
        .map(|(ex, transcript)| {
            let mut g = Graph::new();
            let net = Network::bind_frozen(&mut g, params);
            let out = net.forward(&mut g, &ex.features)?;
            let logits = net.noise_forward(&mut g, out.tapped, None)?;
            let lp = g.value(out.log_probs);
            let hyp = greedy_decode(lp, &params.config.vocab);
            let (edits, words) = word_errors(transcript, &hyp)?;
            let (loss, _) = ctc_forward_backward(lp, &ex.target, params.config.vocab.blank())?;
            let scores = g.value(logits).data();
            let guess = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
            Ok((edits, words, loss, guess == ex.label.index()))
        })
        .collect::<Result<_>>()?;
    let (edits, words) = per.iter().fold((0, 0), |(e, w), p| (e + p.0, w + p.1));
    let n = per.len() as f64;
    Ok(DevScore {
        wer: 100.0 * edits as f64 / words as f64,
        loss: per.iter().map(|p| p.2).sum::<f64>() / n,
        noise_acc: per.iter().filter(|p| p.3).count() as f64 / n,
    })
}

fn examples_for(params: &ModelParams, utts: &[ConditionedUtterance]) -> Result<Vec<(Example, String)>> {
    utts.par_iter()
        .map(|u| {
            Example::new(params, &u.audio, &u.transcript, u.label)
                .map(|ex| (ex, u.transcript.clone()))
                .map_err(|e| e.for_utterance(&u.id))
        })
        .collect()
}

/// Runs `cfg.epochs` epochs from `init`, reporting each epoch to `on_epoch`.
pub fn train(
    cfg: &TrainConfig,
    init: ModelParams,
    data: TrainData<'_>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidTrainConfig("empty training set".into()));
    }
    let mut params = init;
    let dev = examples_for(&params, data.dev)?;
    let mut state = OptimizerState::new(&params, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        state.epoch = epoch;
        let obj = Objective::for_mode(cfg, state.eta);
        order.shuffle(&mut rng);
        let (mut l_ctc, mut l_ce, mut l_hybrid, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let utts: Vec<&Utterance> = chunk.iter().map(|&i| &data.train[i]).collect();
            let audio: Vec<_> = utts.iter().map(|u| &u.audio).collect();
            let aug = augment_batch(&audio, data.noise, cfg, &mut rng)?;
            let batch: Vec<Example> = utts
                .par_iter()
                .zip(&aug)
                .map(|(u, a)| Example::new(&params, &a.audio, &u.transcript, a.label).map_err(|e| e.for_utterance(&u.id)))
                .collect::<Result<_>>()?;
            let (mut grads, loss) = batch_gradient(&params, &batch, &obj)?;
            sgd_step(&mut params, &mut grads, &mut state, cfg)?;
            l_ctc += loss.l_ctc;
            l_ce += loss.l_ce.unwrap_or(0.0);
            l_hybrid += loss.l_hybrid;
            batches += 1;
        }
        let nb = batches as f64;
        let score = evaluate_dev(&params, &dev)?;
        let uses_head = cfg.mode.uses_noise_head();
        let m = EpochMetrics {
            epoch,
            l_ctc: l_ctc / nb,
            l_ce: uses_head.then_some(l_ce / nb),
            l_hybrid: l_hybrid / nb,
            eta: state.eta,
            dev_wer: score.wer,
            dev_loss: score.loss,
            noise_acc: uses_head.then_some(score.noise_acc),
        };
        on_epoch(&m);
        let better = match &best {
            None => true,
            Some((w, l, _, _)) => m.dev_wer < *w || (m.dev_wer == *w && m.dev_loss < *l),
        };
        if better {
            best = Some((m.dev_wer, m.dev_loss, epoch, params.clone()));
        }
        metrics.push(m);
        if uses_head {
            state.eta = anneal_eta(state.eta, cfg.anneal_factor);
        }
    }
    let (_, _, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        metrics,
    })
}

/// Writes the per-epoch log. Absent values are empty fields.
pub fn write_metrics_csv<W: Write>(mut out: W, metrics: &[EpochMetrics]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.epoch,
            m.l_ctc,
            opt(m.l_ce),
            m.l_hybrid,
            m.eta,
            m.dev_wer,
            opt(m.noise_acc)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, synth_noise_files, SynthSpec};
    use crate::model::{init_params, ModelConfig};
    use crate::trainer::TrainMode;

    fn small_model(spec: &SynthSpec) -> ModelParams {
        let cfg = ModelConfig {
            vocab: spec.vocab().unwrap(),
            n_recurrent: 2,
            tap_index: 0,
            hidden_size: 16,
            head_hidden: 8,
            head_linear: 16,
            ..ModelConfig::default()
        };
        init_params(&cfg, 3).unwrap()
    }

    #[test]
    fn seeded_runs_are_identical_and_best_is_minimal() {
        let spec = SynthSpec::default();
        let train_set = synth_corpus(&spec, 8).unwrap();
        let noise = NoiseSet::new(synth_noise_files(1, 1.0, 1).unwrap());
        let mut cfg = TrainConfig::new(TrainMode::Mtl);
        cfg.epochs = 3;
        cfg.batch_size = 4;
        cfg.base_lr = 0.01;
        cfg.seed = 5;
        let dev = make_dev_set(&train_set[..4], &noise, &cfg, 9).unwrap();
        let data = TrainData {
            train: &train_set,
            dev: &dev,
            noise: &noise,
        };
        let run = || train(&cfg, small_model(&spec), data, |_| {}).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.best, b.best);
        let min = a.metrics.iter().map(|m| m.dev_wer).fold(f64::INFINITY, f64::min);
        assert_eq!(a.metrics[a.best_epoch - 1].dev_wer, min);
        assert!(a.metrics.windows(2).all(|w| w[1].eta < w[0].eta));

        let mut out = Vec::new();
        write_metrics_csv(&mut out, &a.metrics).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("epoch,l_ctc,l_ce,l_hybrid,eta,dev_wer,noise_acc\n1,"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn memorises_a_tiny_corpus() {
        let spec = SynthSpec {
            seed: 2,
            ..SynthSpec::default()
        };
        let train_set = synth_corpus(&spec, 5).unwrap();
        let dev: Vec<ConditionedUtterance> = train_set.iter().map(ConditionedUtterance::clean).collect();
        let mut cfg = TrainConfig::new(TrainMode::VanillaDat);
        cfg.aug_prob = 0.0;
        cfg.epochs = 200;
        cfg.batch_size = 5;
        cfg.base_lr = 0.05;
        cfg.clip_norm = Some(5.0);
        let noise = NoiseSet::default();
        let data = TrainData {
            train: &train_set,
            dev: &dev,
            noise: &noise,
        };
        let out = train(&cfg, small_model(&spec), data, |_| {}).unwrap();
        let first = out.metrics[0].l_ctc;
        let last = out.metrics.last().unwrap().l_ctc;
        assert!(last < 0.1, "loss went from {first} to {last}");
    }
}
