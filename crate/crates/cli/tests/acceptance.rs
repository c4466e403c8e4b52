//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use noiseadapt_core::audio::{measured_snr, mix_at_snr, AudioBuffer};
use noiseadapt_core::autodiff::Tensor;
use noiseadapt_core::corpus::{
    build_noisy_test_set, load_manifest, mix_test_grid, partition_noise_set, synth_corpus, synth_noise,
    synth_noise_files, ConditionedUtterance, NoiseSet, SynthSpec, Utterance,
};
use noiseadapt_core::ctc::{ctc_brute_force, ctc_forward_backward, LabelSequence};
use noiseadapt_core::eval::{edit_distance, score_utterances, wer, ResultsGrid, ScoredUtterance};
use noiseadapt_core::model::{init_params, tiny_config, tiny_model_gradcheck, ModelConfig, ModelParams, ParamGroup};
use noiseadapt_core::trainer::{
    anneal_eta, augment_batch, batch_gradient, effective_lr, evaluate_dev, example_gradient, hybrid_loss,
    make_dev_set, train, Example, Objective, TrainConfig, TrainData, TrainMode,
};
use noiseadapt_core::NoiseLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(bool, String)>;

fn random_log_probs(rng: &mut ChaCha8Rng, frames: usize, vocab: usize) -> Tensor {
    let mut data = Vec::with_capacity(frames * vocab);
    for _ in 0..frames {
        let logits: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
        data.extend(logits.iter().map(|v| v - lse));
    }
    Tensor::new(vec![frames, vocab], data).expect("consistent shape")
}

/// CTC dynamic programme against path enumeration.
fn criterion_1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (vocab, blank) = (3, 0);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut infeasible_ok = true;
    for frames in 1..=4 {
        // Loss targets carry at least one label; the empty one must be refused.
        let lp = random_log_probs(&mut rng, frames, vocab);
        infeasible_ok &= ctc_forward_backward(&lp, &LabelSequence(Vec::new()), blank).is_err();
        for len in 1..=2 {
            for _ in 0..100 {
                let lp = random_log_probs(&mut rng, frames, vocab);
                let target = LabelSequence((0..len).map(|_| rng.gen_range(1..vocab)).collect());
                if target.min_frames() > frames {
                    infeasible_ok &= ctc_forward_backward(&lp, &target, blank).is_err();
                    continue;
                }
                let (dp, _) = ctc_forward_backward(&lp, &target, blank)?;
                let brute = ctc_brute_force(&lp, &target, blank)?;
                worst = worst.max((dp - brute).abs());
                compared += 1;
            }
        }
    }
    Ok((
        worst < 1e-9 && infeasible_ok,
        format!("{compared} feasible cases, max |dp - brute| = {worst:.2e}; empty and infeasible targets rejected: {infeasible_ok}"),
    ))
}

/// Tiny-model finite-difference gradient check.
fn criterion_2() -> Check {
    let cfg = tiny_config();
    ensure!(
        cfg.conv.len() == 1 && cfg.n_recurrent == 2 && cfg.hidden_size == 4 && cfg.vocab.len() == 4,
        "tiny model is not 1 conv / 2 recurrent / H=4 / V=4"
    );
    let errs: Vec<f64> = (1..=5).map(tiny_model_gradcheck).collect::<noiseadapt_core::Result<_>>()?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    Ok((worst < 1e-4, format!("max relative error over 5 seeds = {worst:.2e}")))
}

fn smoke_model(seed: u64) -> Result<(SynthSpec, ModelParams)> {
    let spec = SynthSpec::default();
    let cfg = ModelConfig {
        vocab: spec.vocab()?,
        ..ModelConfig::default()
    };
    let params = init_params(&cfg, seed)?;
    Ok((spec, params))
}

/// One MTL step against one AvT step on the same state and batch.
fn criterion_3() -> Check {
    let (spec, params) = smoke_model(31)?;
    let utts = synth_corpus(&SynthSpec { seed: 32, ..spec }, 4)?;
    let noise = NoiseSet::new(synth_noise_files(1, 1.0, 33)?);
    let mut cfg = TrainConfig::new(TrainMode::Mtl);
    cfg.aug_prob = 1.0;
    let refs: Vec<&AudioBuffer> = utts.iter().map(|u| &u.audio).collect();
    let aug = augment_batch(&refs, &noise, &cfg, &mut ChaCha8Rng::seed_from_u64(34))?;
    let batch: Vec<Example> = utts
        .iter()
        .zip(&aug)
        .map(|(u, a)| Example::new(&params, &a.audio, &u.transcript, a.label))
        .collect::<noiseadapt_core::Result<_>>()?;

    let mtl = Objective::for_mode(&cfg, cfg.eta0);
    let avt = Objective::for_mode(&TrainConfig::new(TrainMode::Avt), cfg.eta0);
    ensure!(mtl.reversal.is_none() && avt.reversal == Some(1.0), "objectives differ from the mode contract");
    let ctc_only = Objective {
        noise_weight: 0.0,
        ..mtl
    };
    let (g_mtl, _) = batch_gradient(&params, &batch, &mtl)?;
    let (g_avt, _) = batch_gradient(&params, &batch, &avt)?;
    let (g_ctc, _) = batch_gradient(&params, &batch, &ctc_only)?;

    let (mut trunk, mut head, mut recog) = (0.0f64, 0.0f64, 0.0f64);
    let mut trunk_signal = 0.0f64;
    for (i, p) in params.params.iter().enumerate() {
        for ((m, a), c) in g_mtl[i].data().iter().zip(g_avt[i].data()).zip(g_ctc[i].data()) {
            let (nm, na) = (m - c, a - c);
            match p.tag.group {
                ParamGroup::FeatureExtractor => {
                    trunk = trunk.max((na + nm).abs());
                    trunk_signal = trunk_signal.max(nm.abs());
                }
                ParamGroup::NoiseClassifier => head = head.max((na - nm).abs()),
                ParamGroup::Recognition => recog = recog.max(nm.abs().max(na.abs())),
            }
        }
    }
    let mut logits_equal = true;
    for ex in &batch {
        let a = example_gradient(&params, ex, &mtl)?;
        let b = example_gradient(&params, ex, &avt)?;
        logits_equal &= a.noise_logits == b.noise_logits && a.log_probs == b.log_probs;
    }
    Ok((
        trunk < 1e-12 && head < 1e-12 && recog < 1e-12 && trunk_signal > 1e-6 && logits_equal,
        format!(
            "trunk |avt + mtl| = {trunk:.1e} (branch magnitude {trunk_signal:.1e}), head diff = {head:.1e}, \
             recognition branch = {recog:.1e}, forward outputs identical: {logits_equal}"
        ),
    ))
}

/// Measured SNR of random mixes.
fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let utts = synth_corpus(&SynthSpec { seed: 42, ..SynthSpec::default() }, 50)?;
    let noises: Vec<AudioBuffer> = NoiseLabel::NOISE_TYPES
        .iter()
        .enumerate()
        .map(|(i, &l)| synth_noise(l, 24_000, 43 + i as u64))
        .collect::<noiseadapt_core::Result<_>>()?;
    let snrs = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0];
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let t = k % NoiseLabel::NOISE_TYPES.len();
        let snr = snrs[rng.gen_range(0..snrs.len())];
        let clean = &utts[rng.gen_range(0..utts.len())].audio;
        let (mixed, recipe) = mix_at_snr(clean, &noises[t], NoiseLabel::NOISE_TYPES[t], snr, rng.gen())?;
        ensure!(recipe.snr_db == snr && recipe.noise_label == NoiseLabel::NOISE_TYPES[t], "recipe mismatch");
        let component = AudioBuffer::new(
            mixed.samples.iter().zip(&clean.samples).map(|(m, c)| m - c).collect(),
            clean.sample_rate_hz,
        );
        worst = worst.max((measured_snr(clean, &component)? - snr).abs());
    }
    Ok((worst < 1e-6, format!("1000 mixes over 7 types, max |measured - target| = {worst:.2e} dB")))
}

/// Full-size noisy test grid on disk.
fn criterion_5() -> Check {
    let dir = tempfile::tempdir()?;
    // Ten 100 ms symbols make every utterance exactly one second.
    let spec = SynthSpec {
        min_symbols: 10,
        max_symbols: 10,
        seed: 51,
        ..SynthSpec::default()
    };
    let clean = synth_corpus(&spec, 120)?;
    ensure!(clean.iter().all(|u| u.audio.duration_secs() == 1.0), "utterances are not 1 s");
    let files = synth_noise_files(18, 2.0, 52)?;
    let (_, test) = partition_noise_set(&files, 10, 8, 53)?;
    let snrs = [0.0, 5.0, 10.0, 15.0, 20.0];
    let entries = build_noisy_test_set(&clean, &NoiseSet::new(test), &snrs, 54, dir.path())?;
    let on_disk = load_manifest(dir.path().join("test_manifest.csv"))?;
    let wavs = std::fs::read_dir(dir.path().join("wav"))?.count();
    let scores: Vec<ScoredUtterance> = on_disk
        .iter()
        .map(|e| ScoredUtterance {
            label: e.noise_label,
            snr_db: e.snr_db,
            edits: 0,
            ref_words: 10,
        })
        .chain(std::iter::once(ScoredUtterance {
            label: NoiseLabel::Clean,
            snr_db: None,
            edits: 0,
            ref_words: 10,
        }))
        .collect();
    let grid = ResultsGrid::from_scores("check", &scores, &snrs)?;
    let ok = entries.len() == 4200 && on_disk.len() == 4200 && wavs == 4200 && grid.cells.len() == 35;
    Ok((
        ok,
        format!(
            "{} entries, {} manifest rows, {wavs} WAV files, {} noisy cells + clean",
            entries.len(),
            on_disk.len(),
            grid.cells.len()
        ),
    ))
}

/// Per-parameter learning rates of the full model.
fn criterion_6() -> Check {
    let (_, params) = smoke_model(61)?;
    let avt = TrainConfig::new(TrainMode::Avt);
    let sf = TrainConfig::new(TrainMode::SoftFreezeDat);
    let mut ok = true;
    let mut seen = [false; 4];
    for p in &params.params {
        let expected = match p.tag.group {
            ParamGroup::FeatureExtractor => 0.0008 * 0.8,
            ParamGroup::Recognition => 0.0008 * 0.05,
            ParamGroup::NoiseClassifier => 0.0008 * 1.0,
        };
        ok &= effective_lr(&p.tag, &avt) == expected;
        seen[p.tag.group as usize] = true;
        if p.tag.soft_freeze {
            ok &= effective_lr(&p.tag, &sf) == 0.0001 * 0.5;
            seen[3] = true;
        } else {
            ok &= effective_lr(&p.tag, &sf) == 0.0001;
        }
    }
    ok &= seen.iter().all(|&s| s);
    Ok((
        ok,
        format!(
            "AvT {} / {} / {}, soft-freeze members {} over {} parameter tensors",
            0.0008 * 0.8,
            0.0008 * 0.05,
            0.0008 * 1.0,
            0.0001 * 0.5,
            params.len()
        ),
    ))
}

/// Hybrid loss arithmetic and the eta schedule.
fn criterion_7() -> Check {
    let h = hybrid_loss(2.0, 0.5, 0.7, 10.0);
    let mut eta = 10.0;
    let mut worst: f64 = 0.0;
    for k in 1..=50 {
        eta = anneal_eta(eta, 1.05);
        worst = worst.max((eta - 10.0 / 1.05f64.powi(k)).abs());
    }
    Ok((h == 2.9 && worst < 1e-12, format!("hybrid = {h}, max eta deviation over 50 steps = {worst:.1e}")))
}

/// Minimal edit cost by exhaustive recursion.
fn brute_edits(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = brute_edits(ra, rb) + usize::from(x != y);
            sub.min(brute_edits(ra, b) + 1).min(brute_edits(a, rb) + 1)
        }
    }
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut mismatches = 0;
    for _ in 0..200 {
        let a: Vec<u8> = (0..rng.gen_range(0..=5)).map(|_| rng.gen_range(0..3)).collect();
        let b: Vec<u8> = (0..rng.gen_range(0..=5)).map(|_| rng.gen_range(0..3)).collect();
        mismatches += usize::from(edit_distance(&a, &b) != brute_edits(&a, &b));
    }
    let deletions = wer("one two three", "")?;
    let inserted = wer("one two three", "one two three x y z w v")?;
    Ok((
        mismatches == 0 && deletions == 100.0 && inserted > 100.0,
        format!("{mismatches} DP/brute mismatches in 200 pairs; wer(3 words, empty) = {deletions}; with 5 insertions = {inserted:.1}"),
    ))
}

fn pooled_wer(params: &ModelParams, utts: &[ConditionedUtterance]) -> Result<f64> {
    let scores = score_utterances(params, utts)?;
    let (e, w) = scores.iter().fold((0, 0), |acc, s| (acc.0 + s.edits, acc.1 + s.ref_words));
    Ok(100.0 * e as f64 / w as f64)
}

/// Desk-scale training: recognition, robustness and the noise classifier.
fn criterion_9() -> Check {
    let spec = SynthSpec {
        seed: 1,
        ..SynthSpec::default()
    };
    let train_set: Vec<Utterance> = synth_corpus(&spec, 300)?;
    let test_set = synth_corpus(&SynthSpec { seed: 2, ..spec.clone() }, 50)?;
    let dev_clean = synth_corpus(&SynthSpec { seed: 3, ..spec.clone() }, 50)?;
    let mean_len = train_set.iter().map(|u| u.audio.duration_secs()).sum::<f64>() / 300.0;
    let files = synth_noise_files(18, 2.0, 4)?;
    let (tr, te) = partition_noise_set(&files, 10, 8, 5)?;
    let (train_noise, test_noise) = (NoiseSet::new(tr), NoiseSet::new(te));
    let model = ModelConfig {
        vocab: spec.vocab()?,
        ..ModelConfig::default()
    };
    ensure!(model.vocab.len() == 6, "vocab is not 5 symbols plus blank");

    let dat_cfg = |aug_prob: f64| {
        let mut c = TrainConfig::new(TrainMode::VanillaDat);
        c.base_lr = 0.05;
        c.batch_size = 8;
        c.epochs = 30;
        c.aug_prob = aug_prob;
        c.seed = 7;
        c
    };
    let run_dat = |cfg: &TrainConfig| -> Result<ModelParams> {
        let dev = make_dev_set(&dev_clean, &train_noise, cfg, 11)?;
        let data = TrainData {
            train: &train_set,
            dev: &dev,
            noise: &train_noise,
        };
        Ok(train(cfg, init_params(&model, 1)?, data, |_| {})?.best)
    };

    // Single worker, as the time budget is per core.
    let one_core = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let t0 = Instant::now();
    let dat = one_core.install(|| run_dat(&dat_cfg(0.5)))?;
    let dat_secs = t0.elapsed().as_secs_f64();
    let clean_only = run_dat(&dat_cfg(0.0))?;

    let clean_test: Vec<ConditionedUtterance> = test_set.iter().map(ConditionedUtterance::clean).collect();
    let zero_db = mix_test_grid(&test_set, &test_noise, &[0.0], 13)?;
    let dat_clean = pooled_wer(&dat, &clean_test)?;
    let dat_0 = pooled_wer(&dat, &zero_db)?;
    let base_0 = pooled_wer(&clean_only, &zero_db)?;

    // Both classifier runs start from the augmentation-trained model.
    let head_run = |mode: TrainMode| -> Result<f64> {
        let mut c = TrainConfig::new(mode);
        c.base_lr = 0.02;
        c.batch_size = 8;
        c.epochs = 30;
        c.clip_norm = Some(5.0);
        c.seed = 8;
        let dev = make_dev_set(&dev_clean, &train_noise, &c, 11)?;
        let data = TrainData {
            train: &train_set,
            dev: &dev,
            noise: &train_noise,
        };
        let out = train(&c, dat.clone(), data, |_| {})?;
        // Held-out: unseen utterances and unseen noise files, roughly one
        // eighth of them clean.
        let mut held_cfg = c.clone();
        held_cfg.aug_prob = 0.875;
        let pool: Vec<Utterance> = (0..4).flat_map(|_| test_set.clone()).collect();
        let held = make_dev_set(&pool, &test_noise, &held_cfg, 12)?;
        let ex: Vec<(Example, String)> = held
            .iter()
            .map(|u| Ok((Example::new(&out.last, &u.audio, &u.transcript, u.label)?, u.transcript.clone())))
            .collect::<noiseadapt_core::Result<_>>()?;
        Ok(evaluate_dev(&out.last, &ex)?.noise_acc)
    };
    let mtl_acc = head_run(TrainMode::Mtl)?;
    let avt_acc = head_run(TrainMode::Avt)?;

    let checks = [
        dat_clean <= 15.0,
        dat_secs <= 900.0,
        dat_0 + 10.0 <= base_0,
        mtl_acc >= 0.8,
        avt_acc < mtl_acc,
    ];
    Ok((
        checks.iter().all(|&c| c),
        format!(
            "utterances {mean_len:.2} s avg; DAT clean WER {dat_clean:.1} in {dat_secs:.0} s on one core; \
             0 dB WER DAT {dat_0:.1} vs clean-only {base_0:.1}; noise accuracy MTL {mtl_acc:.3}, AvT {avt_acc:.3} \
             (chance 0.125)"
        ),
    ))
}

fn cli(args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_noiseadapt")).args(args).output()?;
    ensure!(
        out.status.success(),
        "noiseadapt {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

/// Two identical `train` invocations.
fn criterion_10() -> Check {
    let dir = tempfile::tempdir()?;
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    cli(&[
        "synth",
        "--out",
        &p("data"),
        "--seed",
        "3",
        "--set",
        "synth.n_train=12",
        "--set",
        "synth.n_dev=4",
        "--set",
        "synth.n_test=2",
        "--set",
        "synth.noise_per_type=2",
        "--set",
        "synth.noise_train=1",
        "--set",
        "synth.noise_test=1",
        "--set",
        "synth.noise_seconds=1.0",
    ])?;
    let config = dir.path().join("train.json");
    std::fs::write(
        &config,
        r#"{"train.mode": "MTL", "train.epochs": 2, "train.batch_size": 4, "train.base_lr": 0.01,
            "model.n_recurrent": 2, "model.tap_index": 0, "model.hidden_size": 8}"#,
    )?;
    for run in ["run1", "run2"] {
        cli(&[
            "train",
            "--config",
            &config.to_string_lossy(),
            "--train",
            &p("data/train/manifest.csv"),
            "--dev",
            &p("data/dev/manifest.csv"),
            "--noise",
            &p("data/noise_manifest.csv"),
            "--seed",
            "11",
            "--out",
            &p(run),
        ])?;
    }
    let read = |run: &str, f: &str| std::fs::read(Path::new(&p(run)).join(f)).with_context(|| format!("{run}/{f}"));
    let (a, b) = (read("run1", "metrics.csv")?, read("run2", "metrics.csv")?);
    let rows = String::from_utf8_lossy(&a).lines().count();
    let ckpt_equal = read("run1", "best.json")? == read("run2", "best.json")?;
    Ok((
        a == b && rows == 3,
        format!("metrics.csv {} bytes, {rows} lines, identical: {}; checkpoints identical: {ckpt_equal}", a.len(), a == b),
    ))
}

fn main() {
    type Criterion = (u32, &'static str, Option<u64>, fn() -> Check);
    let criteria: [Criterion; 10] = [
        (1, "CTC oracle equivalence", Some(10), criterion_1),
        (2, "gradient suite", Some(60), criterion_2),
        (3, "gradient reversal exactness", Some(30), criterion_3),
        (4, "SNR exactness", Some(30), criterion_4),
        (5, "test-grid cardinality", Some(120), criterion_5),
        (6, "learning-rate ledger", None, criterion_6),
        (7, "hybrid-loss arithmetic", None, criterion_7),
        (8, "WER oracle", None, criterion_8),
        (9, "end-to-end learnability", None, criterion_9),
        (10, "training determinism", None, criterion_10),
    ];
    let mut failed = Vec::new();
    for (n, name, budget, f) in criteria {
        let t = Instant::now();
        let result = f();
        let secs = t.elapsed();
        let (pass, detail) = match result {
            Ok((ok, detail)) => match budget {
                Some(b) if secs > Duration::from_secs(b) => (false, format!("{detail}; over the {b} s budget")),
                _ => (ok, detail),
            },
            Err(e) => (false, format!("error: {e:#}")),
        };
        println!(
            "criterion {n:2} {:4} {name} ({:.1} s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            secs.as_secs_f64()
        );
        if !pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
