use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use noiseadapt_core::audio::read_wav;
use noiseadapt_core::corpus::{
    build_noisy_test_set, entry_seed, load_noise_set, load_utterances, partition_noise_set, save_noise_manifest,
    synth_corpus, synth_noise_files, write_corpus, write_noise_files, NoiseSet, NoiseSplit, SynthSpec, Utterance,
};
use noiseadapt_core::ctc::Vocab;
use noiseadapt_core::eval::{evaluate_grid, transcribe, write_results_csv};
use noiseadapt_core::model::{init_params, load_checkpoint, save_checkpoint, tiny_model_gradcheck};
use noiseadapt_core::trainer::{make_dev_set, train as run_training, write_metrics_csv, TrainData};

use crate::config::RunConfig;

/// Largest acceptable relative error of the gradient check.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Sub-seeds derived from the master seed, one per independent stream.
mod stream {
    pub const SYNTH_TRAIN: u64 = 0;
    pub const SYNTH_DEV: u64 = 1;
    pub const SYNTH_TEST: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const PARTITION: u64 = 4;
    pub const DEV_AUGMENT: u64 = 5;
}

/// Applies the thread cap, logs the seed and prepares the output directory.
fn setup(cfg: &RunConfig, needs_out: bool) -> Result<(u64, Option<PathBuf>)> {
    let threads: usize = cfg.get_or("threads", 1)?;
    if threads == 0 {
        bail!("--threads must be at least 1");
    }
    // A second call in the same process keeps the first pool; harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let seed = cfg.seed()?;
    eprintln!("seed: {seed}, threads: {threads}");
    let out = match (cfg.get::<PathBuf>("out")?, needs_out) {
        (Some(dir), _) => {
            fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
            Some(dir)
        }
        (None, true) => Some(cfg.out_dir()?),
        (None, false) => None,
    };
    Ok((seed, out))
}

fn write_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::write(out.join("config.json"), cfg.to_json() + "\n")?;
    Ok(())
}

fn load_clean(path: &Path) -> Result<Vec<Utterance>> {
    let utts = load_utterances(path).with_context(|| format!("cannot load manifest {}", path.display()))?;
    Ok(utts
        .into_iter()
        .map(|u| Utterance {
            id: u.id,
            audio: u.audio,
            transcript: u.transcript,
        })
        .collect())
}

fn load_noise(path: &Path, split: NoiseSplit) -> Result<NoiseSet> {
    load_noise_set(path, split).with_context(|| format!("cannot load noise manifest {}", path.display()))
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let (seed, out) = setup(cfg, true)?;
    let out = out.expect("synth requires --out");
    let spec = cfg.synth_spec(entry_seed(seed, stream::SYNTH_TRAIN))?;
    let sets = [
        ("train", cfg.get_or("synth.n_train", 300usize)?, spec.seed),
        ("dev", cfg.get_or("synth.n_dev", 50usize)?, entry_seed(seed, stream::SYNTH_DEV)),
        ("test", cfg.get_or("synth.n_test", 120usize)?, entry_seed(seed, stream::SYNTH_TEST)),
    ];
    for (name, n, s) in sets {
        let utts = synth_corpus(&SynthSpec { seed: s, ..spec.clone() }, n)?;
        write_corpus(&utts, &out.join(name), "manifest.csv")?;
        eprintln!("{name}: {n} utterances -> {}", out.join(name).join("manifest.csv").display());
    }

    let per_type: usize = cfg.get_or("synth.noise_per_type", 18)?;
    let seconds: f64 = cfg.get_or("synth.noise_seconds", 2.0)?;
    let files = synth_noise_files(per_type, seconds, entry_seed(seed, stream::NOISE))?;
    let (train, test) = partition_noise_set(
        &files,
        cfg.get_or("synth.noise_train", 10)?,
        cfg.get_or("synth.noise_test", 8)?,
        entry_seed(seed, stream::PARTITION),
    )?;
    let mut rows = write_noise_files(&train, NoiseSplit::Train, &out)?;
    rows.extend(write_noise_files(&test, NoiseSplit::Test, &out)?);
    save_noise_manifest(&rows, out.join("noise_manifest.csv"))?;
    eprintln!("noise: {} files -> {}", rows.len(), out.join("noise_manifest.csv").display());
    write_config(cfg, &out)
}

pub fn mix(cfg: &RunConfig) -> Result<()> {
    let (seed, out) = setup(cfg, true)?;
    let out = out.expect("mix requires --out");
    let clean = load_clean(&cfg.path("paths.corpus", "--corpus")?)?;
    let noise = load_noise(&cfg.path("paths.noise", "--noise")?, NoiseSplit::Test)?;
    let snrs: Vec<f64> = cfg.get_or("mix.snrs", vec![0.0, 5.0, 10.0, 15.0, 20.0])?;
    let entries = build_noisy_test_set(&clean, &noise, &snrs, seed, &out)?;
    eprintln!("{} test entries -> {}", entries.len(), out.join("test_manifest.csv").display());
    write_config(cfg, &out)
}

/// Sorted distinct words of the transcripts.
fn vocab_of(utts: &[Utterance]) -> Result<Vocab> {
    let words: BTreeSet<&str> = utts.iter().flat_map(|u| u.transcript.split_whitespace()).collect();
    let words: Vec<&str> = words.into_iter().collect();
    Ok(Vocab::words(&words)?)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let tc = cfg.train_config()?;
    let (seed, out) = setup(cfg, true)?;
    let out = out.expect("train requires --out");
    let train_set = load_clean(&cfg.path("paths.train", "--train")?)?;
    let dev_clean = load_clean(&cfg.path("paths.dev", "--dev")?)?;
    let noise = match cfg.get::<PathBuf>("paths.noise")? {
        Some(p) => load_noise(&p, NoiseSplit::Train)?,
        None if tc.aug_prob > 0.0 => bail!("missing --noise (config key paths.noise); required when train.aug_prob > 0"),
        None => NoiseSet::default(),
    };
    let init = match cfg.get::<PathBuf>("paths.init")? {
        Some(p) => load_checkpoint(&p).with_context(|| format!("cannot load checkpoint {}", p.display()))?,
        None => init_params(&cfg.model_config(vocab_of(&train_set)?)?, seed)?,
    };
    let dev = make_dev_set(&dev_clean, &noise, &tc, entry_seed(seed, stream::DEV_AUGMENT))?;
    eprintln!(
        "training {} for {} epochs on {} utterances ({} parameters)",
        tc.mode,
        tc.epochs,
        train_set.len(),
        init.total_values()
    );
    let data = TrainData {
        train: &train_set,
        dev: &dev,
        noise: &noise,
    };
    let outcome = run_training(&tc, init, data, |m| {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        eprintln!(
            "epoch {:3}  l_ctc {:.4}  l_ce {}  l_hybrid {:.4}  eta {:.4}  dev_wer {:.1}  noise_acc {}",
            m.epoch,
            m.l_ctc,
            opt(m.l_ce),
            m.l_hybrid,
            m.eta,
            m.dev_wer,
            opt(m.noise_acc)
        );
    })?;
    write_metrics_csv(BufWriter::new(File::create(out.join("metrics.csv"))?), &outcome.metrics)?;
    save_checkpoint(out.join("best.json"), &outcome.best)?;
    save_checkpoint(out.join("last.json"), &outcome.last)?;
    eprintln!("best epoch {} -> {}", outcome.best_epoch, out.join("best.json").display());
    write_config(cfg, &out)
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let (_, out) = setup(cfg, true)?;
    let out = out.expect("eval requires --out");
    let ckpt = cfg.path("paths.checkpoint", "--checkpoint")?;
    let params = load_checkpoint(&ckpt).with_context(|| format!("cannot load checkpoint {}", ckpt.display()))?;
    let test = cfg.path("paths.test", "--test")?;
    let mut utts = load_utterances(&test).with_context(|| format!("cannot load manifest {}", test.display()))?;
    if let Some(clean) = cfg.get::<PathBuf>("paths.clean")? {
        utts.extend(load_utterances(&clean).with_context(|| format!("cannot load manifest {}", clean.display()))?);
    }
    let snrs: Vec<f64> = match cfg.get("eval.snrs")? {
        Some(s) => s,
        None => {
            let mut s: Vec<f64> = utts.iter().filter_map(|u| u.snr_db).collect();
            s.sort_by(f64::total_cmp);
            s.dedup();
            s
        }
    };
    let method: String = match cfg.get("eval.method")? {
        Some(m) => m,
        None => ckpt.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned()),
    };
    let grid = evaluate_grid(&method, &params, &utts, &snrs)?;
    write_results_csv(BufWriter::new(File::create(out.join("results.csv"))?), std::slice::from_ref(&grid))?;
    eprintln!("{method}: clean WER {:.1} over {} utterances", grid.clean_wer, utts.len());
    for snr in &snrs {
        if let Some(w) = grid.mean_at_snr(*snr) {
            eprintln!("{method}: mean WER at {snr} dB {w:.1}");
        }
    }
    write_config(cfg, &out)
}

pub fn decode(cfg: &RunConfig) -> Result<()> {
    let (_, out) = setup(cfg, false)?;
    let ckpt = cfg.path("paths.checkpoint", "--checkpoint")?;
    let params = load_checkpoint(&ckpt).with_context(|| format!("cannot load checkpoint {}", ckpt.display()))?;
    let wav = cfg.path("paths.wav", "--wav")?;
    let audio = read_wav(&wav).with_context(|| format!("cannot read {}", wav.display()))?;
    let text = transcribe(&params, &audio)?;
    println!("{text}");
    if let Some(dir) = out {
        fs::write(dir.join("transcript.txt"), format!("{text}\n"))?;
    }
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let (seed, out) = setup(cfg, false)?;
    let n: u64 = cfg.get_or("gradcheck.seeds", 5)?;
    if n == 0 {
        bail!("--seeds must be at least 1");
    }
    let mut worst: f64 = 0.0;
    for s in seed..seed + n {
        let err = tiny_model_gradcheck(s)?;
        eprintln!("seed {s}: max relative error {err:.3e}");
        worst = worst.max(err);
    }
    let line = format!("max relative error: {worst:.3e}");
    println!("{line}");
    if let Some(dir) = out {
        fs::write(dir.join("gradcheck.txt"), format!("{line}\n"))?;
    }
    // Written so that a NaN error also fails.
    if worst.is_nan() || worst >= GRADCHECK_TOLERANCE {
        bail!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
    }
    Ok(())
}
