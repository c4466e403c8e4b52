//! Utterance and noise collections: manifests, the noise train/test
//! partition, the noisy test-grid builder and the synthetic tone corpus.

mod manifest;
mod synth;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::{mix_at_snr, read_wav, write_wav_f32, write_wav_pcm16, AudioBuffer, MixRecipe};
use crate::error::{Error, Result};
use crate::labels::NoiseLabel;

pub use manifest::{
    load_manifest, load_noise_manifest, load_recipes, resolve_path, save_manifest, save_noise_manifest,
    save_recipes, ManifestEntry, NoiseEntry, NoiseSplit, MANIFEST_HEADER, NOISE_MANIFEST_HEADER, RECIPE_HEADER,
};
pub use synth::{synth_corpus, synth_noise, synth_noise_files, SynthSpec};

/// A clean utterance held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio: AudioBuffer,
    pub transcript: String,
}

/// A test utterance with its condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedUtterance {
    pub id: String,
    pub audio: AudioBuffer,
    pub transcript: String,
    pub label: NoiseLabel,
    pub snr_db: Option<f64>,
    pub recipe: Option<MixRecipe>,
}

impl ConditionedUtterance {
    pub fn clean(u: &Utterance) -> Self {
        ConditionedUtterance {
            id: u.id.clone(),
            audio: u.audio.clone(),
            transcript: u.transcript.clone(),
            label: NoiseLabel::Clean,
            snr_db: None,
            recipe: None,
        }
    }
}

/// Noise recordings grouped by type.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseSet {
    pub files: BTreeMap<NoiseLabel, Vec<AudioBuffer>>,
}

impl NoiseSet {
    pub fn new(files: BTreeMap<NoiseLabel, Vec<AudioBuffer>>) -> Self {
        NoiseSet { files }
    }

    pub fn get(&self, label: NoiseLabel) -> &[AudioBuffer] {
        self.files.get(&label).map_or(&[], Vec::as_slice)
    }

    /// Errors unless every noise type has at least one file.
    pub fn require_all_types(&self) -> Result<()> {
        for label in NoiseLabel::NOISE_TYPES {
            if self.get(label).is_empty() {
                return Err(Error::EmptyNoiseSet(label.to_string()));
            }
        }
        Ok(())
    }
}

/// Per-type file lists of a train and a test split.
pub type NoiseSplits<T> = (BTreeMap<NoiseLabel, Vec<T>>, BTreeMap<NoiseLabel, Vec<T>>);

/// Splits each type's files into disjoint train and test subsets.
pub fn partition_noise_set<T: Clone>(
    files: &BTreeMap<NoiseLabel, Vec<T>>,
    train_count: usize,
    test_count: usize,
    seed: u64,
) -> Result<NoiseSplits<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = BTreeMap::new();
    let mut test = BTreeMap::new();
    for (&label, items) in files {
        let need = train_count + test_count;
        if items.len() < need {
            return Err(Error::InsufficientNoise {
                label: label.to_string(),
                have: items.len(),
                need,
            });
        }
        let order = synth::shuffled(items, &mut rng);
        train.insert(label, order[..train_count].to_vec());
        test.insert(label, order[train_count..need].to_vec());
    }
    Ok((train, test))
}

/// Independent per-entry seed derived from the master seed and the entry's
/// position, so entries can be built in any order.
pub fn entry_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.gen()
}

/// Every utterance mixed with every noise type at every SNR, in
/// (utterance, type, SNR) order. Each entry draws its own noise file and
/// offset.
pub fn mix_test_grid(
    clean: &[Utterance],
    test_noise: &NoiseSet,
    snrs: &[f64],
    seed: u64,
) -> Result<Vec<ConditionedUtterance>> {
    if snrs.is_empty() {
        return Err(Error::MissingCells("empty SNR list".into()));
    }
    if !clean.is_empty() {
        test_noise.require_all_types()?;
    }
    let jobs: Vec<(usize, NoiseLabel, f64)> = (0..clean.len())
        .flat_map(|u| NoiseLabel::NOISE_TYPES.into_iter().flat_map(move |l| snrs.iter().map(move |&s| (u, l, s))))
        .collect();
    jobs.par_iter()
        .enumerate()
        .map(|(i, &(u, label, snr))| {
            let utt = &clean[u];
            let id = format!("{}__{}__{}dB", utt.id, label, snr);
            let mut rng = ChaCha8Rng::seed_from_u64(entry_seed(seed, i as u64));
            let files = test_noise.get(label);
            let noise = &files[rng.gen_range(0..files.len())];
            let (audio, recipe) =
                mix_at_snr(&utt.audio, noise, label, snr, rng.gen()).map_err(|e| e.for_utterance(&id))?;
            Ok(ConditionedUtterance {
                id,
                audio,
                transcript: utt.transcript.clone(),
                label,
                snr_db: Some(snr),
                recipe: Some(recipe),
            })
        })
        .collect()
}

/// Builds the noisy test grid on disk: float WAVs under `out_dir/wav`, the
/// manifest `test_manifest.csv` and the recipes `mix_recipes.csv`.
pub fn build_noisy_test_set(
    clean: &[Utterance],
    test_noise: &NoiseSet,
    snrs: &[f64],
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    let grid = mix_test_grid(clean, test_noise, snrs, seed)?;
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir)?;
    grid.par_iter().try_for_each(|u| {
        write_wav_f32(wav_dir.join(format!("{}.wav", u.id)), &u.audio).map_err(|e| e.for_utterance(&u.id))
    })?;
    let entries: Vec<ManifestEntry> = grid
        .iter()
        .map(|u| ManifestEntry {
            utterance_id: u.id.clone(),
            audio_path: Path::new("wav").join(format!("{}.wav", u.id)),
            transcript: u.transcript.clone(),
            noise_label: u.label,
            snr_db: u.snr_db,
        })
        .collect();
    save_manifest(&entries, out_dir.join("test_manifest.csv"))?;
    let recipes: Vec<(String, MixRecipe)> = grid
        .iter()
        .filter_map(|u| u.recipe.clone().map(|r| (u.id.clone(), r)))
        .collect();
    save_recipes(&recipes, out_dir.join("mix_recipes.csv"))?;
    Ok(entries)
}

/// Writes clean utterances as 16-bit WAVs under `dir/wav` plus a manifest.
pub fn write_corpus(utts: &[Utterance], dir: &Path, manifest_name: &str) -> Result<Vec<ManifestEntry>> {
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir)?;
    let entries: Vec<ManifestEntry> = utts
        .iter()
        .map(|u| ManifestEntry::clean(&u.id, Path::new("wav").join(format!("{}.wav", u.id)), &u.transcript))
        .collect();
    utts.par_iter()
        .try_for_each(|u| write_wav_pcm16(wav_dir.join(format!("{}.wav", u.id)), &u.audio))?;
    save_manifest(&entries, dir.join(manifest_name))?;
    Ok(entries)
}

/// Loads every utterance a manifest lists, with its condition.
pub fn load_utterances(manifest_path: &Path) -> Result<Vec<ConditionedUtterance>> {
    load_manifest(manifest_path)?
        .into_iter()
        .map(|e| {
            let audio = read_wav(resolve_path(manifest_path, &e.audio_path))
                .map_err(|err| err.for_utterance(&e.utterance_id))?;
            Ok(ConditionedUtterance {
                id: e.utterance_id,
                audio,
                transcript: e.transcript,
                label: e.noise_label,
                snr_db: e.snr_db,
                recipe: None,
            })
        })
        .collect()
}

/// Loads one split of a noise manifest.
pub fn load_noise_set(manifest_path: &Path, split: NoiseSplit) -> Result<NoiseSet> {
    let mut files: BTreeMap<NoiseLabel, Vec<AudioBuffer>> = BTreeMap::new();
    for e in load_noise_manifest(manifest_path)? {
        if e.split == split {
            let audio =
                read_wav(resolve_path(manifest_path, &e.audio_path)).map_err(|err| err.for_utterance(&e.noise_id))?;
            files.entry(e.noise_label).or_default().push(audio);
        }
    }
    Ok(NoiseSet::new(files))
}

/// Writes noise files as float WAVs under `dir/noise` and returns their
/// manifest rows.
pub fn write_noise_files(
    files: &BTreeMap<NoiseLabel, Vec<AudioBuffer>>,
    split: NoiseSplit,
    dir: &Path,
) -> Result<Vec<NoiseEntry>> {
    let noise_dir = dir.join("noise");
    std::fs::create_dir_all(&noise_dir)?;
    let mut rows = Vec::new();
    for (label, list) in files {
        for (i, audio) in list.iter().enumerate() {
            let id = format!("{}_{}_{i:02}", label, split.as_str());
            let rel = Path::new("noise").join(format!("{id}.wav"));
            write_wav_f32(dir.join(&rel), audio)?;
            rows.push(NoiseEntry {
                noise_id: id,
                audio_path: rel,
                noise_label: *label,
                split,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{measured_snr, noise_segment};

    fn tiny_noise(per_type: usize) -> NoiseSet {
        NoiseSet::new(synth_noise_files(per_type, 0.3, 1).unwrap())
    }

    #[test]
    fn partition_sizes_and_disjointness() {
        let files: BTreeMap<NoiseLabel, Vec<usize>> =
            NoiseLabel::NOISE_TYPES.iter().map(|&l| (l, (0..18).collect())).collect();
        let (train, test) = partition_noise_set(&files, 10, 8, 4).unwrap();
        for l in NoiseLabel::NOISE_TYPES {
            assert_eq!(train[&l].len(), 10);
            assert_eq!(test[&l].len(), 8);
            assert!(train[&l].iter().all(|x| !test[&l].contains(x)));
        }
        assert_eq!(partition_noise_set(&files, 10, 8, 4).unwrap(), (train, test));
    }

    #[test]
    fn partition_names_the_short_type() {
        let mut files: BTreeMap<NoiseLabel, Vec<usize>> =
            NoiseLabel::NOISE_TYPES.iter().map(|&l| (l, (0..18).collect())).collect();
        files.insert(NoiseLabel::Cafe, (0..5).collect());
        let err = partition_noise_set(&files, 10, 8, 0).unwrap_err();
        assert!(err.to_string().contains("Cafe"), "{err}");
    }

    #[test]
    fn grid_cardinality_and_snr() {
        let spec = SynthSpec::default();
        let utts = synth_corpus(&spec, 2).unwrap();
        let noise = tiny_noise(2);
        let snrs = [0.0, 5.0, 10.0, 15.0, 20.0];
        let grid = mix_test_grid(&utts, &noise, &snrs, 9).unwrap();
        assert_eq!(grid.len(), 2 * 7 * 5);
        for g in &grid {
            let clean = &utts.iter().find(|u| g.id.starts_with(&u.id)).unwrap().audio;
            let r = g.recipe.as_ref().unwrap();
            let comp = AudioBuffer::new(
                g.audio.samples.iter().zip(&clean.samples).map(|(m, c)| m - c).collect(),
                clean.sample_rate_hz,
            );
            let snr = measured_snr(clean, &comp).unwrap();
            assert!((snr - g.snr_db.unwrap()).abs() < 1e-6);
            assert_eq!(r.noise_label, g.label);
        }
        assert_eq!(grid, mix_test_grid(&utts, &noise, &snrs, 9).unwrap());

        let one = mix_test_grid(&utts[..1], &noise, &snrs, 9).unwrap();
        assert_eq!(one.iter().filter(|g| g.label == NoiseLabel::Car).count(), 5);
        assert!(mix_test_grid(&[], &NoiseSet::default(), &snrs, 9).unwrap().is_empty());
    }

    #[test]
    fn grid_on_disk_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let utts = synth_corpus(&SynthSpec::default(), 1).unwrap();
        let noise = tiny_noise(1);
        let entries = build_noisy_test_set(&utts, &noise, &[0.0, 10.0], 2, dir.path()).unwrap();
        assert_eq!(entries.len(), 14);
        let loaded = load_utterances(&dir.path().join("test_manifest.csv")).unwrap();
        let recipes = load_recipes(dir.path().join("mix_recipes.csv")).unwrap();
        assert_eq!(recipes.len(), 14);
        for (u, (id, r)) in loaded.iter().zip(&recipes) {
            assert_eq!(&u.id, id);
            let src = &noise.get(r.noise_label)[0];
            let seg = noise_segment(&src.samples, r.noise_offset, utts[0].audio.len());
            let comp: Vec<f64> = u.audio.samples.iter().zip(&utts[0].audio.samples).map(|(m, c)| m - c).collect();
            // Float-32 storage bounds the reconstruction error.
            for (c, s) in comp.iter().zip(&seg) {
                assert!((c - r.gain * s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn corpus_and_noise_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let utts = synth_corpus(&SynthSpec::default(), 3).unwrap();
        write_corpus(&utts, dir.path(), "train.csv").unwrap();
        let back = load_utterances(&dir.path().join("train.csv")).unwrap();
        for (a, b) in utts.iter().zip(&back) {
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(b.label, NoiseLabel::Clean);
            let worst = a.audio.samples.iter().zip(&b.audio.samples).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(worst <= 1.0 / 32768.0);
        }

        let files = synth_noise_files(2, 0.2, 7).unwrap();
        let rows = write_noise_files(&files, NoiseSplit::Test, dir.path()).unwrap();
        save_noise_manifest(&rows, dir.path().join("noise.csv")).unwrap();
        let set = load_noise_set(&dir.path().join("noise.csv"), NoiseSplit::Test).unwrap();
        set.require_all_types().unwrap();
        assert_eq!(set.get(NoiseLabel::Metro).len(), 2);
        assert!(load_noise_set(&dir.path().join("noise.csv"), NoiseSplit::Train).unwrap().require_all_types().is_err());
    }
}
