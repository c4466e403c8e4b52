use std::path::{Path, PathBuf};

use crate::audio::MixRecipe;
use crate::error::{Error, Result};
use crate::labels::NoiseLabel;

pub const MANIFEST_HEADER: [&str; 5] = ["utterance_id", "audio_path", "transcript", "noise_label", "snr_db"];
pub const NOISE_MANIFEST_HEADER: [&str; 4] = ["noise_id", "audio_path", "noise_label", "split"];
pub const RECIPE_HEADER: [&str; 5] = ["utterance_id", "noise_label", "snr_db", "offset", "gain"];

/// One utterance row. Clean entries carry `NoiseLabel::Clean` and no SNR.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    /// As written; relative paths are relative to the manifest's directory.
    pub audio_path: PathBuf,
    pub transcript: String,
    pub noise_label: NoiseLabel,
    pub snr_db: Option<f64>,
}

impl ManifestEntry {
    pub fn clean(id: impl Into<String>, audio_path: impl Into<PathBuf>, transcript: impl Into<String>) -> Self {
        ManifestEntry {
            utterance_id: id.into(),
            audio_path: audio_path.into(),
            transcript: transcript.into(),
            noise_label: NoiseLabel::Clean,
            snr_db: None,
        }
    }
}

/// Resolves an entry's audio path against the manifest that lists it.
pub fn resolve_path(manifest: &Path, audio_path: &Path) -> PathBuf {
    if audio_path.is_absolute() {
        audio_path.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(audio_path)
    }
}

fn reader(path: &Path, header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header {}, found {}", header.join(","), found.join(",")),
        });
    }
    Ok(rdr)
}

fn parse_label(s: &str) -> std::result::Result<NoiseLabel, String> {
    if s.is_empty() {
        return Ok(NoiseLabel::Clean);
    }
    s.parse().map_err(|_| format!("unknown noise label {s:?}"))
}

fn parse_snr(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(format!("invalid snr_db {s:?}")),
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let mut rdr = reader(path, &MANIFEST_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fail = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if rec.len() != MANIFEST_HEADER.len() {
            return Err(fail(format!("expected {} fields, found {}", MANIFEST_HEADER.len(), rec.len())));
        }
        let noise_label = parse_label(&rec[3]).map_err(fail)?;
        let snr_db = parse_snr(&rec[4]).map_err(fail)?;
        if noise_label.is_noise() != snr_db.is_some() {
            return Err(fail("a noise label needs an SNR and Clean must have none".into()));
        }
        if rec[0].is_empty() {
            return Err(fail("empty utterance_id".into()));
        }
        out.push(ManifestEntry {
            utterance_id: rec[0].to_string(),
            audio_path: PathBuf::from(&rec[1]),
            transcript: rec[2].to_string(),
            noise_label,
            snr_db,
        });
    }
    Ok(out)
}

pub fn save_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for e in entries {
        let snr = e.snr_db.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([
            e.utterance_id.as_str(),
            &e.audio_path.to_string_lossy(),
            e.transcript.as_str(),
            e.noise_label.as_str(),
            &snr,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One noise file row in a noise manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseEntry {
    pub noise_id: String,
    pub audio_path: PathBuf,
    pub noise_label: NoiseLabel,
    pub split: NoiseSplit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseSplit {
    Train,
    Test,
}

impl NoiseSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseSplit::Train => "train",
            NoiseSplit::Test => "test",
        }
    }
}

pub fn load_noise_manifest(path: impl AsRef<Path>) -> Result<Vec<NoiseEntry>> {
    let path = path.as_ref();
    let mut rdr = reader(path, &NOISE_MANIFEST_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fail = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let noise_label = parse_label(&rec[2]).map_err(fail)?;
        if !noise_label.is_noise() {
            return Err(fail("Clean is not a noise source".into()));
        }
        let split = match &rec[3] {
            "train" => NoiseSplit::Train,
            "test" => NoiseSplit::Test,
            other => return Err(fail(format!("split must be train or test, found {other:?}"))),
        };
        out.push(NoiseEntry {
            noise_id: rec[0].to_string(),
            audio_path: PathBuf::from(&rec[1]),
            noise_label,
            split,
        });
    }
    Ok(out)
}

pub fn save_noise_manifest(entries: &[NoiseEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(NOISE_MANIFEST_HEADER)?;
    for e in entries {
        w.write_record([
            e.noise_id.as_str(),
            &e.audio_path.to_string_lossy(),
            e.noise_label.as_str(),
            e.split.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_recipes(rows: &[(String, MixRecipe)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RECIPE_HEADER)?;
    for (id, r) in rows {
        w.write_record([
            id.as_str(),
            r.noise_label.as_str(),
            &r.snr_db.to_string(),
            &r.noise_offset.to_string(),
            &r.gain.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_recipes(path: impl AsRef<Path>) -> Result<Vec<(String, MixRecipe)>> {
    let path = path.as_ref();
    let mut rdr = reader(path, &RECIPE_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fail = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let noise_label = parse_label(&rec[1]).map_err(fail)?;
        let snr_db = parse_snr(&rec[2]).map_err(fail)?.ok_or_else(|| fail("missing snr_db".into()))?;
        let noise_offset = rec[3].parse().map_err(|_| fail(format!("invalid offset {:?}", &rec[3])))?;
        let gain = rec[4].parse().map_err(|_| fail(format!("invalid gain {:?}", &rec[4])))?;
        out.push((
            rec[0].to_string(),
            MixRecipe {
                noise_label,
                snr_db,
                noise_offset,
                gain,
            },
        ));
    }
    Ok(out)
}
