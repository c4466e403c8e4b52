//! Word error rate and the noise-type × SNR results grid.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;

use crate::audio::{extract_features, AudioBuffer};
use crate::corpus::ConditionedUtterance;
use crate::ctc::greedy_decode;
use crate::error::{Error, Result};
use crate::labels::NoiseLabel;
use crate::model::{infer, ModelParams};

/// Minimum number of substitutions, insertions and deletions turning `reference`
/// into `hypothesis`.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Lower-cased whitespace tokens with surrounding punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Edit count and reference length for one utterance.
pub fn word_errors(reference: &str, hypothesis: &str) -> Result<(usize, usize)> {
    let r = tokenize(reference);
    if r.is_empty() {
        return Err(Error::EmptyReference);
    }
    let h = tokenize(hypothesis);
    Ok((edit_distance(&r, &h), r.len()))
}

/// Word error rate in percent. Can exceed 100 when insertions dominate.
pub fn wer(reference: &str, hypothesis: &str) -> Result<f64> {
    let (edits, words) = word_errors(reference, hypothesis)?;
    Ok(100.0 * edits as f64 / words as f64)
}

/// One scored utterance, tagged with its test condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredUtterance {
    pub label: NoiseLabel,
    /// `None` for clean speech.
    pub snr_db: Option<f64>,
    pub edits: usize,
    pub ref_words: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub label: NoiseLabel,
    pub snr_db: f64,
    pub wer: f64,
}

/// Corpus-level WER per (noise type, SNR) plus clean speech, for one method.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultsGrid {
    pub method: String,
    pub cells: Vec<GridCell>,
    pub clean_wer: f64,
}

/// SNRs are compared at millidecibel resolution.
fn snr_key(snr: f64) -> i64 {
    (snr * 1000.0).round() as i64
}

impl ResultsGrid {
    /// Pools edits and reference words per cell. Every noise type × `snrs`
    /// cell and the clean cell must be covered.
    pub fn from_scores(method: &str, scores: &[ScoredUtterance], snrs: &[f64]) -> Result<Self> {
        let mut pooled: BTreeMap<(NoiseLabel, i64), (usize, usize)> = BTreeMap::new();
        for s in scores {
            let key = match s.snr_db {
                Some(snr) if s.label.is_noise() => (s.label, snr_key(snr)),
                None if !s.label.is_noise() => (NoiseLabel::Clean, 0),
                _ => {
                    return Err(Error::MissingCells(format!(
                        "inconsistent condition {} / {:?}",
                        s.label, s.snr_db
                    )))
                }
            };
            let e = pooled.entry(key).or_default();
            e.0 += s.edits;
            e.1 += s.ref_words;
        }

        let wanted: BTreeSet<i64> = snrs.iter().map(|&s| snr_key(s)).collect();
        let mut missing = Vec::new();
        let mut cells = Vec::new();
        for label in NoiseLabel::NOISE_TYPES {
            for &snr in &wanted {
                match pooled.get(&(label, snr)) {
                    Some(&(edits, words)) if words > 0 => cells.push(GridCell {
                        label,
                        snr_db: snr as f64 / 1000.0,
                        wer: 100.0 * edits as f64 / words as f64,
                    }),
                    _ => missing.push(format!("({label}, {})", snr as f64 / 1000.0)),
                }
            }
        }
        let clean_wer = match pooled.get(&(NoiseLabel::Clean, 0)) {
            Some(&(edits, words)) if words > 0 => 100.0 * edits as f64 / words as f64,
            _ => {
                missing.push("(Clean)".to_string());
                0.0
            }
        };
        if !missing.is_empty() {
            return Err(Error::MissingCells(missing.join(", ")));
        }
        Ok(ResultsGrid {
            method: method.to_string(),
            cells,
            clean_wer,
        })
    }

    pub fn cell(&self, label: NoiseLabel, snr_db: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.label == label && snr_key(c.snr_db) == snr_key(snr_db))
            .map(|c| c.wer)
    }

    /// Pooled mean over all noise types at one SNR.
    pub fn mean_at_snr(&self, snr_db: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| snr_key(c.snr_db) == snr_key(snr_db))
            .map(|c| c.wer)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Greedy transcript of one utterance.
pub fn transcribe(params: &ModelParams, audio: &AudioBuffer) -> Result<String> {
    let features = extract_features(audio, &params.config.features)?;
    let (log_probs, _) = infer(params, &features)?;
    Ok(greedy_decode(&log_probs, &params.config.vocab))
}

/// Decodes and scores every utterance, keeping its condition.
pub fn score_utterances(params: &ModelParams, utts: &[ConditionedUtterance]) -> Result<Vec<ScoredUtterance>> {
    utts.par_iter()
        .map(|u| {
            let hyp = transcribe(params, &u.audio).map_err(|e| e.for_utterance(&u.id))?;
            let (edits, ref_words) = word_errors(&u.transcript, &hyp).map_err(|e| e.for_utterance(&u.id))?;
            Ok(ScoredUtterance {
                label: u.label,
                snr_db: u.snr_db,
                edits,
                ref_words,
            })
        })
        .collect()
}

/// Greedy-decoding WER grid of a model over a conditioned test set.
pub fn evaluate_grid(
    method: &str,
    params: &ModelParams,
    utts: &[ConditionedUtterance],
    snrs: &[f64],
) -> Result<ResultsGrid> {
    ResultsGrid::from_scores(method, &score_utterances(params, utts)?, snrs)
}

pub const RESULTS_HEADER: &str = "method,noise_label,snr_db,wer";

/// Writes grids as `method,noise_label,snr_db,wer` rows; the clean row has an
/// empty SNR. WER is printed with one decimal.
pub fn write_results_csv<W: Write>(mut out: W, grids: &[ResultsGrid]) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for g in grids {
        for c in &g.cells {
            writeln!(out, "{},{},{},{:.1}", g.method, c.label, c.snr_db, c.wer)?;
        }
        writeln!(out, "{},{},,{:.1}", g.method, NoiseLabel::Clean, g.clean_wer)?;
    }
    Ok(())
}
