use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty audio buffer")]
    EmptyBuffer,

    #[error("{0} signal is silent")]
    SilentSignal(&'static str),

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },

    #[error("length mismatch: {left} vs {right} samples")]
    LengthMismatch { left: usize, right: usize },

    #[error("buffer of {len} samples is shorter than one {window}-sample window")]
    BufferTooShort { len: usize, window: usize },

    #[error("invalid spectrogram config: {0}")]
    InvalidSpectrogram(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("input of {frames} frames is too short for the conv stack (needs at least {required})")]
    InputTooShort { frames: usize, required: usize },

    #[error("CTC target of length {target_len} needs at least {required} frames, got {frames}")]
    InfeasibleTarget {
        target_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("CTC target is empty")]
    EmptyTarget,

    #[error("invalid symbol index {index} (vocab size {vocab}, blank {blank})")]
    InvalidSymbol {
        index: usize,
        vocab: usize,
        blank: usize,
    },

    #[error("unknown symbol {0:?} in transcript")]
    UnknownSymbol(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("brute-force CTC limited to T <= 6 and V <= 4, got T={frames}, V={vocab}")]
    EnumerationBound { frames: usize, vocab: usize },

    #[error("target is unreachable: probability is zero")]
    ZeroProbability,

    #[error("empty reference transcript")]
    EmptyReference,

    #[error("missing results cells: {0}")]
    MissingCells(String),

    #[error("invalid model config: {0}")]
    InvalidModelConfig(String),

    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),

    #[error("checkpoint does not match: {0}")]
    CheckpointMismatch(String),

    #[error("gradient contains NaN or infinity")]
    NonFiniteGradient,

    #[error("noise set is empty for {0}")]
    EmptyNoiseSet(String),

    #[error("not enough noise files for {label}: have {have}, need {need}")]
    InsufficientNoise {
        label: String,
        have: usize,
        need: usize,
    },

    #[error("unknown noise label {0:?}")]
    UnknownNoiseLabel(String),

    #[error("{path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("utterance {id}: {source}")]
    Utterance {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported WAV format: {0}")]
    UnsupportedWav(String),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach the offending utterance id.
    pub fn for_utterance(self, id: impl Into<String>) -> Error {
        Error::Utterance {
            id: id.into(),
            source: Box::new(self),
        }
    }
}
