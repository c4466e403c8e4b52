use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The seven noise types plus clean speech, in classifier-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseLabel {
    Babble,
    AirportStation,
    Car,
    Metro,
    Cafe,
    Traffic,
    AcVacuum,
    Clean,
}

impl NoiseLabel {
    pub const ALL: [NoiseLabel; 8] = [
        NoiseLabel::Babble,
        NoiseLabel::AirportStation,
        NoiseLabel::Car,
        NoiseLabel::Metro,
        NoiseLabel::Cafe,
        NoiseLabel::Traffic,
        NoiseLabel::AcVacuum,
        NoiseLabel::Clean,
    ];

    /// Labels that can be mixed into speech.
    pub const NOISE_TYPES: [NoiseLabel; 7] = [
        NoiseLabel::Babble,
        NoiseLabel::AirportStation,
        NoiseLabel::Car,
        NoiseLabel::Metro,
        NoiseLabel::Cafe,
        NoiseLabel::Traffic,
        NoiseLabel::AcVacuum,
    ];

    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<NoiseLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn is_noise(self) -> bool {
        self != NoiseLabel::Clean
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseLabel::Babble => "Babble",
            NoiseLabel::AirportStation => "AirportStation",
            NoiseLabel::Car => "Car",
            NoiseLabel::Metro => "Metro",
            NoiseLabel::Cafe => "Cafe",
            NoiseLabel::Traffic => "Traffic",
            NoiseLabel::AcVacuum => "AcVacuum",
            NoiseLabel::Clean => "Clean",
        }
    }
}

impl fmt::Display for NoiseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        NoiseLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::UnknownNoiseLabel(s.to_string()))
    }
}
