use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamGroup, ParamTag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    VanillaDat,
    SoftFreezeDat,
    Mtl,
    Avt,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] = [TrainMode::VanillaDat, TrainMode::SoftFreezeDat, TrainMode::Mtl, TrainMode::Avt];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::VanillaDat => "VanillaDAT",
            TrainMode::SoftFreezeDat => "SoftFreezeDAT",
            TrainMode::Mtl => "MTL",
            TrainMode::Avt => "AvT",
        }
    }

    /// Whether the noise classifier is trained alongside recognition.
    pub fn uses_noise_head(self) -> bool {
        matches!(self, TrainMode::Mtl | TrainMode::Avt)
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let valid: Vec<&str> = TrainMode::ALL.iter().map(|m| m.as_str()).collect();
                Error::InvalidTrainConfig(format!("unknown mode {s:?}; valid modes are {}", valid.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub base_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub aug_prob: f64,
    pub train_snr_set: Vec<f64>,
    /// CTC weight in the hybrid loss.
    pub lambda: f64,
    /// Initial weight on the noise term.
    pub eta0: f64,
    /// Per-epoch divisor of eta.
    pub anneal_factor: f64,
    pub soft_freeze_factor: f64,
    pub lambda_f: f64,
    pub lambda_r: f64,
    pub lambda_n: f64,
    /// Gradient reversal coefficient under AvT.
    pub grl_coef: f64,
    pub momentum: f64,
    /// Global L2 norm bound on the batch gradient.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: TrainMode) -> Self {
        TrainConfig {
            mode,
            base_lr: if mode == TrainMode::Avt { 8e-4 } else { 1e-4 },
            epochs: 25,
            batch_size: 32,
            aug_prob: 0.5,
            train_snr_set: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
            lambda: 0.7,
            eta0: 10.0,
            anneal_factor: 1.05,
            soft_freeze_factor: 0.5,
            lambda_f: 0.8,
            lambda_r: 0.05,
            lambda_n: 1.0,
            grl_coef: 1.0,
            momentum: 0.9,
            clip_norm: Some(400.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTrainConfig(m));
        if !(0.0..=1.0).contains(&self.aug_prob) {
            return bad(format!("aug_prob {} outside [0, 1]", self.aug_prob));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        let positive = [
            ("base_lr", self.base_lr),
            ("eta0", self.eta0),
            ("anneal_factor", self.anneal_factor),
            ("soft_freeze_factor", self.soft_freeze_factor),
            ("lambda_f", self.lambda_f),
            ("lambda_r", self.lambda_r),
            ("lambda_n", self.lambda_n),
            ("grl_coef", self.grl_coef),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if self.aug_prob > 0.0 && self.train_snr_set.is_empty() {
            return bad("augmentation needs a non-empty train_snr_set".into());
        }
        if self.train_snr_set.iter().any(|s| !s.is_finite()) {
            return bad("train_snr_set must be finite".into());
        }
        Ok(())
    }
}

/// Hybrid objective `lambda * l_ctc + eta * (1 - lambda) * l_ce`. The noise
/// weight is formed as `eta - eta * lambda`, which is the same quantity but
/// avoids rounding `1 - lambda` first.
pub fn hybrid_loss(l_ctc: f64, l_ce: f64, lambda: f64, eta: f64) -> f64 {
    lambda * l_ctc + noise_weight(lambda, eta) * l_ce
}

pub(crate) fn noise_weight(lambda: f64, eta: f64) -> f64 {
    eta - eta * lambda
}

/// One epoch of eta decay.
pub fn anneal_eta(eta: f64, anneal_factor: f64) -> f64 {
    eta / anneal_factor
}

/// Learning rate for a parameter under the run's mode.
pub fn effective_lr(tag: &ParamTag, cfg: &TrainConfig) -> f64 {
    match cfg.mode {
        TrainMode::VanillaDat | TrainMode::Mtl => cfg.base_lr,
        TrainMode::SoftFreezeDat if tag.soft_freeze => cfg.base_lr * cfg.soft_freeze_factor,
        TrainMode::SoftFreezeDat => cfg.base_lr,
        TrainMode::Avt => {
            cfg.base_lr
                * match tag.group {
                    ParamGroup::FeatureExtractor => cfg.lambda_f,
                    ParamGroup::Recognition => cfg.lambda_r,
                    ParamGroup::NoiseClassifier => cfg.lambda_n,
                }
        }
    }
}

/// Per-component losses. `l_ce` is absent when the noise head is unused.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_ctc: f64,
    pub l_ce: Option<f64>,
    pub l_hybrid: f64,
}
