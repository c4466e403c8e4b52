//! Flat dotted-key JSON run configuration. Command-line flags override
//! values from the file; keys nobody reads are rejected up front.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use noiseadapt_core::corpus::SynthSpec;
use noiseadapt_core::ctc::Vocab;
use noiseadapt_core::model::ModelConfig;
use noiseadapt_core::trainer::{TrainConfig, TrainMode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Keys outside the `train.`, `model.` and `synth.` struct namespaces.
const FIXED_KEYS: &[&str] = &[
    "seed",
    "threads",
    "out",
    "paths.corpus",
    "paths.noise",
    "paths.train",
    "paths.dev",
    "paths.test",
    "paths.clean",
    "paths.checkpoint",
    "paths.init",
    "paths.wav",
    "synth.n_train",
    "synth.n_dev",
    "synth.n_test",
    "synth.noise_per_type",
    "synth.noise_seconds",
    "synth.noise_train",
    "synth.noise_test",
    "mix.snrs",
    "eval.method",
    "eval.snrs",
    "gradcheck.seeds",
];

fn struct_fields<T: Serialize>(prefix: &str, value: &T) -> Vec<String> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m.keys().map(|k| format!("{prefix}.{k}")).collect(),
        _ => Vec::new(),
    }
}

/// Every accepted key.
pub fn known_keys() -> BTreeSet<String> {
    let mut keys: BTreeSet<String> = FIXED_KEYS.iter().map(|k| k.to_string()).collect();
    keys.extend(struct_fields("train", &TrainConfig::new(TrainMode::VanillaDat)));
    keys.extend(struct_fields("model", &ModelConfig::default()));
    keys.extend(struct_fields("synth", &SynthSpec::default()).into_iter().filter(|k| k != "synth.seed"));
    keys
}

/// Parses a `KEY=VALUE` override. The value is read as JSON when possible
/// and as a bare string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("expected KEY=VALUE, got {s:?}"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

impl RunConfig {
    /// File values first, then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: Vec<(String, Value)>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
            let parsed: Map<String, Value> =
                serde_json::from_str(&text).with_context(|| format!("malformed config {}", path.display()))?;
            for (k, v) in parsed {
                if v.is_object() {
                    bail!("malformed config {}: key {k:?} holds an object; use flat dotted keys", path.display());
                }
                values.insert(k, v);
            }
        }
        values.extend(overrides);
        let known = known_keys();
        let unknown: Vec<&str> = values.keys().filter(|k| !known.contains(*k)).map(String::as_str).collect();
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        Ok(RunConfig { values })
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .filter(|v| !v.is_null())
            .map(|v| serde_json::from_value(v.clone()).with_context(|| format!("bad value for {key}: {v}")))
            .transpose()
    }

    pub fn get_or<T: DeserializeOwned>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// A required path setting; `flag` names the flag that supplies it.
    pub fn path(&self, key: &str, flag: &str) -> Result<PathBuf> {
        self.get::<PathBuf>(key)?
            .ok_or_else(|| anyhow!("missing {flag} (config key {key})"))
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.path("out", "--out")
    }

    /// `base` with every `prefix.field` key applied on top.
    fn overlay<T: Serialize + DeserializeOwned>(&self, prefix: &str, base: &T, skip: &[&str]) -> Result<T> {
        let mut v = serde_json::to_value(base)?;
        let obj = v.as_object_mut().expect("config structs serialize to objects");
        let dotted = format!("{prefix}.");
        for (k, val) in &self.values {
            if let Some(field) = k.strip_prefix(&dotted) {
                if obj.contains_key(field) && !skip.contains(&field) {
                    obj.insert(field.to_string(), val.clone());
                }
            }
        }
        serde_json::from_value(v).with_context(|| format!("bad {prefix} settings"))
    }

    pub fn train_mode(&self) -> Result<TrainMode> {
        let raw: String = self
            .get("train.mode")?
            .ok_or_else(|| anyhow!("missing --mode (config key train.mode)"))?;
        Ok(raw.parse()?)
    }

    /// Training hyper-parameters: mode defaults, then `train.*` keys. The
    /// run seed is used unless `train.seed` is given.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mode = self.train_mode()?;
        let mut base = TrainConfig::new(mode);
        base.seed = self.seed()?;
        let cfg = self.overlay("train", &base, &["mode"])?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, vocab: Vocab) -> Result<ModelConfig> {
        let base = ModelConfig {
            vocab,
            ..ModelConfig::default()
        };
        let cfg: ModelConfig = self.overlay("model", &base, &[])?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth_spec(&self, seed: u64) -> Result<SynthSpec> {
        let spec: SynthSpec = self.overlay("synth", &SynthSpec { seed, ..SynthSpec::default() }, &["seed"])?;
        spec.validate()?;
        Ok(spec)
    }

    /// All settings as pretty, key-sorted JSON.
    pub fn to_json(&self) -> String {
        let m: Map<String, Value> = self.values.clone().into_iter().collect();
        serde_json::to_string_pretty(&Value::Object(m)).expect("json values serialize")
    }
}
