//! Run configuration: every field defaulted, read from `key = value` text
//! with dotted keys (`train.ae_epochs = 40`) or from a run manifest.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffusion::{DenoiserConfig, ScheduleKind};
use crate::egnn::EgnnConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::latent::LatentConfig;
use crate::optim::AdamWConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub schedule: ScheduleKind,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 100,
            schedule: ScheduleKind::Polynomial,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub classifier_epochs: usize,
    pub ae_epochs: usize,
    pub ldm_epochs: usize,
    pub batch_size: usize,
    /// Multiplier of the warm-up/inverse-square-root schedule.
    pub base_lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            classifier_epochs: 30,
            ae_epochs: 20,
            ldm_epochs: 200,
            batch_size: 8,
            base_lr: 1.0,
            warmup: 3000,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 0.0,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub samples_per_spectrum: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            samples_per_spectrum: 50,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub latent: LatentConfig,
    pub denoiser: DenoiserConfig,
    pub diffusion: DiffusionConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
}

impl RunConfig {
    /// Defaults overridden by `key = value` lines; `#` starts a comment.
    /// Values are read as JSON when they parse as such, else as strings.
    pub fn parse(text: &str) -> Result<Self> {
        let mut root = serde_json::to_value(RunConfig::default())?;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: "expected `key = value`".into(),
            })?;
            let value = value.trim();
            let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
            set_path(&mut root, key.trim(), value).map_err(|msg| Error::Parse { line: n + 1, msg })?;
        }
        serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))
    }

    /// Flat `key = value` rendering that [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let v = serde_json::to_value(self).expect("config serialises");
        flatten("", &v, &mut out);
        out
    }

    /// Accepts either config text or a run manifest (JSON with a `config`
    /// object).
    pub fn from_text_or_manifest(text: &str) -> Result<Self> {
        if let Ok(Value::Object(m)) = serde_json::from_str::<Value>(text) {
            let c = m
                .get("config")
                .ok_or_else(|| Error::Config("manifest has no `config` entry".into()))?;
            return serde_json::from_value(c.clone()).map_err(|e| Error::Config(e.to_string()));
        }
        RunConfig::parse(text)
    }

    /// Small preset for ten-molecule corpora; `configs/toy.conf` spells out
    /// the same values.
    pub fn toy() -> Self {
        RunConfig {
            encoder: EncoderConfig {
                dim: 32,
                heads: 4,
                layers: 2,
                ff: 64,
                ..EncoderConfig::default()
            },
            latent: LatentConfig {
                encoder: EgnnConfig { layers: 1, hidden: 32 },
                decoder: EgnnConfig { layers: 2, hidden: 32 },
                ..LatentConfig::default()
            },
            train: TrainConfig {
                classifier_epochs: 200,
                ae_epochs: 200,
                ldm_epochs: 2000,
                batch_size: 5,
                base_lr: 0.25,
                warmup: 100,
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        }
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> std::result::Result<(), String> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| format!("`{}` is not a section", parts[..i].join(".")))?;
        if !obj.contains_key(*p) {
            return Err(format!("unknown key `{key}`"));
        }
        if i + 1 == parts.len() {
            obj.insert((*p).to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*p).expect("checked");
    }
    Err(format!("empty key `{key}`"))
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, x, out);
            }
        }
        other => out.push_str(&format!("{prefix} = {other}\n")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse("# comment\nseed = 7\ntrain.ae_epochs = 3 # trailing\nlatent.decoder.layers = 9\n")
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.ae_epochs, 3);
        assert_eq!(c.latent.decoder.layers, 9);
        assert_eq!(c.sample.samples_per_spectrum, 50);
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(matches!(
            RunConfig::parse("nope = 1"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(RunConfig::parse("\nseed"), Err(Error::Parse { line: 2, .. })));
        assert!(RunConfig::parse("seed = \"x\"").is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = RunConfig::toy();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        let manifest = serde_json::json!({ "stage": "ae", "config": c }).to_string();
        assert_eq!(RunConfig::from_text_or_manifest(&manifest).unwrap(), c);
    }
}
