//! Run configuration: named profiles supplying every default, a TOML config
//! file merged over the profile, and `--set section.key=value` overrides
//! merged over both.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown profile `{0}` (expected desk, tiny, or paper)")]
    UnknownProfile(String),
    #[error("config io {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse: {0}")]
    Parse(String),
    #[error("bad --set override `{0}`: expected section.key=value")]
    BadOverride(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathsConfig {
    pub registry: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub train_sentences: usize,
    pub eval_sentences: usize,
    pub parallel_sentences: usize,
    pub split_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOptions {
    pub workers: usize,
    pub global_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub min_group_size: usize,
    pub exclude_outliers: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub target: Option<String>,
    pub classes: usize,
    pub examples_per_class: usize,
    pub n_low: usize,
    pub n_high: usize,
    pub seeds: Vec<u64>,
    pub task_seed: u64,
}

/// Complete configuration of one pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: String,
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepOptions,
    pub analysis: AnalysisOptions,
    pub probe: ProbeOptions,
}

impl RunConfig {
    /// The default desk-scale profile: small but meaningful models, minutes
    /// per sweep on one CPU.
    pub fn desk() -> RunConfig {
        RunConfig {
            profile: "desk".to_string(),
            paths: PathsConfig {
                registry: PathBuf::from("registry.csv"),
                out_dir: PathBuf::from("out"),
            },
            corpus: CorpusConfig {
                train_sentences: 2_000,
                eval_sentences: 200,
                parallel_sentences: 200,
                split_seed: 1,
            },
            tokenizer: TokenizerConfig { vocab_size: 2_048 },
            model: ModelConfig {
                n_layers: 2,
                d_model: 128,
                n_heads: 4,
                d_ffn: 512,
                max_len: 64,
                vocab_size: 2_048,
                seed: 1,
            },
            train: TrainConfig {
                total_steps: 600,
                warmup_steps: 150,
                peak_lr: 3e-4,
                batch_size: 16,
                mask_ratio: 0.15,
                adam_beta1: 0.9,
                adam_beta2: 0.999,
                adam_eps: 1e-8,
                weight_decay: 0.01,
                grad_clip_norm: Some(1.0),
                seed: 1,
            },
            sweep: SweepOptions {
                workers: 4,
                global_seed: 1,
            },
            analysis: AnalysisOptions {
                min_group_size: 3,
                exclude_outliers: true,
            },
            probe: ProbeOptions {
                target: None,
                classes: 3,
                examples_per_class: 200,
                n_low: 2,
                n_high: 2,
                seeds: vec![1, 2, 3, 4, 5],
                task_seed: 11,
            },
        }
    }

    /// Minutes-scale profile for tests and smoke runs.
    pub fn tiny() -> RunConfig {
        let mut config = RunConfig::desk();
        config.profile = "tiny".to_string();
        config.corpus = CorpusConfig {
            train_sentences: 300,
            eval_sentences: 48,
            parallel_sentences: 64,
            split_seed: 1,
        };
        config.tokenizer.vocab_size = 256;
        config.model = ModelConfig {
            n_layers: 2,
            d_model: 32,
            n_heads: 2,
            d_ffn: 64,
            max_len: 24,
            vocab_size: 256,
            seed: 1,
        };
        config.train = TrainConfig {
            total_steps: 160,
            warmup_steps: 40,
            peak_lr: 2e-3,
            batch_size: 8,
            mask_ratio: 0.15,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            grad_clip_norm: Some(1.0),
            seed: 1,
        };
        config.sweep.workers = 2;
        config
    }

    /// Optimization constants at their published reference values (10k steps,
    /// 2.5k warmup, peak 1e-5, 256-token sequences); data sizes stay at desk
    /// scale. Expect hours per sweep.
    pub fn paper() -> RunConfig {
        let mut config = RunConfig::desk();
        config.profile = "paper".to_string();
        config.tokenizer.vocab_size = 8_192;
        config.model.vocab_size = 8_192;
        config.model.max_len = 256;
        config.corpus.train_sentences = 20_000;
        config.corpus.eval_sentences = 1_000;
        config.train.total_steps = 10_000;
        config.train.warmup_steps = 2_500;
        config.train.peak_lr = 1e-5;
        config
    }

    pub fn by_profile(name: &str) -> Result<RunConfig, ConfigError> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "tiny" => Ok(RunConfig::tiny()),
            "paper" => Ok(RunConfig::paper()),
            other => Err(ConfigError::UnknownProfile(other.to_string())),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(base_map), serde_json::Value::Object(overlay_map)) => {
            for (key, value) in overlay_map {
                match base_map.get_mut(&key) {
                    Some(slot) => merge_json(slot, value),
                    None => {
                        base_map.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

fn parse_override(spec: &str) -> Result<(Vec<String>, serde_json::Value), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    let keys: Vec<String> = path.split('.').map(|s| s.trim().to_string()).collect();
    if keys.is_empty() || keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    // Numbers and booleans parse as themselves, anything else is a string.
    let value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    Ok((keys, value))
}

/// Resolve the effective config: profile defaults, then the optional TOML
/// file, then `--set` overrides.
pub fn load_config(
    profile: &str,
    config_path: Option<&std::path::Path>,
    overrides: &[String],
) -> Result<RunConfig, ConfigError> {
    let base = RunConfig::by_profile(profile)?;
    let mut merged = serde_json::to_value(&base).expect("config to json");

    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file_value: serde_json::Value =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge_json(&mut merged, file_value);
    }

    for spec in overrides {
        let (keys, value) = parse_override(spec)?;
        let mut slot = &mut merged;
        for key in &keys[..keys.len() - 1] {
            slot = slot
                .as_object_mut()
                .ok_or_else(|| ConfigError::BadOverride(spec.clone()))?
                .entry(key.clone())
                .or_insert_with(|| serde_json::Value::Object(Default::default()));
        }
        let last = keys.last().unwrap().clone();
        slot.as_object_mut()
            .ok_or_else(|| ConfigError::BadOverride(spec.clone()))?
            .insert(last, value);
    }

    serde_json::from_value(merged).map_err(|e| ConfigError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_resolve_and_validate() {
        for name in ["desk", "tiny", "paper"] {
            let config = RunConfig::by_profile(name).unwrap();
            assert_eq!(config.profile, name);
            config.model.validate().unwrap();
            config.train.validate().unwrap();
            assert_eq!(config.model.vocab_size, config.tokenizer.vocab_size);
        }
        assert!(matches!(
            RunConfig::by_profile("huge"),
            Err(ConfigError::UnknownProfile(_))
        ));
    }

    #[test]
    fn paper_profile_pins_reference_constants() {
        let config = RunConfig::paper();
        assert_eq!(config.train.total_steps, 10_000);
        assert_eq!(config.train.warmup_steps, 2_500);
        assert_eq!(config.train.peak_lr, 1e-5);
        assert_eq!(config.train.mask_ratio, 0.15);
        assert_eq!(config.model.max_len, 256);
        assert_eq!(config.model.n_layers, 2);
    }

    #[test]
    fn file_and_set_overrides_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[train]\ntotal_steps = 99\n[sweep]\nworkers = 7\n",
        )
        .unwrap();
        let config = load_config(
            "tiny",
            Some(&path),
            &["train.total_steps=55".to_string(), "paths.out_dir=\"/tmp/x\"".to_string()],
        )
        .unwrap();
        assert_eq!(config.sweep.workers, 7); // from file
        assert_eq!(config.train.total_steps, 55); // --set beats file
        assert_eq!(config.paths.out_dir, PathBuf::from("/tmp/x"));
        // Untouched fields keep profile defaults.
        assert_eq!(config.model.d_model, 32);
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        let config = RunConfig::desk();
        let text = config.to_toml_string();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("full.toml");
        std::fs::write(&path, &text).unwrap();
        let loaded = load_config("tiny", Some(&path), &[]).unwrap();
        // The full desk dump overrides every tiny field.
        assert_eq!(loaded.model.d_model, config.model.d_model);
        assert_eq!(loaded.train.total_steps, config.train.total_steps);
        assert_eq!(loaded.profile, "desk");
    }

    #[test]
    fn bad_overrides_are_rejected() {
        assert!(matches!(
            load_config("tiny", None, &["nonsense".to_string()]),
            Err(ConfigError::BadOverride(_))
        ));
        assert!(load_config("tiny", None, &["model.d_model=\"not a number\"".to_string()]).is_err());
    }
}
