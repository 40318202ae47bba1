//! One configuration file for the whole pipeline, TOML with per-section
//! nesting. Defaults mirror the reference hyperparameters, so a bare train
//! run uses that configuration at whatever scale the model section says.
//! Overrides are dotted `key=value` pairs checked against the schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SamplingParams;
use crate::error::{Error, Result};
use crate::geometry::ForwardAxis;
use crate::metrics::MetricConfig;
use crate::model::ModelConfig;
use crate::scenario::TaggerConfig;
use crate::sim::{SimAgent, SimConfig};
use crate::synth::SynthSpec;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    /// Worker cap for parallel trajectory processing.
    pub workers: usize,
    /// Pose-log forward-axis convention for the ingestion profile.
    pub forward_axis: ForwardAxis,
    /// Keep every Nth pose at ingestion (frame-rate reduction; 1 = all).
    pub pose_subsample: usize,
    pub sampling: SamplingParams,
    pub tagger: TaggerConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub metrics: MetricConfig,
    pub sim: SimConfig,
    pub agent: SimAgent,
    pub synth: SynthSpec,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            seed: 0,
            workers: 0,
            forward_axis: ForwardAxis::default(),
            pose_subsample: 1,
            sampling: SamplingParams::default(),
            tagger: TaggerConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            metrics: MetricConfig::default(),
            sim: SimConfig::default(),
            agent: SimAgent::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl AppConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        Ok(())
    }

    /// Load a TOML config file, apply dotted overrides, and validate.
    /// Unknown keys are rejected at both stages.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<AppConfig> {
        let mut value: toml::Value = match path {
            Some(p) => {
                let body = std::fs::read_to_string(p)
                    .map_err(|e| Error::io(p.display().to_string(), e))?;
                body.parse::<toml::Value>()
                    .map_err(|e| Error::parse(p.display().to_string(), 0, e.to_string()))?
            }
            None => toml::Value::Table(Default::default()),
        };
        for raw in overrides {
            apply_override(&mut value, raw)?;
        }
        // Layer the file/overrides on top of the defaults, then decode
        // strictly so unknown keys and type mismatches are rejected.
        let defaults = toml::Value::try_from(AppConfig::default())
            .map_err(|e| Error::Config(format!("encode defaults: {e}")))?;
        let merged = merge(defaults, value);
        let cfg: AppConfig = merged
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("encode config: {e}")))
    }
}

fn merge(base: toml::Value, over: toml::Value) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(existing) => merge(existing, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, over) => over,
    }
}

/// Apply one `a.b.c=value` override. The path must already exist in the
/// schema (checked against the defaults) and the value is parsed as TOML.
fn apply_override(root: &mut toml::Value, raw: &str) -> Result<()> {
    let (path, value_str) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not key=value")))?;
    let path = path.trim();
    let value_str = value_str.trim();
    if path.is_empty() {
        return Err(Error::Config(format!("override `{raw}` has an empty key")));
    }

    // Verify the dotted path exists in the schema.
    let defaults = toml::Value::try_from(AppConfig::default())
        .map_err(|e| Error::Config(format!("encode defaults: {e}")))?;
    let mut probe = &defaults;
    for seg in path.split('.') {
        probe = probe
            .get(seg)
            .ok_or_else(|| Error::Config(format!("unknown config key `{path}`")))?;
    }

    // Parse the value as TOML; bare words become strings.
    let parsed: toml::Value = match format!("v = {value_str}").parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) => t.remove("v").expect("just inserted"),
        _ => toml::Value::String(value_str.to_string()),
    };

    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for seg in &segments[..segments.len() - 1] {
        if !cursor.is_table() {
            return Err(Error::Config(format!("config key `{path}` crosses a non-table")));
        }
        let table = cursor.as_table_mut().expect("checked");
        cursor = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let last = segments.last().expect("non-empty path");
    cursor
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("config key `{path}` crosses a non-table")))?
        .insert(last.to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_reference_hyperparameters() {
        let cfg = AppConfig::default();
        assert_eq!(cfg.model.token_dim, 768);
        assert_eq!(cfg.model.num_layers, 16);
        assert_eq!(cfg.model.num_heads, 8);
        assert_eq!(cfg.model.context, 5);
        assert_eq!(cfg.model.horizon, 5);
        assert_eq!(cfg.model.fourier_freqs, 6);
        assert_eq!(cfg.training.epochs, 10);
        assert_eq!(cfg.training.batch_size, 32);
        assert_eq!(cfg.training.learning_rate, 2e-4);
        assert_eq!(cfg.training.fine_tune_lr, 5e-5);
        assert_eq!(cfg.training.loss_weights.l1, 1.0);
        assert_eq!(cfg.training.loss_weights.orientation, 5.0);
        assert_eq!(cfg.training.loss_weights.arrival, 1.0);
        assert_eq!(cfg.training.loss_weights.feature, 0.1);
    }

    #[test]
    fn load_without_file_gives_defaults() {
        let cfg = AppConfig::load(None, &[]).unwrap();
        assert_eq!(cfg, AppConfig::default());
    }

    #[test]
    fn file_values_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "seed = 9\n[training]\nepochs = 3\n").unwrap();
        let cfg = AppConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.batch_size, 32, "untouched fields keep defaults");
    }

    #[test]
    fn overrides_apply_and_typecheck() {
        let cfg = AppConfig::load(
            None,
            &[
                "training.learning_rate=0.001".to_string(),
                "model.num_layers=4".to_string(),
                "tagger.person_label=pedestrian".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.training.learning_rate, 1e-3);
        assert_eq!(cfg.model.num_layers, 4);
        assert_eq!(cfg.tagger.person_label, "pedestrian");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            AppConfig::load(None, &["training.bogus_key=1".to_string()]),
            Err(Error::Config(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "[training]\nnot_a_field = 1\n").unwrap();
        assert!(matches!(AppConfig::load(Some(&path), &[]), Err(Error::Config(_))));
    }

    #[test]
    fn type_mismatch_rejected() {
        assert!(matches!(
            AppConfig::load(None, &["training.epochs=fast".to_string()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = AppConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, &text).unwrap();
        let back = AppConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(back, cfg);
    }
}
