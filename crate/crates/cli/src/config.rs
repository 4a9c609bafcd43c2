use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use lanesight::features::FeatureConfig;
use lanesight::labeler::LabelConfig;
use lanesight::metrics::TtmReference;
use lanesight::models::ModelConfig;
use lanesight::explain::SceneView;
use lanesight::training::TrainConfig;
use lanesight::trajdata::{CleanConfig, CsvSchema, SynthConfig};

use crate::CliError;

pub const CONFIG_ENV: &str = "LANESIGHT_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Column preset for `ingest`: `ngsim` or `canonical`.
    pub preset: String,
    /// Explicit column mapping; overrides the preset.
    pub schema: Option<CsvSchema>,
    pub sample_rate_hz: f64,
    /// Drop short or jumpy trajectories after ingestion.
    pub clean: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            preset: "canonical".into(),
            schema: None,
            sample_rate_hz: 10.0,
            clean: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub ttm: TtmReference,
    /// Used when evaluating label files without a scene.
    pub sample_rate_hz: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ttm: TtmReference::Crossing,
            sample_rate_hz: 10.0,
        }
    }
}

/// Everything a pipeline run depends on. The global seed feeds every
/// stochastic step through named sub-seeds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub clean: CleanConfig,
    pub synth: SynthConfig,
    pub features: FeatureConfig,
    pub labels: LabelConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
    pub render: SceneView,
}

impl PipelineConfig {
    pub fn schema(&self) -> Result<CsvSchema, CliError> {
        match &self.data.schema {
            Some(s) => Ok(s.clone()),
            None => CsvSchema::preset(&self.data.preset)
                .ok_or_else(|| CliError::Usage(format!("unknown data preset {:?}", self.data.preset))),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.schema()?;
        self.train_config().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if !(self.data.sample_rate_hz > 0.0 && self.metrics.sample_rate_hz > 0.0) {
            return Err(CliError::Usage("sample rates must be positive".into()));
        }
        Ok(())
    }
}

/// Reads a TOML config, or the config stored in a run manifest.
fn read_tree(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    if let Ok(Value::Object(mut m)) = serde_json::from_str::<Value>(&text) {
        if let Some(c) = m.remove("config") {
            return Ok(c);
        }
        return Ok(Value::Object(m));
    }
    let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    serde_json::to_value(table).map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_scalar(raw: &str) -> Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").unwrap()).unwrap_or(Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Applies one `section.key=value` override.
pub fn apply_override(tree: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects section.key=value, got {spec:?}")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("bad key path {path:?}")));
    }
    let mut node = tree;
    for k in &keys[..keys.len() - 1] {
        if !node.is_object() {
            return Err(CliError::Usage(format!("{path:?}: {k} is not a section")));
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(k.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("{path:?} does not name a key")))?;
    obj.insert(keys[keys.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}

pub struct Sources {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
}

/// First key of `given` that the parsed config does not carry. Sections are
/// only descended into when both sides are tables, so tagged values pass.
fn unknown_key(given: &Value, known: &Value, prefix: &str) -> Option<String> {
    let (Value::Object(g), Value::Object(k)) = (given, known) else {
        return None;
    };
    for (key, v) in g {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match k.get(key) {
            None => return Some(path),
            Some(kv) => {
                if let Some(p) = unknown_key(v, kv, &path) {
                    return Some(p);
                }
            }
        }
    }
    None
}

/// File (explicit, else from the environment), then `--set`, then `--seed`.
pub fn load(src: &Sources) -> Result<PipelineConfig, CliError> {
    let path = src.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut tree = match &path {
        Some(p) => read_tree(p)?,
        None => Value::Object(Default::default()),
    };
    for o in &src.overrides {
        apply_override(&mut tree, o)?;
    }
    let mut cfg: PipelineConfig = serde_json::from_value(tree.clone()).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    let known = serde_json::to_value(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(k) = unknown_key(&tree, &known, "") {
        return Err(CliError::Usage(format!("unknown config key {k:?}")));
    }
    if let Some(s) = src.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn overrides(xs: &[&str]) -> Result<PipelineConfig, CliError> {
        load(&Sources {
            config: None,
            overrides: xs.iter().map(|s| s.to_string()).collect(),
            seed: None,
        })
    }

    #[test]
    fn values_parse_as_toml_then_fall_back_to_strings() {
        assert_eq!(parse_scalar("3"), Value::from(3));
        assert_eq!(parse_scalar("2.5"), Value::from(2.5));
        assert_eq!(parse_scalar("true"), Value::from(true));
        assert_eq!(parse_scalar("lstm_a"), Value::from("lstm_a"));
        assert_eq!(parse_scalar("\"a b\""), Value::from("a b"));
    }

    #[test]
    fn overrides_reach_nested_sections() {
        let c = overrides(&["train.epochs=7", "model.kind=lstm_e", "labels.horizon_s=2.0", "seed=9"]).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.model.kind, lanesight::models::ModelKind::LstmE);
        assert_eq!(c.labels.horizon_s, 2.0);
        assert_eq!(c.seed, 9);
        assert_eq!(c.train_config().seed, 9);
    }

    #[test]
    fn bad_overrides_are_usage_errors() {
        for bad in ["epochs", "train..epochs=1", "train.epochs=many", "nosuch.key=1", "train.epochs.deep=1"] {
            assert!(matches!(overrides(&[bad]), Err(CliError::Usage(_))), "{bad}");
        }
    }
}
