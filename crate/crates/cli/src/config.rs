//! Run configuration files.
//!
//! Two syntaxes are accepted. A file whose first non-blank character is `{`
//! is JSON:
//!
//! ```json
//! {"model": {"variant": "concat"}, "train": {"epochs": 20}, "out": "runs/a"}
//! ```
//!
//! Anything else is `key = value` lines, with `#` comments and dotted keys
//! for the nested sections:
//!
//! ```text
//! model.variant = concat
//! train.epochs = 20
//! train.betas = [0.9, 0.999]
//! out = runs/a
//! ```
//!
//! Values are read as JSON when they parse as JSON and as strings
//! otherwise. Both syntaxes are checked against the same schema and unknown
//! keys are rejected. Command-line flags override file values, which
//! override defaults.

use std::path::{Path, PathBuf};

use gameon_core::model::ModelConfig;
use gameon_core::train::TrainConfig;
use gameon_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("config JSON: {e}")))?
        } else {
            parse_key_values(text)?
        };
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Validation(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Defaults, or the file at `path` when given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, Error> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.model.validate()?;
        self.train.validate()
    }
}

fn parse_key_values(text: &str) -> Result<Value, Error> {
    let mut root = Map::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("config line {}: expected key = value", n + 1)))?;
        let key = key.trim();
        let value = value.trim();
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| {
            Error::Validation(format!("config line {}: empty key", n + 1))
        })?;
        let mut node = &mut root;
        for part in parts {
            let entry = node.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
            node = entry.as_object_mut().ok_or_else(|| {
                Error::Validation(format!("config line {}: {part} is both a value and a section", n + 1))
            })?;
        }
        if node.insert(leaf.to_string(), parsed).is_some() {
            return Err(Error::Validation(format!("config line {}: {key} set twice", n + 1)));
        }
    }
    Ok(Value::Object(root))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gameon_core::model::Variant;

    #[test]
    fn key_values_and_json_agree() {
        let kv = "# run\nmodel.variant = concat\ntrain.epochs = 7\ntrain.betas = [0.8, 0.99]\nout = runs/x  # comment\n";
        let json = r#"{"model": {"variant": "concat"}, "train": {"epochs": 7, "betas": [0.8, 0.99]}, "out": "runs/x"}"#;
        let a = RunConfig::parse(kv).unwrap();
        assert_eq!(a, RunConfig::parse(json).unwrap());
        assert_eq!(a.model.variant, Variant::Concat);
        assert_eq!(a.train.epochs, 7);
        assert_eq!(a.train.batch_size, 512);
        assert_eq!(a.out, Some(PathBuf::from("runs/x")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["model.width = 3", "learning_rate = 1", "train.lr = 0.1", r#"{"extra": 1}"#] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Validation(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse("model.dropout = 1.5").is_err());
        assert!(RunConfig::parse("train.lr_init = 0.1\ntrain.lr_final = 0.2").is_err());
        assert!(RunConfig::parse("train.epochs = many").is_err());
        assert!(RunConfig::parse("just words").is_err());
        assert!(RunConfig::parse("train.epochs = 1\ntrain.epochs = 2").is_err());
    }

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(RunConfig::parse("\n# nothing\n").unwrap(), RunConfig::default());
    }
}
