use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{DatasetConfig, DatasetPreset};
use crate::error::{Error, Result};
use crate::model::{ArchPreset, TrainConfig};
use crate::refine::{CropSampler, RefineConfig};

/// Every tunable of every command, loadable from one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset generation seed.
    pub seed: u64,
    pub data: DatasetConfig,
    pub arch: ArchPreset,
    pub train: TrainConfig,
    pub refine: RefineConfig,
    /// How crops for a refinement model are drawn (`train --crops`).
    pub crops: CropSampler,
    pub crops_per_image: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            data: DatasetConfig::preset(DatasetPreset::Default),
            arch: ArchPreset::Default,
            train: TrainConfig::default(),
            refine: RefineConfig::default(),
            crops: CropSampler::default(),
            crops_per_image: 4,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Apply `key.path=value` overrides. Array elements are addressed by
    /// index (`data.domains.2.n_train=20`); the value is parsed as JSON and
    /// falls back to a plain string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            *lookup(&mut tree, key)? = value;
        }
        serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.refine.validate()?;
        if self.crops.margin_low > self.crops.margin_high || self.crops.margin_low < 0.0 {
            return Err(Error::Config("crops: need 0 <= margin_low <= margin_high".into()));
        }
        if self.crops.resolution == 0 || self.crops_per_image == 0 {
            return Err(Error::Config(
                "crops.resolution and crops_per_image must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn lookup<'a>(tree: &'a mut Value, key: &str) -> Result<&'a mut Value> {
    let mut node = tree;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("unknown config field {key:?}")))?;
    }
    Ok(node)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_a_fixed_point() {
        let c = RunConfig::default();
        let text = c.to_json();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = RunConfig::from_json(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.momentum, TrainConfig::default().momentum);
        assert_eq!(c.data, RunConfig::default().data);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            r#"{"trian": {}}"#,
            r#"{"train": {"epoch": 3}}"#,
            r#"{"refine": {"stop": 1}}"#,
        ] {
            let err = RunConfig::from_json(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{err}");
        }
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = RunConfig::default()
            .with_overrides(&[
                "train.epochs=7".into(),
                "data.domains.2.n_train=20".into(),
                "arch=tiny".into(),
                "refine.refine_resolution=96".into(),
            ])
            .unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.data.domains[2].n_train, 20);
        assert_eq!(c.arch, ArchPreset::Tiny);
        assert_eq!(c.refine.refine_resolution, Some(96));
    }

    #[test]
    fn bad_overrides_name_the_field() {
        let err = RunConfig::default()
            .with_overrides(&["train.epoks=3".into()])
            .unwrap_err();
        assert!(err.to_string().contains("train.epoks"), "{err}");
        assert!(RunConfig::default().with_overrides(&["train.epochs".into()]).is_err());
        assert!(RunConfig::default()
            .with_overrides(&["train.epochs=many".into()])
            .is_err());
    }
}
