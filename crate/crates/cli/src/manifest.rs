//! Run manifests: everything needed to reproduce a run, minus thread count and output location.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pairnull::{Attribute, CountMode, PropertyType, RewireConfig, SliceKey, SwapKernel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Md,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "md" | "markdown" => Ok(Format::Md),
            "csv" => Ok(Format::Csv),
            other => Err(format!("format must be json, md or csv, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    /// Empty means every city.
    #[serde(default)]
    pub cities: Vec<String>,
    /// Empty means both property types.
    #[serde(default)]
    pub property_types: Vec<PropertyType>,
    pub attributes: Vec<Attribute>,
    pub min_conf: f64,
    pub mode: CountMode,
    pub level: f64,
    pub rewire: RewireConfig,
    pub formats: Vec<Format>,
    #[serde(default, skip_serializing)]
    pub out: PathBuf,
}

impl RunManifest {
    pub fn selects(&self, slice: &SliceKey) -> bool {
        (self.cities.is_empty() || self.cities.iter().any(|c| c == &slice.city))
            && (self.property_types.is_empty() || self.property_types.contains(&slice.property_type))
    }

    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }

    /// Overlays the keys of a JSON manifest file on top of `self`.
    pub fn overlay_file(self, path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let file: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        let serde_json::Value::Object(file) = file else {
            anyhow::bail!("manifest {} is not a JSON object", path.display());
        };
        let out = self.out.clone();
        let mut merged = serde_json::to_value(&self)?;
        let target = merged.as_object_mut().expect("manifest serializes to an object");
        let out_in_file = file.contains_key("out");
        for (k, v) in file {
            target.insert(k, v);
        }
        let mut manifest: RunManifest =
            serde_json::from_value(merged).with_context(|| format!("invalid manifest {}", path.display()))?;
        if !out_in_file {
            manifest.out = out;
        }
        Ok(manifest)
    }
}

pub fn kernel_from_str(s: &str) -> Result<SwapKernel, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "uniform" => Ok(SwapKernel::Uniform),
        "unit_swap" | "unitswap" => Ok(SwapKernel::UnitSwap),
        other => Err(format!("kernel must be uniform or unit_swap, got {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RunManifest {
        RunManifest {
            nodes: "n.csv".into(),
            edges: "e.csv".into(),
            cities: vec![],
            property_types: vec![],
            attributes: vec![Attribute::Gender],
            min_conf: 0.3,
            mode: CountMode::StayWeighted,
            level: 0.95,
            rewire: RewireConfig::default(),
            formats: vec![Format::Json],
            out: "out".into(),
        }
    }

    #[test]
    fn file_keys_override_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, r#"{"min_conf": 0.5, "attributes": ["race"]}"#).unwrap();
        let m = manifest().overlay_file(&path).unwrap();
        assert_eq!(m.min_conf, 0.5);
        assert_eq!(m.attributes, vec![Attribute::Race]);
        assert_eq!(m.out, PathBuf::from("out"));
        assert_eq!(m.nodes, PathBuf::from("n.csv"));
    }

    #[test]
    fn output_location_is_not_serialized() {
        let v = serde_json::to_value(manifest()).unwrap();
        assert!(v.get("out").is_none());
    }

    #[test]
    fn slice_selection() {
        let mut m = manifest();
        m.cities = vec!["Ams".into()];
        m.property_types = vec![PropertyType::Shared];
        assert!(m.selects(&SliceKey::new("Ams", PropertyType::Shared)));
        assert!(!m.selects(&SliceKey::new("Ams", PropertyType::Full)));
        assert!(!m.selects(&SliceKey::new("Dub", PropertyType::Shared)));
    }
}
