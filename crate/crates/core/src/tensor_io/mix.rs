use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kquant::QuantType;

/// Ordered layer-name rules; the first matching glob decides the type.
#[derive(Debug, Clone)]
pub struct MixConfig {
    pub default: QuantType,
    pub rules: Vec<MixRule>,
}

#[derive(Debug, Clone)]
pub struct MixRule {
    pub pattern: glob::Pattern,
    pub qtype: QuantType,
}

#[derive(Deserialize)]
struct RawMix {
    default: QuantType,
    #[serde(default)]
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
struct RawRule {
    pattern: String,
    #[serde(rename = "type")]
    qtype: QuantType,
}

impl MixConfig {
    pub fn new(default: QuantType) -> Self {
        Self {
            default,
            rules: Vec::new(),
        }
    }

    pub fn with_rule(mut self, pattern: &str, qtype: QuantType) -> Result<Self> {
        let pattern =
            glob::Pattern::new(pattern).map_err(|e| Error::InvalidConfig(format!("bad glob {pattern:?}: {e}")))?;
        self.rules.push(MixRule { pattern, qtype });
        Ok(self)
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let raw: RawMix = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut mix = MixConfig::new(raw.default);
        for r in raw.rules {
            mix = mix.with_rule(&r.pattern, r.qtype).map_err(|e| e.to_string())?;
        }
        Ok(mix)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

pub fn resolve_type(mix: &MixConfig, layer_name: &str) -> QuantType {
    mix.rules
        .iter()
        .find(|r| r.pattern.matches(layer_name))
        .map_or(mix.default, |r| r.qtype)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub qtype: Option<QuantType>,
}

/// Tensor name to file mapping; relative files resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { entries, base_dir })
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.file)
    }

    /// The entry's explicit type, else the mix's resolution.
    pub fn type_for(&self, entry: &ManifestEntry, mix: &MixConfig) -> QuantType {
        entry.qtype.unwrap_or_else(|| resolve_type(mix, &entry.name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mix() -> MixConfig {
        MixConfig::from_json(
            r#"{ "default": "q3_k", "rules": [
                { "pattern": "output.*", "type": "q6_k" },
                { "pattern": "*.weight", "type": "q5_k" } ] }"#,
        )
        .unwrap()
    }

    #[test]
    fn pattern_match() {
        assert_eq!(resolve_type(&mix(), "output.weight"), QuantType::Q6K);
    }

    #[test]
    fn default_on_miss() {
        assert_eq!(resolve_type(&mix(), "blk.0.attn_q"), QuantType::Q3K);
    }

    #[test]
    fn earlier_rule_wins() {
        // both rules match; ordering decides
        assert_eq!(resolve_type(&mix(), "output.weight"), QuantType::Q6K);
        assert_eq!(resolve_type(&mix(), "blk.0.weight"), QuantType::Q5K);
    }

    #[test]
    fn rejects_unknown_type() {
        assert!(MixConfig::from_json(r#"{ "default": "q9_k" }"#).is_err());
    }

    #[test]
    fn manifest_parses_optional_type() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(
            &path,
            r#"[ { "name": "a", "file": "a.kqt" }, { "name": "b", "file": "b.kqt", "type": "q4_k" } ]"#,
        )
        .unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[1].qtype, Some(QuantType::Q4K));
        assert_eq!(m.resolve(&m.entries[0]), dir.path().join("a.kqt"));
        let mx = MixConfig::new(QuantType::Q2K);
        assert_eq!(m.type_for(&m.entries[0], &mx), QuantType::Q2K);
        assert_eq!(m.type_for(&m.entries[1], &mx), QuantType::Q4K);
    }
}
