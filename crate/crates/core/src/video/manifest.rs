//! JSON-lines dataset manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Label,
    /// Generator id for fakes; chained pipelines are written `"A+B"` in stage order.
    pub generator: Option<String>,
    pub family: u32,
    pub frames: usize,
    pub seed: u64,
    /// Path of the real sample whose first frame conditioned this fake, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl ManifestEntry {
    pub fn validate(&self) -> Result<()> {
        match (self.label, &self.generator) {
            (Label::Fake, None) => Err(Error::invalid(format!(
                "fake sample {} has no generator id",
                self.path
            ))),
            (Label::Real, Some(g)) => Err(Error::invalid(format!(
                "real sample {} carries generator id {g}",
                self.path
            ))),
            (Label::Fake, Some(g)) if g.is_empty() || g.split('+').any(str::is_empty) => {
                Err(Error::invalid(format!(
                    "sample {} has malformed generator id `{g}`",
                    self.path
                )))
            }
            _ => Ok(()),
        }
    }

    /// Generator stages in order; empty for real samples.
    pub fn stages(&self) -> Vec<&str> {
        self.generator
            .as_deref()
            .map(|g| g.split('+').collect())
            .unwrap_or_default()
    }

    pub fn is_chained(&self) -> bool {
        self.stages().len() > 1
    }

    /// Final-stage generator, the label used for source tracing.
    pub fn final_generator(&self) -> Option<&str> {
        self.stages().last().copied()
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))?;
        entry
            .validate()
            .map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
        s.push('\n');
    }
    s
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text).map_err(|e| match e {
        Error::Format { detail, .. } => Error::format(path.display().to_string(), detail),
        other => other,
    })
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    for e in entries {
        e.validate()?;
    }
    fs::write(path, manifest_to_string(entries)).map_err(|e| Error::io(path, e))
}
