//! Class vocabulary, weak label sets and strong (timed) event labels.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ClassId = usize;

/// Classes present in a clip, without timing.
pub type WeakLabelSet = BTreeSet<ClassId>;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("duplicate class `{0}` in vocabulary")]
    Duplicate(String),
    #[error("empty class vocabulary")]
    Empty,
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Ordered class names; a class id is an index into this list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVocab {
    names: Vec<String>,
}

impl ClassVocab {
    pub fn new(names: Vec<String>) -> Result<Self, VocabError> {
        if names.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(VocabError::Duplicate(n.clone()));
            }
        }
        Ok(ClassVocab { names })
    }

    /// One class name per line; blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        )
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = self.names.join("\n");
        text.push('\n');
        fs::write(path, text)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ClassId, VocabError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| VocabError::UnknownClass(name.to_string()))
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A strong label: class active from `onset` to `offset` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventInterval {
    pub class: ClassId,
    pub onset: f64,
    pub offset: f64,
}

impl EventInterval {
    pub fn new(class: ClassId, onset: f64, offset: f64) -> Self {
        EventInterval {
            class,
            onset,
            offset,
        }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    pub fn is_valid(&self) -> bool {
        self.onset >= 0.0 && self.onset < self.offset && self.offset.is_finite()
    }
}
