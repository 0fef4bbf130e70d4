//! JSON-lines clip manifests.
//!
//! One object per line:
//! `{"id":…,"path":…,"weak":[…],"strong":[{"class":…,"onset":…,"offset":…}],"split":…,"derived_from":…}`
//! where `strong` and `derived_from` are optional and times are seconds.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::labels::{ClassVocab, EventInterval, WeakLabelSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Eval,
    Unlabeled,
}

/// How a derived clip was produced from originals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Provenance {
    Shift {
        source: String,
        samples: usize,
    },
    Mix {
        sources: [String; 2],
        gains: [f32; 2],
    },
}

impl Provenance {
    pub fn sources(&self) -> Vec<&str> {
        match self {
            Provenance::Shift { source, .. } => vec![source],
            Provenance::Mix { sources, .. } => sources.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub id: String,
    /// As written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub path: PathBuf,
    pub weak: WeakLabelSet,
    pub strong: Option<Vec<EventInterval>>,
    pub split: Split,
    pub derived_from: Option<Provenance>,
}

impl ClipRecord {
    pub fn audio_path(&self, manifest_dir: &Path) -> PathBuf {
        if self.path.is_absolute() {
            self.path.clone()
        } else {
            manifest_dir.join(&self.path)
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowEvent {
    class: String,
    onset: f64,
    offset: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    id: String,
    path: String,
    weak: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    strong: Option<Vec<RowEvent>>,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    derived_from: Option<Provenance>,
}

fn to_record(row: Row, vocab: &ClassVocab, line: usize) -> Result<ClipRecord, CorpusError> {
    let class_id = |name: &str| {
        vocab.id(name).map_err(|_| CorpusError::UnknownClass {
            line,
            class: name.to_string(),
        })
    };
    let invalid = |msg: String| CorpusError::Invalid { line, msg };
    if row.id.is_empty() {
        return Err(invalid("empty clip id".into()));
    }
    let mut weak = WeakLabelSet::new();
    for w in &row.weak {
        weak.insert(class_id(w)?);
    }
    let strong = match row.strong {
        None => None,
        Some(events) => {
            let mut out = Vec::with_capacity(events.len());
            for e in events {
                let c = class_id(&e.class)?;
                let ev = EventInterval::new(c, e.onset, e.offset);
                if !ev.is_valid() {
                    return Err(invalid(format!(
                        "event `{}` has invalid interval {}-{}",
                        e.class, e.onset, e.offset
                    )));
                }
                if !weak.contains(&c) {
                    return Err(invalid(format!(
                        "strong label class `{}` missing from weak labels",
                        e.class
                    )));
                }
                out.push(ev);
            }
            Some(out)
        }
    };
    Ok(ClipRecord {
        id: row.id,
        path: PathBuf::from(row.path),
        weak,
        strong,
        split: row.split,
        derived_from: row.derived_from,
    })
}

pub fn parse_manifest(text: &str, vocab: &ClassVocab) -> Result<Vec<ClipRecord>, CorpusError> {
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let rec = to_record(row, vocab, line)?;
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: rec.id });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_manifest(path: &Path, vocab: &ClassVocab) -> Result<Vec<ClipRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_manifest(&text, vocab)
}

pub fn manifest_line(rec: &ClipRecord, vocab: &ClassVocab) -> String {
    let row = Row {
        id: rec.id.clone(),
        path: rec.path.to_string_lossy().into_owned(),
        weak: rec
            .weak
            .iter()
            .map(|&c| vocab.name(c).to_string())
            .collect(),
        strong: rec.strong.as_ref().map(|events| {
            events
                .iter()
                .map(|e| RowEvent {
                    class: vocab.name(e.class).to_string(),
                    onset: e.onset,
                    offset: e.offset,
                })
                .collect()
        }),
        split: rec.split,
        derived_from: rec.derived_from.clone(),
    };
    serde_json::to_string(&row).expect("manifest rows serialize")
}

pub fn save_manifest(
    path: &Path,
    records: &[ClipRecord],
    vocab: &ClassVocab,
) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    for r in records {
        writeln!(out, "{}", manifest_line(r, vocab)).expect("write to vec");
    }
    fs::write(path, out).map_err(|e| CorpusError::io(path, e))
}
