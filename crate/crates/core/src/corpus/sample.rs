use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Preprocessing, RawSentence};
use crate::binio::{read_file, write_atomic};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// The canonical record: one sentence paired with one negation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScopeSample {
    pub id: String,
    pub words: Vec<String>,
    pub cue_mask: Vec<bool>,
    pub scope_labels: Vec<bool>,
    pub source: String,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    /// Fixed-split corpora tag their partition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl ScopeSample {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: String| CorpusError::InvalidSample { id: self.id.clone(), reason };
        if self.words.is_empty() {
            return Err(bad("no words".into()));
        }
        if self.cue_mask.len() != self.words.len() || self.scope_labels.len() != self.words.len() {
            return Err(bad(format!(
                "{} words, {} cue flags, {} scope labels",
                self.words.len(),
                self.cue_mask.len(),
                self.scope_labels.len()
            )));
        }
        if !self.cue_mask.iter().any(|&c| c) {
            return Err(bad("no cue token".into()));
        }
        Ok(())
    }

    pub fn cue_positions(&self) -> Vec<usize> {
        self.cue_mask.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.scope_labels.iter().map(|&s| u8::from(s)).collect()
    }
}

/// One sample per negation; multi-word cues mark every cue token.
pub fn explode(raw: &RawSentence, source: &str) -> Result<Vec<ScopeSample>, CorpusError> {
    let m = raw.words.len();
    raw.negations
        .iter()
        .enumerate()
        .map(|(k, neg)| {
            let id = format!("{}#{k}", raw.id);
            if neg.cues.is_empty() {
                return Err(CorpusError::InvalidSample { id, reason: "negation with empty cue".into() });
            }
            let mut cue_mask = vec![false; m];
            let mut scope_labels = vec![false; m];
            let cues = neg.cues.iter().map(|c| (c.position, true));
            for (pos, is_cue) in cues.chain(neg.scope.iter().map(|&p| (p, false))) {
                if pos >= m {
                    return Err(CorpusError::InvalidSample { id, reason: format!("position {pos} outside {m} words") });
                }
                if is_cue {
                    cue_mask[pos] = true;
                } else {
                    scope_labels[pos] = true;
                }
            }
            Ok(ScopeSample {
                id,
                words: raw.words.clone(),
                cue_mask,
                scope_labels,
                source: source.to_string(),
                preprocessing: Preprocessing::Normal,
                split: None,
            })
        })
        .collect()
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ScopeSample>> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CorpusError::Jsonl {
        path: path.to_path_buf(),
        line: 0,
        reason: format!("not UTF-8: {e}"),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| CorpusError::Jsonl { path: path.to_path_buf(), line: i + 1, reason };
        let sample: ScopeSample = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        sample.validate().map_err(|e| err(e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}

pub fn to_jsonl(samples: &[ScopeSample]) -> Result<String> {
    let mut s = String::new();
    for sample in samples {
        sample.validate()?;
        writeln!(s, "{}", serde_json::to_string(sample)?).unwrap();
    }
    Ok(s)
}

/// Writes atomically: on error nothing is left at `path`.
pub fn write_jsonl(path: &Path, samples: &[ScopeSample]) -> Result<()> {
    write_atomic(path, to_jsonl(samples)?.as_bytes())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub sentences: usize,
    pub negated_sentences: usize,
    pub samples: usize,
    pub samples_per_source: BTreeMap<String, usize>,
}

impl DatasetStats {
    pub fn of(sentences: &[RawSentence], samples: &[ScopeSample]) -> Self {
        let mut per = BTreeMap::new();
        for s in samples {
            *per.entry(s.source.clone()).or_insert(0) += 1;
        }
        Self {
            sentences: sentences.len(),
            negated_sentences: sentences.iter().filter(|s| !s.negations.is_empty()).count(),
            samples: samples.len(),
            samples_per_source: per,
        }
    }
}
