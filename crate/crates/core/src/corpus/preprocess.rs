use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ScopeSample;
use crate::backbone::{HashedVocab, TokenSequence, CUE_MARKER};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preprocessing {
    /// Words are fed as they are.
    #[default]
    Normal,
    /// A marker token is inserted immediately before every cue word.
    Augment,
}

impl Preprocessing {
    pub const ALL: [Preprocessing; 2] = [Preprocessing::Normal, Preprocessing::Augment];

    pub fn as_str(self) -> &'static str {
        match self {
            Preprocessing::Normal => "normal",
            Preprocessing::Augment => "augment",
        }
    }
}

impl fmt::Display for Preprocessing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preprocessing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(Preprocessing::Normal),
            "augment" => Ok(Preprocessing::Augment),
            _ => Err(Error::Config(format!("unknown preprocessing {s:?} (expected normal or augment)"))),
        }
    }
}

/// The token list seen by the model, before id lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedWords {
    pub words: Vec<String>,
    /// 1 = in scope; inserted markers are always 0.
    pub labels: Vec<u8>,
    /// False exactly at inserted markers.
    pub scored: Vec<bool>,
    /// Positions of the cue words themselves (not their markers).
    pub cue_ids: Vec<usize>,
}

pub fn augment_words(sample: &ScopeSample, mode: Preprocessing) -> AugmentedWords {
    let extra = match mode {
        Preprocessing::Normal => 0,
        Preprocessing::Augment => sample.cue_mask.iter().filter(|&&c| c).count(),
    };
    let n = sample.words.len() + extra;
    let mut out =
        AugmentedWords { words: Vec::with_capacity(n), labels: Vec::with_capacity(n), scored: Vec::with_capacity(n), cue_ids: Vec::new() };
    for ((word, &cue), &scope) in sample.words.iter().zip(&sample.cue_mask).zip(&sample.scope_labels) {
        if cue && mode == Preprocessing::Augment {
            out.words.push(CUE_MARKER.to_string());
            out.labels.push(0);
            out.scored.push(false);
        }
        if cue {
            out.cue_ids.push(out.words.len());
        }
        out.words.push(word.clone());
        out.labels.push(u8::from(scope));
        out.scored.push(true);
    }
    out
}

/// Drops inserted markers, recovering the original word list.
pub fn strip_markers(aug: &AugmentedWords) -> Vec<String> {
    aug.words.iter().zip(&aug.scored).filter(|(_, &s)| s).map(|(w, _)| w.clone()).collect()
}

/// A model-ready sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub seq: TokenSequence,
    pub labels: Vec<u8>,
    pub scored: Vec<bool>,
    /// In-scope words cut off by windowing; they count as missed.
    pub truncated_positives: usize,
}

/// Preprocesses and, when longer than `max_len`, keeps a window centred on
/// the first cue.
pub fn preprocess(sample: &ScopeSample, sample_id: u32, mode: Preprocessing, vocab: &HashedVocab, max_len: usize) -> Result<Prepared> {
    sample.validate()?;
    if max_len == 0 {
        return Err(Error::Config("max_len must be positive".into()));
    }
    let aug = augment_words(sample, mode);
    let len = aug.words.len();
    let (start, end) = if len <= max_len {
        (0, len)
    } else {
        // Keep the first cue's marker in view too.
        let anchor = aug.cue_ids[0].saturating_sub(usize::from(mode == Preprocessing::Augment));
        let start = anchor.saturating_sub(max_len / 2).min(len - max_len);
        (start, start + max_len)
    };
    let truncated_positives = (0..len).filter(|&i| (i < start || i >= end) && aug.scored[i] && aug.labels[i] == 1).count();
    let cue_ids: Vec<usize> = aug.cue_ids.iter().filter(|&&c| c >= start && c < end).map(|&c| c - start).collect();
    let seq = TokenSequence::from_words(sample_id, &aug.words[start..end], cue_ids, vocab)?;
    Ok(Prepared { seq, labels: aug.labels[start..end].to_vec(), scored: aug.scored[start..end].to_vec(), truncated_positives })
}
