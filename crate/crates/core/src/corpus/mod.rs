//! Corpus ingestion and the canonical JSON-lines sample format.
//!
//! Parsers turn annotated files into [`RawSentence`]s, [`explode`] turns
//! each negation into its own [`ScopeSample`], and everything downstream only
//! ever reads samples.

mod bioscope;
mod preprocess;
mod sample;
mod sem;
mod split;
pub mod synth;

use std::path::PathBuf;

use thiserror::Error;

pub use bioscope::parse_bioscope_xml;
pub use preprocess::{augment_words, preprocess, strip_markers, AugmentedWords, Prepared, Preprocessing};
pub use sample::{explode, read_jsonl, write_jsonl, DatasetStats, ScopeSample, Split};
pub use sem::{parse_sem_conll, write_sem_conll};
pub use split::{kfold_split, sherlock_split, Fold, SHERLOCK_REPEATS};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("xml: {0}")]
    Xml(String),
    #[error("{}:{line}: {reason}", path.display())]
    Jsonl { path: PathBuf, line: usize, reason: String },
    #[error("sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },
    #[error("split: {0}")]
    Split(String),
}

/// One cue token. Affix cues ("un", "n't") keep the matched substring but
/// mark the whole containing word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cue {
    pub position: usize,
    pub affix: Option<String>,
}

impl Cue {
    pub fn word(position: usize) -> Self {
        Self { position, affix: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Negation {
    pub cues: Vec<Cue>,
    /// Sorted, deduplicated word positions.
    pub scope: Vec<usize>,
}

/// A tokenized sentence with zero or more annotated negations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSentence {
    pub id: String,
    pub words: Vec<String>,
    pub negations: Vec<Negation>,
}
