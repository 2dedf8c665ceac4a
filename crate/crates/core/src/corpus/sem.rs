//! *sem-style CoNLL: one token per line, blank lines between sentences.
//!
//! Columns are chapter, sentence number, token number, word, lemma, POS and
//! parse fragment, then either `***` (no negation) or one (cue, scope, event)
//! triple per negation. `_` means "not part of it"; a cue value that differs
//! from the word is an affix cue.

use std::fmt::Write as _;

use super::{CorpusError, Cue, Negation, RawSentence};

const FIXED_COLUMNS: usize = 7;
const NO_NEGATION: &str = "***";

fn malformed(line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::Malformed { line, reason: reason.into() }
}

fn split_columns(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

pub fn parse_sem_conll(text: &str) -> Result<Vec<RawSentence>, CorpusError> {
    let mut out = Vec::new();
    let mut block: Vec<(usize, Vec<&str>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                out.push(sentence(&block)?);
                block.clear();
            }
            continue;
        }
        block.push((i + 1, split_columns(line)));
    }
    if !block.is_empty() {
        out.push(sentence(&block)?);
    }
    Ok(out)
}

fn sentence(rows: &[(usize, Vec<&str>)]) -> Result<RawSentence, CorpusError> {
    let (first_line, first) = (rows[0].0, &rows[0].1);
    let width = first.len();
    if width <= FIXED_COLUMNS {
        return Err(malformed(first_line, format!("expected more than {FIXED_COLUMNS} columns, found {width}")));
    }
    let triples = if first[FIXED_COLUMNS..] == [NO_NEGATION] {
        0
    } else if (width - FIXED_COLUMNS).is_multiple_of(3) {
        (width - FIXED_COLUMNS) / 3
    } else {
        return Err(malformed(first_line, format!("{} negation columns is not a multiple of 3", width - FIXED_COLUMNS)));
    };

    let mut words = Vec::with_capacity(rows.len());
    let mut negations = vec![Negation::default(); triples];
    for (pos, (line, cols)) in rows.iter().enumerate() {
        if cols.len() != width {
            return Err(malformed(*line, format!("inconsistent negation columns: {} columns, sentence started with {width}", cols.len())));
        }
        let word = cols[3];
        words.push(word.to_string());
        for (k, neg) in negations.iter_mut().enumerate() {
            let base = FIXED_COLUMNS + 3 * k;
            let (cue, scope) = (cols[base], cols[base + 1]);
            if cue != "_" {
                let affix = (!cue.eq_ignore_ascii_case(word)).then(|| cue.to_string());
                neg.cues.push(Cue { position: pos, affix });
            }
            if scope != "_" {
                neg.scope.push(pos);
            }
        }
    }
    for neg in &negations {
        if neg.cues.is_empty() && !neg.scope.is_empty() {
            return Err(malformed(first_line, "negation column has a scope but no cue"));
        }
    }
    // All-underscore triples carry no negation.
    negations.retain(|n| !n.cues.is_empty());
    Ok(RawSentence { id: format!("{}-{}", first[0], first[1]), words, negations })
}

/// Writes the columns the parser reads back; lemma, POS and parse columns
/// are filled with `_`.
pub fn write_sem_conll(sentences: &[RawSentence]) -> String {
    let mut s = String::new();
    for sent in sentences {
        let (chapter, number) = sent.id.rsplit_once('-').unwrap_or((sent.id.as_str(), "0"));
        for (pos, word) in sent.words.iter().enumerate() {
            write!(s, "{chapter}\t{number}\t{pos}\t{word}\t_\t_\t_").unwrap();
            if sent.negations.is_empty() {
                s.push('\t');
                s.push_str(NO_NEGATION);
            }
            for neg in &sent.negations {
                let cue = neg.cues.iter().find(|c| c.position == pos).map(|c| c.affix.as_deref().unwrap_or(word));
                let scope = neg.scope.contains(&pos).then_some(word.as_str());
                write!(s, "\t{}\t{}\t_", cue.unwrap_or("_"), scope.unwrap_or("_")).unwrap();
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}
