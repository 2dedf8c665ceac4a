//! A rule-generated corpus for running the whole pipeline without external
//! data. Each sample is one short sentence with one cue word, shaped like
//! "I do not know the answer .": the scope is every word after the cue up to
//! the sentence-final punctuation mark.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{Preprocessing, ScopeSample};
use crate::tensor::RngState;

/// Seed of the bundled corpus.
pub const BUNDLED_SEED: u64 = 2020;
pub const BUNDLED_LEN: usize = 64;
/// The 64-sample corpus shipped with the crate, equal to
/// `generate(BUNDLED_LEN, BUNDLED_SEED)`.
pub const BUNDLED_JSONL: &str = include_str!("../../data/synthetic-64.jsonl");

const CUES: &[&str] = &["not", "no", "never", "without"];
const FINAL: &[&str] = &[".", "!", "?"];
const WORDS: &[&str] = &[
    "the", "a", "man", "woman", "dog", "house", "door", "letter", "came", "saw", "found", "was", "is", "had", "we", "he",
    "she", "they", "old", "small", "dark", "quiet", "road", "night", "morning", "window", "light", "open", "again", "there",
    "here", "then", "soon", "very", "much", "any", "one", "two", "our", "his",
];

/// `n` samples, deterministic in `seed`.
pub fn generate(n: usize, seed: u64) -> Vec<ScopeSample> {
    let mut rng = RngState::new(seed);
    (0..n).map(|i| sample(&mut rng, format!("synth-{seed}-{i}"))).collect()
}

fn sample(rng: &mut RngState, id: String) -> ScopeSample {
    let mut words = Vec::new();
    let mut cue_mask = Vec::new();
    let mut scope = Vec::new();
    let mut push = |w: &str, cue: bool, in_scope: bool| {
        words.push(w.to_string());
        cue_mask.push(cue);
        scope.push(in_scope);
    };
    for _ in 0..rng.random_range(1..=4) {
        push(WORDS.choose(rng).unwrap(), false, false);
    }
    push(CUES.choose(rng).unwrap(), true, false);
    for _ in 0..rng.random_range(1..=6) {
        push(WORDS.choose(rng).unwrap(), false, true);
    }
    push(FINAL.choose(rng).unwrap(), false, false);
    ScopeSample { id, words, cue_mask, scope_labels: scope, source: "synthetic".into(), preprocessing: Preprocessing::Normal, split: None }
}

/// Parses [`BUNDLED_JSONL`].
pub fn bundled() -> Vec<ScopeSample> {
    BUNDLED_JSONL.lines().map(|l| serde_json::from_str(l).expect("bundled corpus is valid")).collect()
}
