//! BioScope-style XML: `<sentence>` elements with inline
//! `<cue type="negation" ref="X">` and `<xcope id="X">` elements.
//!
//! Words come from whitespace tokenization of the sentence's full text, so an
//! element boundary inside a word (an affix cue such as `<cue>im</cue>possible`)
//! does not split it. A word belongs to a cue or scope when any of its
//! characters do. Scopes are taken as annotated (BioScope scopes include
//! their cue).

use std::collections::BTreeSet;

use roxmltree::{Document, Node};

use super::{CorpusError, Cue, Negation, RawSentence};

#[derive(Default)]
struct Word {
    text: String,
    /// (cue element index, characters of this word inside it)
    cues: Vec<(usize, String)>,
    scopes: BTreeSet<String>,
}

pub fn parse_bioscope_xml(text: &str) -> Result<Vec<RawSentence>, CorpusError> {
    let doc = Document::parse(text).map_err(|e| CorpusError::Xml(e.to_string()))?;
    for cue in doc.descendants().filter(|n| n.has_tag_name("cue")) {
        if !cue.ancestors().any(|a| a.has_tag_name("sentence")) {
            let pos = doc.text_pos_at(cue.range().start);
            return Err(CorpusError::Xml(format!("cue without enclosing sentence at {pos}")));
        }
    }
    doc.descendants()
        .filter(|n| n.has_tag_name("sentence"))
        .enumerate()
        .map(|(i, s)| sentence(&doc, s, i))
        .collect()
}

fn is_negation_cue(n: &Node<'_, '_>) -> bool {
    n.has_tag_name("cue") && n.attribute("type") == Some("negation")
}

fn sentence(doc: &Document<'_>, s: Node<'_, '_>, index: usize) -> Result<RawSentence, CorpusError> {
    let cue_nodes: Vec<Node<'_, '_>> = s.descendants().filter(is_negation_cue).collect();
    let mut words: Vec<Word> = Vec::new();
    let mut open = false;
    for t in s.descendants().filter(|n| n.is_text()) {
        let mut cue = None;
        let mut scopes = Vec::new();
        for a in t.ancestors().take_while(|a| *a != s) {
            if is_negation_cue(&a) {
                cue = cue_nodes.iter().position(|c| *c == a);
            }
            if a.has_tag_name("xcope") {
                if let Some(id) = a.attribute("id") {
                    scopes.push(id.to_string());
                }
            }
        }
        for ch in t.text().unwrap_or("").chars() {
            if ch.is_whitespace() {
                open = false;
                continue;
            }
            if !open {
                words.push(Word::default());
                open = true;
            }
            let w = words.last_mut().unwrap();
            w.text.push(ch);
            w.scopes.extend(scopes.iter().cloned());
            if let Some(c) = cue {
                match w.cues.iter_mut().find(|(k, _)| *k == c) {
                    Some((_, part)) => part.push(ch),
                    None => w.cues.push((c, ch.to_string())),
                }
            }
        }
    }

    // Cues sharing a `ref` ("neither ... nor") form one negation.
    let mut groups: Vec<(Option<&str>, Vec<usize>)> = Vec::new();
    for (k, c) in cue_nodes.iter().enumerate() {
        let r = c.attribute("ref");
        match groups.iter_mut().find(|(g, _)| r.is_some() && *g == r) {
            Some((_, members)) => members.push(k),
            None => groups.push((r, vec![k])),
        }
    }
    let mut negations = Vec::with_capacity(groups.len());
    for (r, members) in groups {
        if let Some(r) = r {
            if !s.descendants().any(|n| n.has_tag_name("xcope") && n.attribute("id") == Some(r)) {
                let pos = doc.text_pos_at(cue_nodes[members[0]].range().start);
                return Err(CorpusError::Xml(format!("cue at {pos} refers to unknown scope {r:?}")));
            }
        }
        let mut neg = Negation::default();
        for (pos, w) in words.iter().enumerate() {
            if let Some((_, part)) = w.cues.iter().find(|(k, _)| members.contains(k)) {
                let affix = (part != &w.text).then(|| part.clone());
                neg.cues.push(Cue { position: pos, affix });
            }
            if r.is_some_and(|r| w.scopes.contains(r)) {
                neg.scope.push(pos);
            }
        }
        if neg.cues.is_empty() {
            return Err(CorpusError::Xml(format!("empty negation cue in sentence {index}")));
        }
        negations.push(neg);
    }
    let id = s.attribute("id").map_or_else(|| index.to_string(), str::to_string);
    Ok(RawSentence { id, words: words.into_iter().map(|w| w.text).collect(), negations })
}
