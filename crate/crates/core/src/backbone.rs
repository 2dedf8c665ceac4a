//! Producers of contextual token embeddings.
//!
//! The scope model only needs `[m, d]` rows for a token sequence. Two
//! sources are provided: a small trainable transformer encoder over a hashed
//! vocabulary, and frozen embeddings exported by an external encoder into an
//! `OAEMB1` file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::SelfAttention;
use crate::binio::{self, Reader};
use crate::nn::{Ctx, FeedForward, Init, LayerNorm};
use crate::tensor::{Graph, ParamGroup, ParamId, ParamStore, RngState, Tensor, Var};
use crate::{Error, Result};

/// Padding id; never produced by hashing.
pub const PAD_ID: u32 = 0;
/// Id of the marker token inserted before cue words by augment preprocessing.
pub const CUE_MARKER_ID: u32 = 1;
pub const CUE_MARKER: &str = "[CUE]";
/// Maximum sequence length, including inserted marker tokens.
pub const MAX_LEN: usize = 128;

/// Hashes lowercased words into `[2, size)` with 64-bit FNV-1a.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedVocab {
    pub size: u32,
}

impl HashedVocab {
    pub fn new(size: u32) -> Result<Self> {
        if size < 3 {
            return Err(Error::Config(format!("vocabulary size must be at least 3, got {size}")));
        }
        Ok(Self { size })
    }

    pub fn id(&self, word: &str) -> u32 {
        if word == CUE_MARKER {
            return CUE_MARKER_ID;
        }
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in word.to_lowercase().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        2 + (h % u64::from(self.size - 2)) as u32
    }
}

/// A tokenized sentence with the positions of its cue tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub words: Vec<String>,
    /// Strictly increasing positions of cue tokens; never empty.
    pub cue_ids: Vec<usize>,
    /// Sample id, used to find precomputed embeddings.
    pub sample_id: u32,
}

impl TokenSequence {
    pub fn new(sample_id: u32, ids: Vec<u32>, words: Vec<String>, cue_ids: Vec<usize>) -> Result<Self> {
        if ids.len() != words.len() || ids.is_empty() {
            return Err(Error::Backbone(format!("{} ids for {} words", ids.len(), words.len())));
        }
        if cue_ids.is_empty() {
            return Err(Error::Cueless);
        }
        if cue_ids.windows(2).any(|w| w[0] >= w[1]) || *cue_ids.last().unwrap() >= ids.len() {
            return Err(Error::Backbone(format!("cue positions {cue_ids:?} must increase strictly and be below {}", ids.len())));
        }
        Ok(Self { ids, words, cue_ids, sample_id })
    }

    pub fn from_words(sample_id: u32, words: &[String], cue_ids: Vec<usize>, vocab: &HashedVocab) -> Result<Self> {
        let ids = words.iter().map(|w| vocab.id(w)).collect();
        Self::new(sample_id, ids, words.to_vec(), cue_ids)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackboneSpec {
    ToyEncoder {
        #[serde(default = "toy::d")]
        d: usize,
        #[serde(default = "toy::vocab_size")]
        vocab_size: u32,
        #[serde(default = "toy::n_layers")]
        n_layers: usize,
        #[serde(default = "toy::n_heads")]
        n_heads: usize,
        #[serde(default = "toy::max_len")]
        max_len: usize,
    },
    Precomputed {
        d: usize,
        path: PathBuf,
    },
}

mod toy {
    pub fn d() -> usize {
        64
    }
    pub fn vocab_size() -> u32 {
        8192
    }
    pub fn n_layers() -> usize {
        2
    }
    pub fn n_heads() -> usize {
        4
    }
    pub fn max_len() -> usize {
        super::MAX_LEN
    }
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self::toy()
    }
}

impl BackboneSpec {
    /// Desk-scale default: 8192 hashed words, width 64, 2 layers of 4 heads.
    pub fn toy() -> Self {
        BackboneSpec::ToyEncoder {
            d: toy::d(),
            vocab_size: toy::vocab_size(),
            n_layers: toy::n_layers(),
            n_heads: toy::n_heads(),
            max_len: toy::max_len(),
        }
    }

    pub fn d(&self) -> usize {
        match self {
            BackboneSpec::ToyEncoder { d, .. } | BackboneSpec::Precomputed { d, .. } => *d,
        }
    }
}

/// Standard deviation of every toy-encoder weight and embedding at
/// initialization (biases start at zero), as in BERT. Small weights make each
/// freshly initialized layer close to the identity on its normalized input;
/// larger ones (Xavier, unit-variance embeddings) let random attention
/// scramble word and position information before any training happens.
pub const TOY_INIT_STD: f64 = 0.02;

/// Post-layer-norm transformer encoder layer.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attention: SelfAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    fn new(store: &mut ParamStore, name: &str, d: usize, n_heads: usize, rng: &mut RngState) -> Result<Self> {
        let grp = ParamGroup::Backbone;
        Ok(Self {
            attention: SelfAttention::new(store, &format!("{name}.self_attn"), d, n_heads, Init::Normal(TOY_INIT_STD), grp, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d, grp)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), d, 4 * d, Init::Normal(TOY_INIT_STD), grp, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d, grp)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let a = self.attention.forward(g, x)?;
        let x = g.add(x, a)?;
        let x = self.norm1.forward(g, x)?;
        let f = self.ff.forward(g, x)?;
        let x = g.add(x, f)?;
        self.norm2.forward(g, x)
    }

    pub fn num_params(&self) -> usize {
        self.attention.num_params() + self.norm1.num_params() + self.ff.num_params() + self.norm2.num_params()
    }
}

/// Learned word and position embeddings followed by encoder layers.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    pub vocab: HashedVocab,
    pub d: usize,
    pub max_len: usize,
    pub word_embeddings: ParamId,
    pub position_embeddings: ParamId,
    pub layers: Vec<EncoderLayer>,
}

impl ToyEncoder {
    pub fn new(
        store: &mut ParamStore,
        d: usize,
        vocab_size: u32,
        n_layers: usize,
        n_heads: usize,
        max_len: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        let vocab = HashedVocab::new(vocab_size)?;
        let grp = ParamGroup::Backbone;
        let word_embeddings =
            store.add("backbone.word_embeddings", Tensor::randn(vec![vocab_size as usize, d], TOY_INIT_STD, rng)?, grp)?;
        let position_embeddings = store.add("backbone.position_embeddings", Tensor::randn(vec![max_len, d], TOY_INIT_STD, rng)?, grp)?;
        let layers = (0..n_layers)
            .map(|l| EncoderLayer::new(store, &format!("backbone.layer{l}"), d, n_heads, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { vocab, d, max_len, word_embeddings, position_embeddings, layers })
    }

    pub fn forward(&self, g: &mut Graph<'_>, seq: &TokenSequence) -> Result<Var> {
        let m = seq.len();
        if m > self.max_len {
            return Err(Error::Backbone(format!("sequence of {m} tokens exceeds max_len {}", self.max_len)));
        }
        if let Some(&bad) = seq.ids.iter().find(|&&id| id >= self.vocab.size) {
            return Err(Error::Backbone(format!("token id {bad} outside vocabulary of {}", self.vocab.size)));
        }
        let rows: Vec<usize> = seq.ids.iter().map(|&id| id as usize).collect();
        let table = g.param(self.word_embeddings);
        let words = g.gather_rows(table, &rows)?;
        let pos_table = g.param(self.position_embeddings);
        let positions = g.gather_rows(pos_table, &(0..m).collect::<Vec<_>>())?;
        let mut x = g.add(words, positions)?;
        for layer in &self.layers {
            x = layer.forward(g, x)?;
        }
        Ok(x)
    }

    pub fn num_params(&self) -> usize {
        (self.vocab.size as usize + self.max_len) * self.d + self.layers.iter().map(EncoderLayer::num_params).sum::<usize>()
    }
}

/// Frozen per-sample embedding matrices.
///
/// File layout (`OAEMB1`), little-endian: 6-byte magic, u32 sample count,
/// then per sample u32 id, u32 m, u32 d and `m * d` f32 values, row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrecomputedEmbeddings {
    pub table: BTreeMap<u32, Tensor>,
}

pub const EMB_MAGIC: &[u8; 6] = b"OAEMB1";

impl PrecomputedEmbeddings {
    pub fn insert(&mut self, id: u32, rows: Tensor) -> Result<()> {
        if rows.rank() != 2 {
            return Err(Error::Backbone(format!("embedding for sample {id} must be a matrix, got {:?}", rows.shape())));
        }
        if let Some(d) = self.d() {
            if rows.shape()[1] != d {
                return Err(Error::Backbone(format!("sample {id} has width {}, table has {d}", rows.shape()[1])));
            }
        }
        self.table.insert(id, rows);
        Ok(())
    }

    /// Common width of all rows; `None` when empty.
    pub fn d(&self) -> Option<usize> {
        self.table.values().next().map(|t| t.shape()[1])
    }

    pub fn get(&self, id: u32) -> Option<&Tensor> {
        self.table.get(&id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(EMB_MAGIC);
        out.extend_from_slice(&(self.table.len() as u32).to_le_bytes());
        for (&id, t) in &self.table {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&(t.shape()[0] as u32).to_le_bytes());
            out.extend_from_slice(&(t.shape()[1] as u32).to_le_bytes());
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    /// `path` only labels errors.
    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes);
        r.expect_magic(EMB_MAGIC)?;
        let count = r.u32("sample count")?;
        let mut out = Self::default();
        for _ in 0..count {
            let at = r.offset();
            let id = r.u32("sample id")?;
            let m = r.u32("row count")? as usize;
            let d = r.u32("width")? as usize;
            if m == 0 || d == 0 {
                return Err(r.error(at, format!("sample {id} has empty shape [{m}, {d}]")));
            }
            if let Some(expected) = out.d().filter(|&e| e != d) {
                return Err(r.error(at, format!("sample {id} has width {d}, earlier samples have {expected}")));
            }
            if out.table.contains_key(&id) {
                return Err(r.error(at, format!("duplicate sample id {id}")));
            }
            let values = r.f32s(m * d, &format!("rows of sample {id}"))?;
            let t = Tensor::new(vec![m, d], values.into_iter().map(f64::from).collect())?;
            out.table.insert(id, t);
        }
        r.finish()?;
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &binio::read_file(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes())
    }
}

/// An instantiated backbone.
#[derive(Debug, Clone)]
pub enum Backbone {
    Toy(ToyEncoder),
    Precomputed { d: usize, embeddings: PrecomputedEmbeddings },
}

impl Backbone {
    /// Registers toy-encoder parameters in `store`, or loads the embedding
    /// file and checks its width.
    pub fn build(spec: &BackboneSpec, store: &mut ParamStore, rng: &mut RngState) -> Result<Self> {
        match spec {
            BackboneSpec::ToyEncoder { d, vocab_size, n_layers, n_heads, max_len } => {
                Ok(Backbone::Toy(ToyEncoder::new(store, *d, *vocab_size, *n_layers, *n_heads, *max_len, rng)?))
            }
            BackboneSpec::Precomputed { d, path } => {
                let embeddings = PrecomputedEmbeddings::load(path)?;
                Self::from_embeddings(*d, embeddings)
            }
        }
    }

    pub fn from_embeddings(d: usize, embeddings: PrecomputedEmbeddings) -> Result<Self> {
        if let Some(found) = embeddings.d().filter(|&w| w != d) {
            return Err(Error::Backbone(format!("embedding file has width {found}, model expects {d}")));
        }
        Ok(Backbone::Precomputed { d, embeddings })
    }

    pub fn d(&self) -> usize {
        match self {
            Backbone::Toy(t) => t.d,
            Backbone::Precomputed { d, .. } => *d,
        }
    }

    pub fn vocab(&self) -> Option<&HashedVocab> {
        match self {
            Backbone::Toy(t) => Some(&t.vocab),
            Backbone::Precomputed { .. } => None,
        }
    }

    /// `[m, d]` embeddings of `seq`. Precomputed rows enter the graph as
    /// constants, so they are never trained.
    pub fn embed(&self, g: &mut Graph<'_>, seq: &TokenSequence, _ctx: &mut Ctx) -> Result<Var> {
        match self {
            Backbone::Toy(t) => t.forward(g, seq),
            Backbone::Precomputed { embeddings, .. } => {
                let rows = embeddings
                    .get(seq.sample_id)
                    .ok_or_else(|| Error::Backbone(format!("no precomputed embedding for sample {}", seq.sample_id)))?;
                if rows.shape()[0] != seq.len() {
                    return Err(Error::Backbone(format!(
                        "sample {} has {} embedding rows for {} tokens",
                        seq.sample_id,
                        rows.shape()[0],
                        seq.len()
                    )));
                }
                Ok(g.constant(rows.clone()))
            }
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Backbone::Toy(t) => t.num_params(),
            Backbone::Precomputed { .. } => 0,
        }
    }
}
