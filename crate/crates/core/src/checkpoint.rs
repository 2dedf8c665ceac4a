//! Named-tensor checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "OACKPT1"
//! u32 meta_len, meta_len bytes of JSON metadata
//! u32 tensor_count
//! per tensor: u32 name_len, name (UTF-8), u32 ndim, ndim x u64 dims, f64 data
//! ```
//!
//! The metadata carries whatever is needed to rebuild the model the tensors
//! belong to (architecture config, preprocessing mode).

use std::path::Path;

use serde_json::Value;

use crate::binio::{self, Reader};
use crate::tensor::{ParamStore, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 7] = b"OACKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Every parameter of `store`, in registration order.
    pub fn from_store(store: &ParamStore, meta: Value) -> Self {
        let tensors = store.ids().map(|id| (store.name(id).to_string(), store.get(id).clone())).collect();
        Self { meta, tensors }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("JSON values always serialize");
        let mut out = Vec::with_capacity(64 + self.tensors.iter().map(|(_, t)| t.numel() * 8).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// `path` only labels errors.
    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes);
        r.expect_magic(MAGIC)?;
        let meta_len = r.u32("metadata length")? as usize;
        let at = r.offset();
        let meta: Value = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| r.error(at, format!("metadata is not JSON: {e}")))?;
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = r.utf8(name_len, "tensor name")?.to_string();
            let at = r.offset();
            let ndim = r.u32("rank")? as usize;
            let shape = (0..ndim).map(|_| r.u64("dimension").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.error(at, "shape overflows"))?;
            let data = r.f64s(numel, &format!("data of {name}"))?;
            let t = Tensor::new(shape, data).map_err(|e| r.error(at, format!("{name}: {e}")))?;
            tensors.push((name, t));
        }
        r.finish()?;
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &binio::read_file(path)?)
    }

    /// Copies every tensor into the same-named parameter of `store`. The
    /// names must match exactly, in both directions, and shapes must agree.
    pub fn apply(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model has {} parameters",
                self.tensors.len(),
                store.len()
            )));
        }
        for (name, t) in &self.tensors {
            let id = store.lookup(name).ok_or_else(|| Error::Config(format!("checkpoint tensor {name} is not a model parameter")))?;
            store.set(id, t.clone())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamGroup, RngState};
    use serde_json::json;

    fn sample_store() -> ParamStore {
        let mut rng = RngState::new(5);
        let mut store = ParamStore::new();
        store.add("a.weight", Tensor::randn(vec![3, 4], 1.0, &mut rng).unwrap(), ParamGroup::Head).unwrap();
        store.add("a.bias", Tensor::randn(vec![4], 1.0, &mut rng).unwrap(), ParamGroup::Head).unwrap();
        store.add("emb", Tensor::randn(vec![2, 2, 2], 1.0, &mut rng).unwrap(), ParamGroup::Backbone).unwrap();
        store
    }

    #[test]
    fn round_trip_is_bitwise() {
        let store = sample_store();
        let ckpt = Checkpoint::from_store(&store, json!({"variant": "emb", "d": 64}));
        let bytes = ckpt.to_bytes();
        assert_eq!(&bytes[..7], b"OACKPT1");
        let back = Checkpoint::from_bytes(Path::new("x"), &bytes).unwrap();
        assert_eq!(back, ckpt);

        let mut other = sample_store();
        for id in other.ids().collect::<Vec<_>>() {
            other.get_mut(id).data_mut().fill(0.0);
        }
        back.apply(&mut other).unwrap();
        for id in store.ids() {
            assert_eq!(store.get(id), other.get(id));
        }
    }

    #[test]
    fn errors_name_the_byte_offset() {
        let bytes = Checkpoint::from_store(&sample_store(), json!({})).to_bytes();
        let err = Checkpoint::from_bytes(Path::new("m.ckpt"), &bytes[..bytes.len() - 3]).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format { .. }), "{msg}");
        assert!(msg.contains("byte offset"), "{msg}");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(Path::new("m"), &bad), Err(Error::Format { offset: 0, .. })));

        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(Path::new("m"), &extra).is_err());
    }

    #[test]
    fn apply_rejects_mismatched_models() {
        let ckpt = Checkpoint::from_store(&sample_store(), json!({}));
        let mut rng = RngState::new(1);
        let mut store = ParamStore::new();
        store.add("a.weight", Tensor::randn(vec![4, 3], 1.0, &mut rng).unwrap(), ParamGroup::Head).unwrap();
        store.add("a.bias", Tensor::zeros(vec![4]).unwrap(), ParamGroup::Head).unwrap();
        store.add("emb", Tensor::zeros(vec![2, 2, 2]).unwrap(), ParamGroup::Backbone).unwrap();
        assert!(ckpt.apply(&mut store).is_err());
    }
}
