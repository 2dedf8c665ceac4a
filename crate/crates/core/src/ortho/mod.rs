//! Orthogonal Attention: per-(context word, query word) keys and values,
//! per-query-word queries, summed over query words for every context word.
//!
//! A head is parameterized by two functions. `alpha(C, Q)` produces the
//! `[m, n, d_k]` key and value tensors (two independent instances), and
//! `beta(C, Q)` produces the `[n, d_k]` query vectors. The four variants
//! differ only in how these are built:
//!
//! | variant | alpha                      | beta                                   |
//! |---------|----------------------------|----------------------------------------|
//! | `Em`    | elementwise multiplication | query only                             |
//! | `Emb`   | elementwise multiplication | query x dot-product context summary    |
//! | `C`     | query-generated 1-D conv   | query only                             |
//! | `Ca`    | query-generated 1-D conv   | conv over query with summary filters   |

mod block;
mod head;
mod variants;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use block::{BlockTrace, OAEncoderBlock, OAMultihead};
pub use head::{HeadTrace, OAHead};
pub use variants::{Alpha, Beta};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Em,
    Emb,
    C,
    Ca,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Em, Variant::Emb, Variant::C, Variant::Ca];

    pub fn is_convolutional(self) -> bool {
        matches!(self, Variant::C | Variant::Ca)
    }

    /// Display name, e.g. `OA-EMB`.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Em => "OA-EM",
            Variant::Emb => "OA-EMB",
            Variant::C => "OA-C",
            Variant::Ca => "OA-CA",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Em => "em",
            Variant::Emb => "emb",
            Variant::C => "c",
            Variant::Ca => "ca",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().trim_start_matches("oa-") {
            "em" => Ok(Variant::Em),
            "emb" => Ok(Variant::Emb),
            "c" => Ok(Variant::C),
            "ca" => Ok(Variant::Ca),
            other => Err(Error::Config(format!("unknown variant {other:?} (expected em, emb, c or ca)"))),
        }
    }
}

/// Hyperparameters shared by every Orthogonal Attention layer of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OAConfig {
    pub d: usize,
    pub n_heads: usize,
    pub variant: Variant,
    /// Applied to the attention weights of every head.
    pub dropout: f64,
    /// Hidden width of the block's feed-forward layers.
    pub d_ff: usize,
}

impl OAConfig {
    pub const DEFAULT_DROPOUT: f64 = 0.3;

    pub fn new(d: usize, n_heads: usize, variant: Variant) -> Result<Self> {
        let cfg = Self { d, n_heads, variant, dropout: Self::DEFAULT_DROPOUT, d_ff: d };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d == 0 || !self.d.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!("d = {} is not divisible by n_heads = {}", self.d, self.n_heads)));
        }
        if self.variant.is_convolutional() && self.sqrt_dk().is_none() {
            return Err(Error::Config(format!(
                "variant {} needs d_k to be a perfect square, got d_k = {}",
                self.variant.label(),
                self.d_k()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be positive".into()));
        }
        Ok(())
    }

    /// The most heads, up to 12, leaving a perfect-square head width, so
    /// that every variant accepts it: 4 at d = 64, 12 at d = 768.
    pub fn default_heads(d: usize) -> Option<usize> {
        (1..=12.min(d)).rev().find(|&h| {
            let dk = d / h;
            let r = (dk as f64).sqrt().round() as usize;
            d.is_multiple_of(h) && r * r == dk
        })
    }

    pub fn d_k(&self) -> usize {
        self.d / self.n_heads
    }

    /// Integer square root of `d_k` when it is a perfect square.
    pub fn sqrt_dk(&self) -> Option<usize> {
        let dk = self.d_k();
        let r = (dk as f64).sqrt().round() as usize;
        (r * r == dk).then_some(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(OAConfig::new(64, 4, Variant::C).is_ok());
        assert!(OAConfig::new(768, 12, Variant::Ca).is_ok());
        assert!(OAConfig::new(64, 5, Variant::Em).is_err());
        // d_k = 8 is fine for multiplicative variants but not for convolutions
        assert!(OAConfig::new(64, 8, Variant::Em).is_ok());
        assert!(OAConfig::new(64, 8, Variant::C).is_err());
        let mut cfg = OAConfig::new(64, 4, Variant::Em).unwrap();
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
        }
        assert!("xyz".parse::<Variant>().is_err());
    }
}
