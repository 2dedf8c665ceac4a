use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Token-level confusion counts; the positive class is "in scope".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Confusion {
    /// Counts over positions where `mask` is true.
    pub fn count(pred: &[u8], gold: &[u8], mask: &[bool]) -> Result<Self> {
        if pred.len() != gold.len() || mask.len() != gold.len() {
            return Err(Error::Config(format!(
                "metric inputs differ in length: {} predicted, {} gold, {} mask",
                pred.len(),
                gold.len(),
                mask.len()
            )));
        }
        let mut c = Confusion::default();
        for ((&p, &g), &m) in pred.iter().zip(gold).zip(mask) {
            if !m {
                continue;
            }
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, other: Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// Nothing predicted and nothing to find is a perfect score; otherwise
    /// an empty denominator gives 0.
    pub fn metrics(&self) -> Metrics {
        if self.tp + self.fp + self.fn_ == 0 {
            return Metrics { precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Metrics { precision, recall, f1 }
    }
}

pub fn token_f1(pred: &[u8], gold: &[u8], mask: &[bool]) -> Result<Metrics> {
    Ok(Confusion::count(pred, gold, mask)?.metrics())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_cases() {
        let all = [true; 4];
        assert_eq!(token_f1(&[1, 0, 1, 0], &[1, 0, 1, 0], &all).unwrap().f1, 1.0);
        let m = token_f1(&[1, 1, 1, 0], &[1, 1, 0, 1], &all).unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15 && (m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(token_f1(&[0, 0], &[0, 0], &[true; 2]).unwrap().f1, 1.0);
        assert_eq!(token_f1(&[0, 0], &[1, 0], &[true; 2]).unwrap().precision, 0.0);
        assert_eq!(token_f1(&[1, 0], &[0, 0], &[true; 2]).unwrap().f1, 0.0);
        assert!(token_f1(&[1], &[1, 0], &[true; 2]).is_err());
    }

    #[test]
    fn masked_positions_do_not_count() {
        let m = token_f1(&[1, 1, 0], &[0, 1, 0], &[false, true, true]).unwrap();
        assert_eq!(m.f1, 1.0);
    }
}
