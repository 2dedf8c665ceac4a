use rand::seq::SliceRandom;

use super::{CorpusError, ScopeSample, Split};
use crate::tensor::RngState;

/// Number of seeded repetitions over a fixed train/dev/test split.
pub const SHERLOCK_REPEATS: usize = 10;

/// Sample indices of one run; all three sets are disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` folds over `n` samples. Each fold's test set is one of `k` disjoint
/// chunks of a seeded shuffle; its validation set, the same size as the test
/// set, is sampled from the other chunks and removed from training.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>, CorpusError> {
    if k < 2 {
        return Err(CorpusError::Split(format!("k must be at least 2, got {k}")));
    }
    // the largest test chunk plus an equally large validation set must
    // leave at least one training sample
    if n < 2 * n.div_ceil(k) + 1 {
        return Err(CorpusError::Split(format!("k = {k} leaves no training samples out of {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngState::new(seed));
    let bounds: Vec<usize> = (0..=k).map(|f| f * n / k).collect();
    (0..k)
        .map(|f| {
            let mut test = order[bounds[f]..bounds[f + 1]].to_vec();
            let mut rest: Vec<usize> = order[..bounds[f]].iter().chain(&order[bounds[f + 1]..]).copied().collect();
            rest.shuffle(&mut RngState::for_stream(seed, f as u64 + 1));
            let mut val = rest.split_off(rest.len() - test.len());
            let mut train = rest;
            train.sort_unstable();
            val.sort_unstable();
            test.sort_unstable();
            Ok(Fold { train, val, test })
        })
        .collect()
}

/// The fixed partition carried by the samples' `split` tags; dev is the
/// validation set.
pub fn sherlock_split(samples: &[ScopeSample]) -> Result<Fold, CorpusError> {
    let mut fold = Fold { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (i, s) in samples.iter().enumerate() {
        match s.split {
            Some(Split::Train) => fold.train.push(i),
            Some(Split::Dev) => fold.val.push(i),
            Some(Split::Test) => fold.test.push(i),
            None => return Err(CorpusError::Split(format!("sample {} has no split tag", s.id))),
        }
    }
    for (name, part) in [("train", &fold.train), ("dev", &fold.val), ("test", &fold.test)] {
        if part.is_empty() {
            return Err(CorpusError::Split(format!("fixed split has no {name} samples")));
        }
    }
    Ok(fold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uneven_sizes_cover_everything() {
        let folds = kfold_split(23, 4, 9).unwrap();
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.val.len(), f.test.len());
            assert_eq!(f.train.len() + f.val.len() + f.test.len(), 23);
        }
    }

    #[test]
    fn rejects_bad_k() {
        assert!(kfold_split(100, 1, 0).is_err());
        assert!(kfold_split(4, 3, 0).is_err());
        assert!(kfold_split(19, 10, 0).is_ok());
        // test and validation halves would leave nothing to train on
        assert!(kfold_split(20, 2, 0).is_err());
        assert!(kfold_split(37, 2, 0).is_err());
        assert!(kfold_split(7, 3, 0).is_ok());
    }
}
