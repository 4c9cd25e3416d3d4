use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chip::{Dataset, Sample};
use crate::error::{Error, Result};

/// `n_train` includes the `n_val` validation samples carved out of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { n_train: 4400, n_val: 700, n_test: 700, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// Training samples excluding validation.
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Split {
    /// Train plus validation, the full training pool used by the physics
    /// models.
    pub fn training_pool(&self) -> Vec<Sample> {
        self.train.samples.iter().chain(&self.validation.samples).cloned().collect()
    }
}

/// Deterministic shuffled partition. The training pool is the first `n_train`
/// shuffled samples, the test set the next `n_test`; validation is the tail of
/// the training pool.
pub fn split_dataset(d: &Dataset, s: &SplitSpec) -> Result<Split> {
    if s.n_train + s.n_test > d.len() {
        return Err(Error::Size(format!("split needs {} + {} samples, dataset has {}", s.n_train, s.n_test, d.len())));
    }
    if s.n_val > s.n_train {
        return Err(Error::Size(format!("validation size {} exceeds training size {}", s.n_val, s.n_train)));
    }
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(s.seed));
    let take = |r: std::ops::Range<usize>| idx[r].iter().map(|&k| d.samples[k].clone()).collect::<Vec<_>>();
    let n_fit = s.n_train - s.n_val;
    Ok(Split {
        train: d.subset(take(0..n_fit), "train", s.seed),
        validation: d.subset(take(n_fit..s.n_train), "validation", s.seed),
        test: d.subset(take(s.n_train..s.n_train + s.n_test), "test", s.seed),
    })
}
