#![allow(dead_code)]

use mzimesh::chip::{ChipRecipe, Dataset, VirtualChip, VirtualChipParams};
use mzimesh::fitting::{split_dataset, Split, SplitSpec};
use mzimesh::mesh::{MeshTopology, VoltageVector};

pub fn chip(recipe: &ChipRecipe) -> VirtualChip {
    let params = VirtualChipParams::from_recipe(MeshTopology::default_3x3(), recipe).unwrap();
    VirtualChip::new(params).unwrap()
}

pub fn ideal(crosstalk: f64) -> ChipRecipe {
    ChipRecipe { quartic_share: 0.0, crosstalk, noise_sigma_db: 0.0, ..ChipRecipe::default() }
}

pub struct Experiment {
    pub topology: MeshTopology,
    pub sweeps: Vec<Dataset>,
    pub split: Split,
}

/// Sweeps of every MZI plus a random dataset split `n_train/n_val/n_test`.
pub fn experiment(recipe: &ChipRecipe, n_train: usize, n_val: usize, n_test: usize) -> Experiment {
    let mut c = chip(recipe);
    let m = c.n_mzis();
    let rest = VoltageVector::zeros(m);
    let sweeps = (1..=m).map(|k| c.sweep_dataset(k, 51, &rest).unwrap()).collect();
    let data = c.random_dataset(n_train + n_test, 7).unwrap();
    let split = split_dataset(&data, &SplitSpec { n_train, n_val, n_test, seed: 11 }).unwrap();
    Experiment { topology: MeshTopology::default_3x3(), sweeps, split }
}
