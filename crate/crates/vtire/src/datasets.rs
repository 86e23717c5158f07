//! Dataset construction, manifests, splits and loading.

use crate::rng::{Rng, Stream};

/// Stratified seeded split: per class, a seeded shuffle and a floor split
/// into train/eval. Disjoint and exhaustive. Pure function of
/// `(labels, ratio, seed)`.
pub fn stratified_split(labels: &[usize], ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!(ratio > 0.0 && ratio < 1.0, "split ratio must be in (0,1)");
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for class in 0..classes {
        let mut ids: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if ids.is_empty() {
            continue;
        }
        Rng::new(seed, Stream::Split).derive(class as u64).shuffle(&mut ids);
        let n_train = ((ids.len() as f64) * ratio).floor() as usize;
        train.extend_from_slice(&ids[..n_train]);
        eval.extend_from_slice(&ids[n_train..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}
