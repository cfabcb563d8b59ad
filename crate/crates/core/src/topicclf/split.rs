use rand::seq::SliceRandom;

use crate::model::Topic;
use crate::rng::keyed_rng;

/// Seeded per-topic shuffle; each topic contributes round(fraction × n) of
/// its samples to the training side. Both index lists come back sorted.
pub fn stratified_split(labels: &[Topic], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for topic in Topic::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == topic).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut keyed_rng(seed, "split", topic.as_str()));
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        let n_train = n_train.min(idx.len());
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_disjoint_and_seeded() {
        let labels: Vec<Topic> = (0..100)
            .map(|i| if i % 4 == 0 { Topic::Laws } else { Topic::Finance })
            .collect();
        let (train, test) = stratified_split(&labels, 0.8, 5);
        assert_eq!(train.len() + test.len(), 100);
        let laws_train = train.iter().filter(|&&i| labels[i] == Topic::Laws).count();
        assert_eq!(laws_train, 20);
        assert!(train.iter().all(|i| !test.contains(i)));
        assert_eq!(stratified_split(&labels, 0.8, 5), (train.clone(), test));
        assert_ne!(stratified_split(&labels, 0.8, 6).0, train);
    }
}
