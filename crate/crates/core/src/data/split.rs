//! Patient-level train/test splitting.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

use super::Trajectory;

/// Split trajectories at patient granularity: `floor(ratio · n)` patients go
/// to train, the rest to test. Deterministic under the seed; no patient ever
/// appears in both sets.
pub fn split_train_test(
    trajectories: Vec<Trajectory>,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Argument(format!("split ratio {ratio} not in (0, 1)")));
    }
    let n = trajectories.len();
    let n_train = ((ratio * n as f64).floor() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let train_idx: std::collections::BTreeSet<usize> = order[..n_train].iter().copied().collect();

    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (i, traj) in trajectories.into_iter().enumerate() {
        if train_idx.contains(&i) {
            train.push(traj);
        } else {
            test.push(traj);
        }
    }
    Ok((train, test))
}
