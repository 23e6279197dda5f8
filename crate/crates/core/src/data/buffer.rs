//! FIFO replay buffer with uniform without-replacement sampling.

use rand::Rng;

use crate::error::{Error, Result};

use super::{Trajectory, Transition};

/// Bounded FIFO transition store. The capacity-unbounded constructor backs
/// the expert/batch datasets; the bounded one backs rollout samples.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Argument("replay buffer capacity must be positive".into()));
        }
        Ok(ReplayBuffer { capacity, storage: Vec::new(), cursor: 0 })
    }

    /// A buffer that never evicts.
    pub fn unbounded() -> Self {
        ReplayBuffer { capacity: usize::MAX, storage: Vec::new(), cursor: 0 }
    }

    /// Build an unbounded buffer holding every transition of the trajectories.
    pub fn from_trajectories(trajectories: &[Trajectory]) -> Self {
        let mut buf = Self::unbounded();
        for traj in trajectories {
            for t in &traj.transitions {
                buf.push(t.clone());
            }
        }
        buf
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Append one transition, evicting the oldest when full.
    pub fn push(&mut self, transition: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(transition);
        } else {
            self.storage[self.cursor] = transition;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Uniform sample of `n` distinct stored transitions (partial
    /// Fisher-Yates over indices).
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.storage.is_empty() {
            return Err(Error::State("sample from empty replay buffer".into()));
        }
        if n > self.storage.len() {
            return Err(Error::State(format!(
                "requested {n} samples from buffer of size {}",
                self.storage.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.storage.len()).collect();
        for i in 0..n {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        Ok(idx[..n].iter().map(|&i| &self.storage[i]).collect())
    }

    /// Borrow a stored transition by position (insertion order wraps under FIFO).
    pub fn get(&self, i: usize) -> &Transition {
        &self.storage[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    pub(crate) fn cursor(&self) -> usize {
        self.cursor
    }

    pub(crate) fn restore(capacity: usize, storage: Vec<Transition>, cursor: usize) -> Self {
        ReplayBuffer { capacity, storage, cursor }
    }
}
