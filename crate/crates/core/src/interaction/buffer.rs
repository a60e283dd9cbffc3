use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use super::{Aot, Transition};
use crate::{rng, Error, Result};

pub const BUFFER_CAPACITY: usize = 6400;
pub const POSITION_BATCH: usize = 16;
pub const DIRECTION_BATCH: usize = 24;

/// Sampled training batch. `indices` point into the buffer at sampling time.
#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub items: Vec<Arc<Transition>>,
    /// Some stratum was empty; the batch was filled from the others.
    pub degenerate: bool,
}

/// FIFO transition store. Wrap in a lock to share between collection workers
/// and the trainer; a transition is visible only once `push` returns.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    entries: VecDeque<Arc<Transition>>,
    capacity: usize,
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::new(BUFFER_CAPACITY)
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity.min(BUFFER_CAPACITY)),
            capacity: capacity.max(1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: impl Into<Arc<Transition>>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t.into());
    }

    pub fn extend<I: IntoIterator<Item = Transition>>(&mut self, it: I) {
        for t in it {
            self.push(t);
        }
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Arc<Transition>> {
        self.entries.iter()
    }

    /// Grasp steps split by position label, positives first.
    pub fn sample_position_batch(&self, n: usize, seed: u64) -> Result<Batch> {
        let strata = self.strata(2, |t| {
            t.is_grasp()
                .then_some(t.position_label)
                .flatten()
                .map(|positive| if positive { 0 } else { 1 })
        });
        self.sample(strata, n, seed)
    }

    /// Move steps split by outcome class in the order +1, -1, 0.
    pub fn sample_direction_batch(&self, n: usize, seed: u64) -> Result<Batch> {
        let strata = self.strata(3, |t| {
            (!t.is_grasp()).then(|| match t.outcome.r_aot {
                Aot::Forward => 0,
                Aot::Backward => 1,
                Aot::Still => 2,
            })
        });
        self.sample(strata, n, seed)
    }

    fn strata(&self, k: usize, class: impl Fn(&Transition) -> Option<usize>) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); k];
        for (i, t) in self.entries.iter().enumerate() {
            if let Some(c) = class(t) {
                out[c].push(i);
            }
        }
        out
    }

    fn sample(&self, strata: Vec<Vec<usize>>, n: usize, seed: u64) -> Result<Batch> {
        if strata.iter().all(Vec::is_empty) {
            return Err(Error::EmptyBuffer);
        }
        let mut rng = rng::from_seed(seed);
        let degenerate = strata.iter().any(Vec::is_empty);
        let mut indices = Vec::with_capacity(n);
        if degenerate {
            let pool: Vec<usize> = strata.concat();
            for _ in 0..n {
                indices.push(pool[rng.random_range(0..pool.len())]);
            }
        } else {
            let k = strata.len();
            for (s, members) in strata.iter().enumerate() {
                // remainder goes to the leading strata
                let count = n / k + usize::from(s < n % k);
                for _ in 0..count {
                    indices.push(members[rng.random_range(0..members.len())]);
                }
            }
        }
        let items = indices.iter().map(|&i| self.entries[i].clone()).collect();
        Ok(Batch {
            indices,
            items,
            degenerate,
        })
    }
}
