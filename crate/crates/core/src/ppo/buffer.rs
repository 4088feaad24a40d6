use std::collections::VecDeque;

use rand::Rng;

use super::EpisodeRecord;

/// Bounded FIFO of episode records; the oldest record is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<EpisodeRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, rec: EpisodeRecord) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(rec);
    }

    pub fn extend(&mut self, recs: impl IntoIterator<Item = EpisodeRecord>) {
        for r in recs {
            self.push(r);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.items.iter()
    }

    /// Up to `n` distinct records chosen uniformly.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<&EpisodeRecord> {
        let n = n.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}
