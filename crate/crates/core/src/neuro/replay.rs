use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NeuroError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO ring with seeded uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Draws `batch_size` distinct transitions uniformly at random.
    pub fn sample(&mut self, batch_size: usize) -> Result<Vec<&Transition>, NeuroError> {
        if batch_size == 0 || batch_size > self.items.len() {
            return Err(NeuroError::InsufficientSamples { requested: batch_size, available: self.items.len() });
        }
        let picks = rand::seq::index::sample(&mut self.rng, self.items.len(), batch_size);
        Ok(picks.into_iter().map(|i| &self.items[i]).collect())
    }

    /// Generator state, for reproducing a sampling sequence.
    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(r: f64) -> Transition {
        Transition { obs: vec![r], action: vec![0.0], reward: r, next_obs: vec![r], done: false }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3, 0);
        for r in 0..5 {
            b.push(tr(r as f64));
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut a = ReplayBuffer::new(100, 42);
        for r in 0..50 {
            a.push(tr(r as f64));
        }
        let mut b = a.clone();
        let sa: Vec<f64> = a.sample(10).unwrap().iter().map(|t| t.reward).collect();
        let sb: Vec<f64> = b.sample(10).unwrap().iter().map(|t| t.reward).collect();
        assert_eq!(sa, sb);
        let mut distinct = sa.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn oversampling_fails() {
        let mut b = ReplayBuffer::new(10, 1);
        b.push(tr(1.0));
        assert!(matches!(b.sample(2), Err(NeuroError::InsufficientSamples { .. })));
    }
}
