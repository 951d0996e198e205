use alloc::vec::Vec;

use rand::Rng;

use super::state::{RoutingState, ACTIONS};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: RoutingState,
    pub action: usize,
    pub reward: f64,
    pub next_state: RoutingState,
    /// Valid actions in `next_state`; ignored for terminal transitions.
    pub next_mask: [bool; ACTIONS],
    pub terminal: bool,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { capacity, items: Vec::with_capacity(capacity), head: 0 }
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

    /// Evicts the oldest transition once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (a, b) = self.items.split_at(self.head);
        b.iter().chain(a.iter())
    }

    /// `batch` distinct transitions drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        let batch = batch.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), batch).into_iter().map(|i| &self.items[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(r: f64) -> Transition {
        Transition {
            state: RoutingState::ZERO,
            action: 0,
            reward: r,
            next_state: RoutingState::ZERO,
            next_mask: [true; 4],
            terminal: false,
        }
    }

    #[test]
    fn evicts_fifo_at_capacity() {
        let mut m = ReplayMemory::new(2000);
        for k in 0..2500 {
            m.push(t(k as f64));
            assert!(m.len() <= 2000);
        }
        let rewards: Vec<f64> = m.iter().map(|x| x.reward).collect();
        assert_eq!(rewards.len(), 2000);
        assert_eq!(rewards[0], 500.0);
        assert_eq!(rewards[1999], 2499.0);
        assert!(rewards.windows(2).all(|w| w[1] == w[0] + 1.0));
    }

    #[test]
    fn batch_has_no_repeats() {
        let mut m = ReplayMemory::new(300);
        for k in 0..300 {
            m.push(t(k as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let mut got: Vec<u64> = m.sample(128, &mut rng).iter().map(|x| x.reward as u64).collect();
            got.sort_unstable();
            got.dedup();
            assert_eq!(got.len(), 128);
        }
    }
}
