//! Proportional prioritized replay backed by a sum tree.

use rand::Rng as _;

use crate::rng::Rng;

/// Binary tree over leaf priorities whose internal nodes hold subtree sums.
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "sum tree capacity must be positive");
        let leaves = capacity.next_power_of_two();
        Self {
            capacity,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    fn leaves(&self) -> usize {
        self.nodes.len() / 2
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves() + i]
    }

    pub fn set(&mut self, i: usize, priority: f64) {
        debug_assert!(i < self.capacity);
        debug_assert!(priority >= 0.0 && priority.is_finite());
        let mut n = self.leaves() + i;
        self.nodes[n] = priority;
        while n > 1 {
            n /= 2;
            self.nodes[n] = self.nodes[2 * n] + self.nodes[2 * n + 1];
        }
    }

    /// Leaf whose cumulative-priority interval contains `mass`, for
    /// `0 <= mass < total()`. Leaves with zero priority are never returned.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut n = 1;
        let leaves = self.leaves();
        while n < leaves {
            let left = self.nodes[2 * n];
            if mass < left || self.nodes[2 * n + 1] <= 0.0 {
                n *= 2;
            } else {
                mass -= left;
                n = 2 * n + 1;
            }
        }
        // Rounding can land on an empty leaf at the right edge.
        let mut i = n - leaves;
        while self.get(i) <= 0.0 && i > 0 {
            i -= 1;
        }
        i
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: u32,
    pub action: u8,
    pub reward: f64,
    pub next: u32,
    pub done: bool,
}

/// Ring buffer of transitions. Sampling probability of slot `i` is
/// `p_i / sum p`, with `p_i = (|td_i| + eps)^alpha`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    tree: SumTree,
    next: usize,
    alpha: f64,
    eps: f64,
    max_priority: f64,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub indices: Vec<usize>,
    pub transitions: Vec<Transition>,
    /// Importance-sampling weights normalized by their batch maximum.
    pub weights: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, alpha: f64, eps: f64) -> Self {
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            tree: SumTree::new(capacity),
            next: 0,
            alpha,
            eps,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.tree.capacity()
    }

    /// Stores a transition with the largest priority seen so far.
    pub fn push(&mut self, t: Transition) {
        let slot = self.next;
        if slot < self.items.len() {
            self.items[slot] = t;
        } else {
            self.items.push(t);
        }
        self.tree.set(slot, self.max_priority);
        self.next = (slot + 1) % self.capacity();
    }

    /// Priority of slot `i` (already raised to `alpha`).
    pub fn priority(&self, i: usize) -> f64 {
        self.tree.get(i)
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.tree.get(i) / self.tree.total()
    }

    pub fn set_td_error(&mut self, i: usize, td: f64) {
        let p = (td.abs() + self.eps).powf(self.alpha);
        self.max_priority = self.max_priority.max(p);
        self.tree.set(i, p);
    }

    pub fn sample_index(&self, rng: &mut Rng) -> usize {
        let mass = rng.random::<f64>() * self.tree.total();
        self.tree.find(mass)
    }

    /// Draws `batch` slots independently with replacement.
    pub fn sample(&self, batch: usize, beta: f64, rng: &mut Rng) -> Sample {
        assert!(!self.is_empty(), "sampling from an empty buffer");
        let n = self.len() as f64;
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let i = self.sample_index(rng);
            indices.push(i);
            weights.push((n * self.probability(i)).powf(-beta));
        }
        let max = weights.iter().copied().fold(0.0, f64::max);
        for w in &mut weights {
            *w /= max;
        }
        let transitions = indices.iter().map(|&i| self.items[i]).collect();
        Sample {
            indices,
            transitions,
            weights,
        }
    }
}
