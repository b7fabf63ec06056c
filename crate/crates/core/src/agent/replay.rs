use rand::Rng;

use super::nstep::Transition;
use super::AgentError;

/// Binary sum tree over a fixed number of leaves.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    base: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(leaves: usize) -> Self {
        let base = leaves.max(1).next_power_of_two();
        SumTree {
            leaves,
            base,
            nodes: vec![0.0; 2 * base],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn leaf(&self, i: usize) -> f64 {
        self.nodes[self.base + i]
    }

    pub fn len(&self) -> usize {
        self.leaves
    }

    pub fn is_empty(&self) -> bool {
        self.leaves == 0
    }

    /// Sets leaf `i`; only its ancestors are recomputed.
    pub fn set(&mut self, i: usize, value: f64) {
        let mut k = self.base + i;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative range contains `prefix` (clamped into the tree).
    pub fn find(&self, prefix: f64) -> usize {
        let mut s = prefix.clamp(0.0, self.total());
        let mut k = 1;
        while k < self.base {
            let left = self.nodes[2 * k];
            if s < left || self.nodes[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                s -= left;
                k = 2 * k + 1;
            }
        }
        k - self.base
    }

    /// Raw node storage (index 1 is the root, leaves start at the returned base).
    pub fn nodes(&self) -> (&[f64], usize) {
        (&self.nodes, self.base)
    }
}

#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    pub transitions: Vec<Transition>,
    pub weights: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Ring buffer with proportional prioritization. Raw priorities are kept
/// alongside the tree, which stores `p_i^alpha`.
#[derive(Debug, Clone)]
pub struct PrioritizedBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    raw: Vec<f64>,
    tree: SumTree,
    alpha: f64,
    priority_eps: f64,
    max_priority: f64,
}

impl PrioritizedBuffer {
    pub fn new(capacity: usize, alpha: f64, priority_eps: f64) -> Self {
        PrioritizedBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            raw: vec![0.0; capacity],
            tree: SumTree::new(capacity),
            alpha,
            priority_eps,
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
        self.capacity
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn priority(&self, i: usize) -> f64 {
        self.raw[i]
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Sampling probability `p_i^alpha / sum_k p_k^alpha`.
    pub fn probability(&self, i: usize) -> f64 {
        self.tree.leaf(i) / self.tree.total()
    }

    fn write_priority(&mut self, i: usize, p: f64) {
        self.raw[i] = p;
        self.tree.set(i, p.powf(self.alpha));
    }

    /// Changes the priority exponent and rebuilds the tree from raw priorities.
    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha;
        for i in 0..self.items.len() {
            self.write_priority(i, self.raw[i]);
        }
    }

    /// Stores a transition with the largest priority seen so far; returns its slot.
    pub fn push(&mut self, t: Transition) -> usize {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[slot] = t;
        }
        self.write_priority(slot, self.max_priority);
        self.next = (self.next + 1) % self.capacity;
        slot
    }

    /// Stratified proportional sampling with max-normalized importance
    /// weights `(size * P_i)^-beta`.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, beta: f64, rng: &mut R) -> Result<SampledBatch, AgentError> {
        let size = self.items.len();
        if size < batch_size || batch_size == 0 {
            return Err(AgentError::BufferTooSmall {
                size,
                needed: batch_size.max(1),
            });
        }
        let total = self.tree.total();
        let segment = total / batch_size as f64;
        let mut indices = Vec::with_capacity(batch_size);
        for k in 0..batch_size {
            let u = (k as f64 + rng.random::<f64>()) * segment;
            indices.push(self.tree.find(u).min(size - 1));
        }
        let probabilities: Vec<f64> = indices.iter().map(|&i| self.probability(i)).collect();
        let raw: Vec<f64> = probabilities.iter().map(|p| (size as f64 * p).powf(-beta)).collect();
        let max = raw.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
        let weights = raw.iter().map(|w| w / max).collect();
        let transitions = indices.iter().map(|&i| self.items[i].clone()).collect();
        Ok(SampledBatch {
            indices,
            transitions,
            weights,
            probabilities,
        })
    }

    /// Sets `p_i = |error_i| + priority_eps` for each sampled index.
    pub fn update_priorities(&mut self, indices: &[usize], errors: &[f64]) -> Result<(), AgentError> {
        if indices.len() != errors.len() {
            return Err(AgentError::LengthMismatch {
                indices: indices.len(),
                errors: errors.len(),
            });
        }
        let size = self.items.len();
        if let Some(&index) = indices.iter().find(|&&i| i >= size) {
            return Err(AgentError::IndexOutOfRange { index, size });
        }
        for (&i, e) in indices.iter().zip(errors) {
            let p = e.abs() + self.priority_eps;
            self.max_priority = self.max_priority.max(p);
            self.write_priority(i, p);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{rng_for, Stream};
    use crate::sim::Observation;

    fn t(i: usize) -> Transition {
        Transition {
            state: Observation(vec![i as f64]),
            action: 0,
            return_n: 0.0,
            next_state: Observation(vec![0.0]),
            done: false,
            gamma_n: 0.99,
        }
    }

    fn filled(n: usize, alpha: f64) -> PrioritizedBuffer {
        let mut b = PrioritizedBuffer::new(n, alpha, 1e-3);
        for i in 0..n {
            b.push(t(i));
        }
        b
    }

    #[test]
    fn equal_priorities_uniform() {
        let b = filled(5, 0.5);
        for i in 0..5 {
            assert!((b.probability(i) - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn two_item_probabilities_and_weights() {
        let mut b = filled(2, 1.0);
        b.update_priorities(&[0, 1], &[3.0 - 1e-3, 1.0 - 1e-3]).unwrap();
        assert!((b.probability(0) - 0.75).abs() < 1e-12);
        assert!((b.probability(1) - 0.25).abs() < 1e-12);
        let mut rng = rng_for(1, Stream::Agent);
        let s = b.sample(2, 1.0, &mut rng).unwrap();
        // stratified: first half of the mass hits item 0, second half spans both
        for (&i, &w) in s.indices.iter().zip(&s.weights) {
            let raw = 1.0 / (2.0 * b.probability(i));
            let expected = raw / if s.indices.contains(&1) { 2.0 } else { 2.0 / 3.0 };
            assert!((w - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_error_keeps_floor_priority() {
        let mut b = filled(3, 0.5);
        b.update_priorities(&[1], &[0.0]).unwrap();
        assert_eq!(b.priority(1), 1e-3);
        assert!(b.probability(1) > 0.0);
    }

    #[test]
    fn out_of_range_updates_fail() {
        let mut b = filled(3, 0.5);
        assert_eq!(
            b.update_priorities(&[3], &[1.0]),
            Err(AgentError::IndexOutOfRange { index: 3, size: 3 })
        );
        assert!(b.update_priorities(&[0, 1], &[1.0]).is_err());
        assert!(matches!(b.sample(4, 0.4, &mut rng_for(1, Stream::Agent)), Err(AgentError::BufferTooSmall { .. })));
    }

    #[test]
    fn new_items_enter_at_max_priority() {
        let mut b = PrioritizedBuffer::new(4, 0.5, 1e-3);
        b.push(t(0));
        b.update_priorities(&[0], &[7.0]).unwrap();
        let slot = b.push(t(1));
        assert_eq!(b.priority(slot), 7.0 + 1e-3);
    }

    #[test]
    fn update_touches_only_ancestors() {
        let mut b = filled(8, 1.0);
        let (before, base) = b.tree().nodes();
        let before = before.to_vec();
        b.update_priorities(&[5], &[2.0]).unwrap();
        let (after, _) = b.tree().nodes();
        let mut ancestors = vec![base + 5];
        let mut k = base + 5;
        while k > 1 {
            k /= 2;
            ancestors.push(k);
        }
        for i in 1..after.len() {
            if !ancestors.contains(&i) {
                assert_eq!(before[i], after[i], "node {i} changed");
            }
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = PrioritizedBuffer::new(3, 0.5, 1e-3);
        for i in 0..5 {
            b.push(t(i));
        }
        assert_eq!(b.len(), 3);
        let firsts: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().state.0[0]).collect();
        assert_eq!(firsts, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn alpha_change_rebuilds_tree() {
        let mut b = filled(2, 1.0);
        b.update_priorities(&[0, 1], &[4.0 - 1e-3, 1.0 - 1e-3]).unwrap();
        b.set_alpha(0.5);
        assert!((b.probability(0) - 2.0 / 3.0).abs() < 1e-12);
    }
}
