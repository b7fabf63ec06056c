/// Round-robin signal plan: decision `k` serves road `k mod R`.
pub fn fixed_time_policy(decision_index: usize, roads: usize) -> usize {
    decision_index % roads
}

/// Fixed-time controller with equal green shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedTime {
    pub roads: usize,
}

impl FixedTime {
    pub fn new(roads: usize) -> Self {
        FixedTime { roads }
    }
}
