use std::collections::VecDeque;

use crate::sim::Observation;

/// Replay record: `return_n` is the discounted reward over the window and
/// `gamma_n` the discount applied to the bootstrap from `next_state`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: usize,
    pub return_n: f64,
    pub next_state: Observation,
    pub done: bool,
    pub gamma_n: f64,
}

/// `(sum_k gamma^k r_k, gamma^m)` over a window of `m` rewards.
pub fn nstep_return(rewards: &[f64], gamma: f64) -> (f64, f64) {
    let mut ret = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        ret += discount * r;
        discount *= gamma;
    }
    (ret, discount)
}

/// Sliding window turning single steps into n-step transitions.
#[derive(Debug, Clone)]
pub struct NStepAccumulator {
    n: usize,
    gamma: f64,
    window: VecDeque<(Observation, usize, f64)>,
}

impl NStepAccumulator {
    pub fn new(n: usize, gamma: f64) -> Self {
        NStepAccumulator {
            n: n.max(1),
            gamma,
            window: VecDeque::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn clear(&mut self) {
        self.window.clear();
    }

    fn emit_front(&mut self, next_state: &Observation, done: bool) -> Transition {
        let rewards: Vec<f64> = self.window.iter().map(|w| w.2).collect();
        let (return_n, gamma_n) = nstep_return(&rewards, self.gamma);
        let (state, action, _) = self.window.pop_front().expect("window not empty");
        Transition {
            state,
            action,
            return_n,
            next_state: next_state.clone(),
            done,
            gamma_n,
        }
    }

    /// Adds one step. Emits the oldest window once `n` steps are buffered;
    /// on `terminal` every buffered step is flushed with `done = true`, on
    /// `truncated` (time limit) they are flushed as bootstrapping transitions.
    pub fn push(
        &mut self,
        state: Observation,
        action: usize,
        reward: f64,
        next_state: &Observation,
        terminal: bool,
        truncated: bool,
    ) -> Vec<Transition> {
        self.window.push_back((state, action, reward));
        let mut out = Vec::new();
        if terminal || truncated {
            while !self.window.is_empty() {
                out.push(self.emit_front(next_state, terminal));
            }
        } else if self.window.len() >= self.n {
            out.push(self.emit_front(next_state, false));
        }
        out
    }
}
