use serde::{Deserialize, Serialize};

use super::NetError;

/// Equally spaced atoms `z_i = v_min + i * (v_max - v_min) / (N - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueSupport {
    pub v_min: f64,
    pub v_max: f64,
    pub n_atoms: usize,
}

impl ValueSupport {
    pub fn new(v_min: f64, v_max: f64, n_atoms: usize) -> Result<Self, NetError> {
        let s = ValueSupport { v_min, v_max, n_atoms };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.v_min.is_finite() && self.v_max.is_finite() && self.v_min < self.v_max) {
            return Err(NetError::InvalidSupport(format!(
                "need finite v_min < v_max, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        if self.n_atoms < 2 {
            return Err(NetError::InvalidSupport(format!("need at least 2 atoms, got {}", self.n_atoms)));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.n_atoms - 1) as f64
    }

    pub fn atom(&self, i: usize) -> f64 {
        self.v_min + i as f64 * self.delta()
    }

    pub fn atoms(&self) -> Vec<f64> {
        (0..self.n_atoms).map(|i| self.atom(i)).collect()
    }
}
