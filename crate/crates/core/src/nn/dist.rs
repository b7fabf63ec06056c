use super::{NetError, ValueSupport};

/// Per-action categorical distributions, row-major `A x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionValueDistribution {
    pub n_actions: usize,
    pub n_atoms: usize,
    pub probs: Vec<f64>,
}

impl ActionValueDistribution {
    pub fn row(&self, action: usize) -> &[f64] {
        &self.probs[action * self.n_atoms..(action + 1) * self.n_atoms]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.n_atoms)
    }

    pub fn expected_values(&self, support: &ValueSupport) -> Vec<f64> {
        self.rows().map(|r| expected_value(r, support)).collect()
    }
}

pub fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

/// Combines a value stream (`N`) with advantage logits (`A x N`):
/// `q[a][j] = v[j] + adv[a][j] - mean_a adv[a][j]`.
pub fn dueling_aggregate(value: &[f64], advantage: &[f64], n_actions: usize) -> Result<Vec<f64>, NetError> {
    let n = value.len();
    if n_actions == 0 || advantage.len() != n_actions * n {
        return Err(NetError::ShapeMismatch(format!(
            "advantage has {} entries, expected {} x {}",
            advantage.len(),
            n_actions,
            n
        )));
    }
    let mut out = vec![0.0; n_actions * n];
    dueling_into(value, advantage, n_actions, &mut out);
    Ok(out)
}

pub(crate) fn dueling_into(value: &[f64], advantage: &[f64], n_actions: usize, out: &mut [f64]) {
    let n = value.len();
    let inv = 1.0 / n_actions as f64;
    for j in 0..n {
        let mean = (0..n_actions).map(|a| advantage[a * n + j]).sum::<f64>() * inv;
        for a in 0..n_actions {
            out[a * n + j] = value[j] + (advantage[a * n + j] - mean);
        }
    }
}

pub fn expected_value(row: &[f64], support: &ValueSupport) -> f64 {
    row.iter().enumerate().map(|(i, &p)| p * support.atom(i)).sum()
}

/// Categorical projection of `reward_n + gamma_n * Z` (or just `reward_n` when
/// `done`) onto the support. Each atom's mass is split linearly between the
/// two neighbours of its clamped target.
pub fn project_distribution(
    reward_n: f64,
    done: bool,
    gamma_n: f64,
    next: &[f64],
    support: &ValueSupport,
) -> Vec<f64> {
    let n = support.n_atoms;
    let delta = support.delta();
    let mut out = vec![0.0; n];
    for (j, &p) in next.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let bootstrap = if done { 0.0 } else { gamma_n * support.atom(j) };
        let tz = (reward_n + bootstrap).clamp(support.v_min, support.v_max);
        let b = ((tz - support.v_min) / delta).clamp(0.0, (n - 1) as f64);
        let lo = b.floor() as usize;
        let hi = b.ceil() as usize;
        if lo == hi {
            out[lo] += p;
        } else {
            out[lo] += p * (hi as f64 - b);
            out[hi] += p * (b - lo as f64);
        }
    }
    out
}

/// `-sum target * log softmax(logits)`.
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> f64 {
    let mut ls = vec![0.0; logits.len()];
    log_softmax(logits, &mut ls);
    -target.iter().zip(&ls).map(|(t, l)| t * l).sum::<f64>()
}

/// Gradient of [`cross_entropy`] with respect to the logits:
/// `softmax(logits) - target`.
pub fn cross_entropy_grad(logits: &[f64], target: &[f64]) -> Result<Vec<f64>, NetError> {
    if logits.len() != target.len() {
        return Err(NetError::DimensionMismatch {
            expected: logits.len(),
            got: target.len(),
        });
    }
    let sum: f64 = target.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || target.iter().any(|&t| !(t >= 0.0)) {
        return Err(NetError::NotADistribution(sum));
    }
    let mut g = vec![0.0; logits.len()];
    softmax(logits, &mut g);
    for (gi, t) in g.iter_mut().zip(target) {
        *gi -= t;
    }
    Ok(g)
}
