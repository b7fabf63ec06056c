use rand::Rng;
use rand_distr::StandardNormal;

/// Noise shaping `f(x) = sign(x) * sqrt(|x|)` used by factorized noisy layers.
pub fn scale_noise(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().sqrt()
    }
}

/// One factorized noise draw for an `n_out x n_in` layer, stored already
/// shaped by [`scale_noise`].
#[derive(Debug, Clone, PartialEq)]
pub struct FactorNoise {
    pub f_in: Vec<f64>,
    pub f_out: Vec<f64>,
}

impl FactorNoise {
    pub fn sample<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| scale_noise(rng.sample::<f64, _>(StandardNormal)))
                .collect()
        };
        let f_in = draw(n_in);
        let f_out = draw(n_out);
        FactorNoise { f_in, f_out }
    }
}

/// Mean and scale parameters of a noisy linear layer, weights row-major
/// `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyLinearParams {
    pub n_in: usize,
    pub n_out: usize,
    pub mu_w: Vec<f64>,
    pub sigma_w: Vec<f64>,
    pub mu_b: Vec<f64>,
    pub sigma_b: Vec<f64>,
    pub sigma_init: f64,
}

impl NoisyLinearParams {
    /// Means uniform in `+-1/sqrt(n_in)`, scales `sigma_init / sqrt(n_in)`.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, sigma_init: f64, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let sigma = sigma_init * bound;
        NoisyLinearParams {
            n_in,
            n_out,
            mu_w: (0..n_in * n_out).map(|_| rng.random_range(-bound..bound)).collect(),
            sigma_w: vec![sigma; n_in * n_out],
            mu_b: (0..n_out).map(|_| rng.random_range(-bound..bound)).collect(),
            sigma_b: vec![sigma; n_out],
            sigma_init,
        }
    }
}

/// `w = mu_w + sigma_w * (f_out f_in^T)`, `b = mu_b + sigma_b * f_out`.
pub fn effective_weights(
    mu_w: &[f64],
    sigma_w: &[f64],
    mu_b: &[f64],
    sigma_b: &[f64],
    noise: &FactorNoise,
) -> (Vec<f64>, Vec<f64>) {
    let n_in = noise.f_in.len();
    let mut w = Vec::with_capacity(mu_w.len());
    for (o, &fo) in noise.f_out.iter().enumerate() {
        let row = o * n_in..(o + 1) * n_in;
        w.extend(
            mu_w[row.clone()]
                .iter()
                .zip(&sigma_w[row])
                .zip(&noise.f_in)
                .map(|((m, s), fi)| m + s * (fo * fi)),
        );
    }
    let b = mu_b
        .iter()
        .zip(sigma_b)
        .zip(&noise.f_out)
        .map(|((m, s), fo)| m + s * fo)
        .collect();
    (w, b)
}

/// Draws fresh factorized noise and returns the effective weights and biases.
pub fn noisy_sample<R: Rng + ?Sized>(params: &NoisyLinearParams, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let noise = FactorNoise::sample(params.n_in, params.n_out, rng);
    effective_weights(&params.mu_w, &params.sigma_w, &params.mu_b, &params.sigma_b, &noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{rng_for, Stream};

    #[test]
    fn scale_noise_values() {
        assert_eq!(scale_noise(4.0), 2.0);
        assert_eq!(scale_noise(-9.0), -3.0);
        assert_eq!(scale_noise(0.0), 0.0);
    }

    #[test]
    fn zero_sigma_gives_mean_weights() {
        let mut rng = rng_for(1, Stream::Agent);
        let mut p = NoisyLinearParams::init(3, 2, 0.5, &mut rng);
        p.sigma_w.iter_mut().for_each(|s| *s = 0.0);
        p.sigma_b.iter_mut().for_each(|s| *s = 0.0);
        let (w, b) = noisy_sample(&p, &mut rng);
        assert_eq!(w, p.mu_w);
        assert_eq!(b, p.mu_b);
    }

    #[test]
    fn effective_weights_are_unbiased() {
        let mut rng = rng_for(2, Stream::Agent);
        let p = NoisyLinearParams::init(3, 2, 0.5, &mut rng);
        let draws = 100_000;
        let mut sum = vec![0.0; 6];
        let mut sq = vec![0.0; 6];
        for _ in 0..draws {
            let (w, _) = noisy_sample(&p, &mut rng);
            for i in 0..6 {
                sum[i] += w[i];
                sq[i] += w[i] * w[i];
            }
        }
        for i in 0..6 {
            let mean = sum[i] / draws as f64;
            let var = sq[i] / draws as f64 - mean * mean;
            let se = (var / draws as f64).sqrt();
            assert!((mean - p.mu_w[i]).abs() < 3.0 * se, "w[{i}] mean {mean} vs {}", p.mu_w[i]);
        }
    }
}
