use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dist::{dueling_into, softmax};
use super::noisy::{effective_weights, FactorNoise};
use super::{ActionValueDistribution, NetError, ValueSupport};

/// Architecture of a Q network. `support = None` selects a scalar Q head
/// (one raw output per action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub n_actions: usize,
    pub support: Option<ValueSupport>,
    pub dueling: bool,
    pub noisy: bool,
    pub sigma_init: f64,
}

impl NetSpec {
    pub fn n_atoms(&self) -> usize {
        self.support.map_or(1, |s| s.n_atoms)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.n_actions == 0 || self.hidden.contains(&0) {
            return Err(NetError::InvalidSpec("input_dim, hidden widths and n_actions must be >= 1".into()));
        }
        if let Some(s) = &self.support {
            s.validate()?;
        }
        if !(self.sigma_init.is_finite() && self.sigma_init >= 0.0) {
            return Err(NetError::InvalidSpec("sigma_init must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Layer shapes in parameter order: trunk, then value and advantage heads
    /// (dueling) or the single Q head.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        let out = self.n_actions * self.n_atoms();
        if self.dueling {
            dims.push((prev, self.n_atoms()));
            dims.push((prev, out));
        } else {
            dims.push((prev, out));
        }
        let mut offset = 0;
        dims.into_iter()
            .map(|(n_in, n_out)| {
                let shape = LayerShape {
                    n_in,
                    n_out,
                    noisy: self.noisy,
                    offset,
                };
                offset += shape.len();
                shape
            })
            .collect()
    }
}

/// Position of one linear layer inside the flat parameter vector. Each layer
/// stores `w_mu (n_out x n_in)`, `b_mu (n_out)` and, when noisy,
/// `w_sigma`, `b_sigma` of the same shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub n_in: usize,
    pub n_out: usize,
    pub noisy: bool,
    pub offset: usize,
}

impl LayerShape {
    fn block(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }

    pub fn len(&self) -> usize {
        if self.noisy {
            2 * self.block()
        } else {
            self.block()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn w_mu(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.n_in * self.n_out
    }

    pub fn b_mu(&self) -> std::ops::Range<usize> {
        let s = self.offset + self.n_in * self.n_out;
        s..s + self.n_out
    }

    pub fn w_sigma(&self) -> std::ops::Range<usize> {
        let s = self.offset + self.block();
        s..s + self.n_in * self.n_out
    }

    pub fn b_sigma(&self) -> std::ops::Range<usize> {
        let s = self.offset + self.block() + self.n_in * self.n_out;
        s..s + self.n_out
    }
}

/// One frozen noise draw for every noisy layer of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetNoise {
    pub layers: Vec<Option<FactorNoise>>,
}

impl NetNoise {
    pub fn sample<R: Rng + ?Sized>(net: &Network, rng: &mut R) -> Self {
        NetNoise {
            layers: net
                .layers
                .iter()
                .map(|l| l.noisy.then(|| FactorNoise::sample(l.n_in, l.n_out, rng)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetSpec,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Everything the backward pass needs from a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub batch: usize,
    /// `acts[0]` is the input; `acts[k]` the ReLU output of trunk layer `k-1`.
    acts: Vec<Vec<f64>>,
    weights: Vec<(Vec<f64>, Vec<f64>)>,
    /// Head output, `batch x A x N`.
    pub logits: Vec<f64>,
}

impl ForwardPass {
    pub fn sample_logits(&self, b: usize, n_per_sample: usize) -> &[f64] {
        &self.logits[b * n_per_sample..(b + 1) * n_per_sample]
    }
}

// y (b x out) = x (b x in) . w^T, w row-major out x in
fn gemm_xwt(x: &[f64], w: &[f64], batch: usize, n_in: usize, n_out: usize, y: &mut [f64]) {
    // SAFETY: slice lengths cover the strided extents passed to dgemm.
    unsafe {
        matrixmultiply::dgemm(
            batch, n_in, n_out, 1.0,
            x.as_ptr(), n_in as isize, 1,
            w.as_ptr(), 1, n_in as isize,
            0.0,
            y.as_mut_ptr(), n_out as isize, 1,
        );
    }
}

// dx (b x in) = dy (b x out) . w (out x in)
fn gemm_dy_w(dy: &[f64], w: &[f64], batch: usize, n_in: usize, n_out: usize, dx: &mut [f64]) {
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            batch, n_out, n_in, 1.0,
            dy.as_ptr(), n_out as isize, 1,
            w.as_ptr(), n_in as isize, 1,
            0.0,
            dx.as_mut_ptr(), n_in as isize, 1,
        );
    }
}

// dw (out x in) = dy^T (out x b) . x (b x in)
fn gemm_dyt_x(dy: &[f64], x: &[f64], batch: usize, n_in: usize, n_out: usize, dw: &mut [f64]) {
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            n_out, batch, n_in, 1.0,
            dy.as_ptr(), 1, n_out as isize,
            x.as_ptr(), n_in as isize, 1,
            0.0,
            dw.as_mut_ptr(), n_in as isize, 1,
        );
    }
}

impl Network {
    /// Randomly initialized network (uniform `+-1/sqrt(fan_in)` means,
    /// `sigma_init/sqrt(fan_in)` noise scales).
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<Self, NetError> {
        spec.validate()?;
        let layers = spec.layer_shapes();
        let total = layers.last().map_or(0, |l| l.offset + l.len());
        let mut params = vec![0.0; total];
        for l in &layers {
            let bound = 1.0 / (l.n_in as f64).sqrt();
            for i in l.w_mu().chain(l.b_mu()) {
                params[i] = rng.random_range(-bound..bound);
            }
            if l.noisy {
                let sigma = spec.sigma_init * bound;
                for i in l.w_sigma().chain(l.b_sigma()) {
                    params[i] = sigma;
                }
            }
        }
        Ok(Network { spec, layers, params })
    }

    /// Network from explicit parameters laid out as [`NetSpec::layer_shapes`].
    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Self, NetError> {
        spec.validate()?;
        let layers = spec.layer_shapes();
        let total = layers.last().map_or(0, |l| l.offset + l.len());
        if params.len() != total {
            return Err(NetError::DimensionMismatch {
                expected: total,
                got: params.len(),
            });
        }
        Ok(Network { spec, layers, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Outputs per sample (`A x N`).
    pub fn output_len(&self) -> usize {
        self.spec.n_actions * self.spec.n_atoms()
    }

    fn layer_weights<'a>(&'a self, k: usize, noise: Option<&NetNoise>) -> (Cow<'a, [f64]>, Cow<'a, [f64]>) {
        let l = &self.layers[k];
        let p = &self.params;
        match noise.and_then(|n| n.layers.get(k)).and_then(Option::as_ref) {
            Some(f) if l.noisy => {
                let (w, b) = effective_weights(&p[l.w_mu()], &p[l.w_sigma()], &p[l.b_mu()], &p[l.b_sigma()], f);
                (Cow::Owned(w), Cow::Owned(b))
            }
            _ => (Cow::Borrowed(&p[l.w_mu()]), Cow::Borrowed(&p[l.b_mu()])),
        }
    }

    fn linear(x: &[f64], w: &[f64], b: &[f64], batch: usize, n_in: usize, n_out: usize) -> Vec<f64> {
        let mut y = vec![0.0; batch * n_out];
        gemm_xwt(x, w, batch, n_in, n_out, &mut y);
        for row in y.chunks_exact_mut(n_out) {
            for (v, bias) in row.iter_mut().zip(b) {
                *v += bias;
            }
        }
        y
    }

    /// Batched forward pass over `inputs` (`batch x input_dim`, row-major).
    /// `noise = None` uses the mean weights of noisy layers.
    pub fn forward(&self, inputs: &[f64], batch: usize, noise: Option<&NetNoise>) -> Result<ForwardPass, NetError> {
        let d = self.spec.input_dim;
        if inputs.len() != batch * d {
            return Err(NetError::DimensionMismatch {
                expected: batch * d,
                got: inputs.len(),
            });
        }
        let weights: Vec<(Vec<f64>, Vec<f64>)> = (0..self.layers.len())
            .map(|k| {
                let (w, b) = self.layer_weights(k, noise);
                (w.into_owned(), b.into_owned())
            })
            .collect();
        let trunk = self.spec.hidden.len();
        let mut acts = Vec::with_capacity(trunk + 1);
        acts.push(inputs.to_vec());
        for k in 0..trunk {
            let l = &self.layers[k];
            let mut h = Self::linear(&acts[k], &weights[k].0, &weights[k].1, batch, l.n_in, l.n_out);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(h);
        }
        let last = &acts[trunk];
        let a = self.spec.n_actions;
        let n = self.spec.n_atoms();
        let logits = if self.spec.dueling {
            let (lv, la) = (&self.layers[trunk], &self.layers[trunk + 1]);
            let v = Self::linear(last, &weights[trunk].0, &weights[trunk].1, batch, lv.n_in, lv.n_out);
            let adv = Self::linear(last, &weights[trunk + 1].0, &weights[trunk + 1].1, batch, la.n_in, la.n_out);
            let mut q = vec![0.0; batch * a * n];
            for b in 0..batch {
                dueling_into(&v[b * n..(b + 1) * n], &adv[b * a * n..(b + 1) * a * n], a, &mut q[b * a * n..(b + 1) * a * n]);
            }
            q
        } else {
            let lq = &self.layers[trunk];
            Self::linear(last, &weights[trunk].0, &weights[trunk].1, batch, lq.n_in, lq.n_out)
        };
        Ok(ForwardPass {
            batch,
            acts,
            weights,
            logits,
        })
    }

    /// Reverse-mode gradients of `sum(dlogits * logits)` with respect to every
    /// parameter (flat, same layout as [`Network::params`]). `noise` must be
    /// the draw used for `pass`.
    pub fn backward(&self, pass: &ForwardPass, dlogits: &[f64], noise: Option<&NetNoise>) -> Result<Vec<f64>, NetError> {
        let batch = pass.batch;
        let a = self.spec.n_actions;
        let n = self.spec.n_atoms();
        if dlogits.len() != batch * a * n {
            return Err(NetError::DimensionMismatch {
                expected: batch * a * n,
                got: dlogits.len(),
            });
        }
        let mut grads = vec![0.0; self.params.len()];
        let trunk = self.spec.hidden.len();
        let last = &pass.acts[trunk];
        let last_dim = self.layers[trunk].n_in;
        let mut dh = vec![0.0; batch * last_dim];

        if self.spec.dueling {
            let mut dv = vec![0.0; batch * n];
            let mut dadv = vec![0.0; batch * a * n];
            let inv = 1.0 / a as f64;
            for b in 0..batch {
                let dq = &dlogits[b * a * n..(b + 1) * a * n];
                for j in 0..n {
                    let s: f64 = (0..a).map(|k| dq[k * n + j]).sum();
                    dv[b * n + j] = s;
                    for k in 0..a {
                        dadv[b * a * n + k * n + j] = dq[k * n + j] - s * inv;
                    }
                }
            }
            let mut tmp = vec![0.0; batch * last_dim];
            self.layer_backward(trunk, pass, last, &dv, noise, &mut grads, Some(&mut dh));
            self.layer_backward(trunk + 1, pass, last, &dadv, noise, &mut grads, Some(&mut tmp));
            dh.iter_mut().zip(&tmp).for_each(|(x, y)| *x += y);
        } else {
            self.layer_backward(trunk, pass, last, dlogits, noise, &mut grads, Some(&mut dh));
        }

        for k in (0..trunk).rev() {
            // ReLU mask from the layer's own output.
            for (g, &h) in dh.iter_mut().zip(&pass.acts[k + 1]) {
                if h <= 0.0 {
                    *g = 0.0;
                }
            }
            let l = self.layers[k];
            if k == 0 {
                self.layer_backward(k, pass, &pass.acts[0], &dh, noise, &mut grads, None);
            } else {
                let mut dprev = vec![0.0; batch * l.n_in];
                self.layer_backward(k, pass, &pass.acts[k], &dh, noise, &mut grads, Some(&mut dprev));
                dh = dprev;
            }
        }
        Ok(grads)
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        k: usize,
        pass: &ForwardPass,
        input: &[f64],
        dy: &[f64],
        noise: Option<&NetNoise>,
        grads: &mut [f64],
        dx: Option<&mut Vec<f64>>,
    ) {
        let l = self.layers[k];
        let batch = pass.batch;
        gemm_dyt_x(dy, input, batch, l.n_in, l.n_out, &mut grads[l.w_mu()]);
        let gb = l.b_mu();
        for row in dy.chunks_exact(l.n_out) {
            for (g, d) in grads[gb.clone()].iter_mut().zip(row) {
                *g += d;
            }
        }
        if l.noisy {
            if let Some(f) = noise.and_then(|nz| nz.layers.get(k)).and_then(Option::as_ref) {
                let (wm, ws) = (l.w_mu(), l.w_sigma());
                for o in 0..l.n_out {
                    for i in 0..l.n_in {
                        let idx = o * l.n_in + i;
                        grads[ws.start + idx] = grads[wm.start + idx] * (f.f_out[o] * f.f_in[i]);
                    }
                }
                let (bm, bs) = (l.b_mu(), l.b_sigma());
                for o in 0..l.n_out {
                    grads[bs.start + o] = grads[bm.start + o] * f.f_out[o];
                }
            }
        }
        if let Some(dx) = dx {
            gemm_dy_w(dy, &pass.weights[k].0, batch, l.n_in, l.n_out, dx);
        }
    }
}

/// Per-action categorical distributions for one observation.
pub fn forward_dist(net: &Network, observation: &[f64], noise: Option<&NetNoise>) -> Result<ActionValueDistribution, NetError> {
    let pass = net.forward(observation, 1, noise)?;
    let n = net.spec.n_atoms();
    let mut probs = vec![0.0; pass.logits.len()];
    for (out, row) in probs.chunks_exact_mut(n).zip(pass.logits.chunks_exact(n)) {
        softmax(row, out);
    }
    Ok(ActionValueDistribution {
        n_actions: net.spec.n_actions,
        n_atoms: n,
        probs,
    })
}
