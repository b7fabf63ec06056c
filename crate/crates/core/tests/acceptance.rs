//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use trafficrl::agent::{
    run_episode, run_multi_agent, run_training, Agent, AgentConfig, BatchNoise, FixedTime, NetConfig,
    PrioritizedBuffer, SumTree, TrainBatch, Transition, Variant,
};
use trafficrl::cli::{cmd_compare, cmd_eval, cmd_train, RunConfig};
use trafficrl::nn::{project_distribution, NetNoise, NetSpec, Network, ValueSupport};
use trafficrl::sim::{compute_reward, Intersection, Link, NetworkConfig, NetworkEnv, Observation, RoadState, SignalState, SimConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- reward

/// Straight transcription of the reference pseudocode, term by term.
fn reward_oracle(waits: &[f64], remaining: &[usize], ins: &[usize], outs: &[usize], weight: f64) -> f64 {
    let roads_count = waits.len() as f64;
    let mut reward = 0.0;
    let mut wsum = 0.0;
    for w in waits {
        wsum += w;
    }
    reward -= wsum / (roads_count - 1.0);
    let mut rsum = 0.0;
    for r in remaining {
        rsum += *r as f64;
    }
    reward -= rsum;
    let mut hi = waits[0];
    let mut lo = waits[0];
    for &w in waits {
        if w > hi {
            hi = w;
        }
        if w < lo {
            lo = w;
        }
    }
    reward -= (hi - lo) * weight;
    let mut isum = 0.0;
    for i in ins {
        isum += *i as f64;
    }
    reward += isum;
    let mut osum = 0.0;
    for o in outs {
        osum += *o as f64;
    }
    reward += osum;
    reward
}

fn roads_from(waits: &[f64], remaining: &[usize], ins: &[usize], outs: &[usize]) -> Vec<RoadState> {
    (0..waits.len())
        .map(|i| RoadState {
            queue: VecDeque::new(),
            in_count: ins[i],
            out_count: outs[i],
            remaining_after_green: remaining[i],
            avg_waiting_s: waits[i],
            mean_speed_mps: 0.0,
        })
        .collect()
}

fn reward_criterion() -> Outcome {
    let cfg = SimConfig::default();
    let signal = SignalState::default();
    let hand_cfg = SimConfig {
        roads_count: 3,
        arrival_rates: vec![0.1; 3],
        ..SimConfig::default()
    };
    let hand = compute_reward(
        &roads_from(&[10.0, 20.0, 30.0], &[2, 1, 0], &[5, 4, 3], &[6, 2, 1]),
        &signal,
        &hand_cfg,
    )
    .total;
    let hand_ok = (hand - -52.0).abs() <= 1e-9;

    let mut r = rng(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(2..=8);
        let waits: Vec<f64> = (0..n).map(|_| r.random_range(0.0..600.0)).collect();
        let remaining: Vec<usize> = (0..n).map(|_| r.random_range(0..60)).collect();
        let ins: Vec<usize> = (0..n).map(|_| r.random_range(0..20)).collect();
        let outs: Vec<usize> = (0..n).map(|_| r.random_range(0..20)).collect();
        let c = SimConfig {
            roads_count: n,
            arrival_rates: vec![0.1; n],
            fairness_weight: cfg.fairness_weight,
            ..SimConfig::default()
        };
        let got = compute_reward(&roads_from(&waits, &remaining, &ins, &outs), &signal, &c).total;
        let want = reward_oracle(&waits, &remaining, &ins, &outs, 2.0);
        worst = worst.max((got - want).abs());
    }
    outcome(
        hand_ok && worst <= 1e-9,
        format!("hand case {hand} (want -52); max |diff| over 1000 random states {worst:.2e} (tol 1e-9)"),
    )
}

// ------------------------------------------------------------ projection

/// Each source atom's mass is spread over target atoms with a triangular
/// kernel of half-width delta around its clamped image.
fn projection_oracle(r: f64, done: bool, gamma: f64, p: &[f64], vmin: f64, vmax: f64) -> Vec<f64> {
    let n = p.len();
    let dz = (vmax - vmin) / (n - 1) as f64;
    let z: Vec<f64> = (0..n).map(|i| vmin + i as f64 * dz).collect();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let mut tz = if done { r } else { r + gamma * z[j] };
        tz = tz.max(vmin).min(vmax);
        for i in 0..n {
            let k = 1.0 - (tz - z[i]).abs() / dz;
            if k > 0.0 {
                out[i] += p[j] * k;
            }
        }
    }
    out
}

fn projection_criterion() -> Outcome {
    let mut r = rng(202);
    let mut worst = 0.0f64;
    let mut worst_mass = 0.0f64;
    let mut worst_mean = 0.0f64;
    let mut unclamped = 0;
    for _ in 0..10_000 {
        let n = r.random_range(2..=51);
        let vmin = r.random_range(-700.0..0.0);
        let vmax = vmin + r.random_range(0.5..800.0);
        let support = ValueSupport::new(vmin, vmax, n).unwrap();
        let mut p: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.2) { 0.0 } else { r.random::<f64>().powi(3) })
            .collect();
        if p.iter().sum::<f64>() == 0.0 {
            p[0] = 1.0;
        }
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        let span = vmax - vmin;
        let reward = r.random_range(vmin - 0.3 * span..vmax + 0.3 * span);
        let gamma = if r.random_bool(0.05) { 1.0 } else { r.random::<f64>() };
        let done = r.random_bool(0.1);

        let got = project_distribution(reward, done, gamma, &p, &support);
        let want = projection_oracle(reward, done, gamma, &p, vmin, vmax);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
        worst_mass = worst_mass.max((got.iter().sum::<f64>() - 1.0).abs());

        let z = support.atoms();
        let clamps = z.iter().any(|&zj| {
            let tz = if done { reward } else { reward + gamma * zj };
            tz < vmin || tz > vmax
        });
        if !clamps {
            unclamped += 1;
            let mean_in: f64 = p.iter().zip(&z).map(|(p, z)| p * z).sum();
            let expect = if done { reward } else { reward + gamma * mean_in };
            let mean_out: f64 = got.iter().zip(&z).map(|(p, z)| p * z).sum();
            worst_mean = worst_mean.max((mean_out - expect).abs());
        }
    }
    outcome(
        worst <= 1e-9 && worst_mass <= 1e-9 && worst_mean <= 1e-9,
        format!(
            "10^4 cases: max atom diff {worst:.2e}, max |mass-1| {worst_mass:.2e}, max mean drift {worst_mean:.2e} over {unclamped} unclamped cases (tol 1e-9)"
        ),
    )
}

// -------------------------------------------------------------- gradients
//
// Finite differences of an f64 loss lose about eps*|L|/h to cancellation,
// which swamps small gradients at h = 1e-6. The numeric side therefore
// evaluates the loss with an independent double-double forward pass.

const FD_H: f64 = 1e-6;
/// Denominator floor of the relative error, so that exactly-zero gradients
/// (dead units) compare as equal instead of 0/0.
const REL_FLOOR: f64 = 1e-8;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs().max(n.abs())).max(REL_FLOOR)
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    const LN2: Dd = Dd {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };

    fn new(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.hi, r.lo + f)
    }

    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }

    fn mul_f(self, x: f64) -> Dd {
        self.mul(Dd::new(x))
    }

    fn div_f(self, d: f64) -> Dd {
        let q1 = self.hi / d;
        let r = self.sub(Dd::new(d).mul_f(q1));
        let q2 = r.hi / d;
        quick_two_sum(q1, q2)
    }

    fn max0(self) -> Dd {
        if self.hi > 0.0 || (self.hi == 0.0 && self.lo > 0.0) {
            self
        } else {
            Dd::ZERO
        }
    }

    fn exp(self) -> Dd {
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = self.sub(Dd::LN2.mul_f(k));
        // exp(r) = exp(r / 256)^256 with a Taylor series on the small part.
        let s = Dd { hi: r.hi / 256.0, lo: r.lo / 256.0 };
        let mut term = Dd::new(1.0);
        let mut sum = Dd::new(1.0);
        for i in 1..=16 {
            term = term.mul(s).div_f(i as f64);
            sum = sum.add(term);
        }
        for _ in 0..8 {
            sum = sum.mul(sum);
        }
        let scale = 2f64.powi(k as i32);
        Dd { hi: sum.hi * scale, lo: sum.lo * scale }
    }

    fn ln(self) -> Dd {
        let mut y = Dd::new(self.hi.ln());
        for _ in 0..2 {
            y = y.add(self.mul(y.neg().exp())).sub(Dd::new(1.0));
        }
        y
    }
}

/// Double-double forward pass computed from the flat parameter layout.
fn forward_dd(net: &Network, params: &[f64], x: &[f64], batch: usize, noise: Option<&NetNoise>) -> Vec<Dd> {
    let spec = net.spec();
    let layers = net.layers();
    let trunk = spec.hidden.len();
    let linear = |k: usize, input: &[Dd]| -> Vec<Dd> {
        let l = &layers[k];
        let f = noise.and_then(|n| n.layers[k].as_ref()).filter(|_| l.noisy);
        let weight = |o: usize, i: usize| {
            let mu = Dd::new(params[l.w_mu().start + o * l.n_in + i]);
            match f {
                Some(f) => {
                    let fo_fi = Dd::new(f.f_out[o]).mul_f(f.f_in[i]);
                    mu.add(fo_fi.mul_f(params[l.w_sigma().start + o * l.n_in + i]))
                }
                None => mu,
            }
        };
        let bias = |o: usize| {
            let mu = Dd::new(params[l.b_mu().start + o]);
            match f {
                Some(f) => mu.add(Dd::new(params[l.b_sigma().start + o]).mul_f(f.f_out[o])),
                None => mu,
            }
        };
        let mut out = Vec::with_capacity(batch * l.n_out);
        for b in 0..batch {
            for o in 0..l.n_out {
                let mut acc = bias(o);
                for i in 0..l.n_in {
                    acc = acc.add(weight(o, i).mul(input[b * l.n_in + i]));
                }
                out.push(acc);
            }
        }
        out
    };
    let mut h: Vec<Dd> = x.iter().map(|&v| Dd::new(v)).collect();
    for k in 0..trunk {
        h = linear(k, &h).into_iter().map(Dd::max0).collect();
    }
    let a = spec.n_actions;
    let n = spec.n_atoms();
    if !spec.dueling {
        return linear(trunk, &h);
    }
    let v = linear(trunk, &h);
    let adv = linear(trunk + 1, &h);
    let mut q = vec![Dd::ZERO; batch * a * n];
    for b in 0..batch {
        for j in 0..n {
            let mut mean = Dd::ZERO;
            for act in 0..a {
                mean = mean.add(adv[b * a * n + act * n + j]);
            }
            let mean = mean.div_f(a as f64);
            for act in 0..a {
                q[b * a * n + act * n + j] = v[b * n + j].add(adv[b * a * n + act * n + j].sub(mean));
            }
        }
    }
    q
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-sum t_i log softmax(row)_i` in double-double.
fn cross_entropy_dd(row: &[Dd], t: &[f64]) -> Dd {
    let m = row.iter().map(|v| v.hi).fold(f64::NEG_INFINITY, f64::max);
    let mut s = Dd::ZERO;
    for v in row {
        s = s.add(v.sub(Dd::new(m)).exp());
    }
    let lse = s.ln().add(Dd::new(m));
    let mut loss = Dd::ZERO;
    for (v, &ti) in row.iter().zip(t) {
        loss = loss.sub(v.sub(lse).mul_f(ti));
    }
    loss
}

/// Gradient with respect to the head output of the test loss: row-wise
/// cross-entropy for categorical heads, half squared error for scalar heads.
fn head_loss_grad(logits: &[f64], targets: &[f64], atoms: usize, categorical: bool) -> Vec<f64> {
    if categorical {
        logits
            .chunks(atoms)
            .zip(targets.chunks(atoms))
            .flat_map(|(row, t)| softmax(row).into_iter().zip(t).map(|(p, t)| p - t).collect::<Vec<_>>())
            .collect()
    } else {
        logits.iter().zip(targets).map(|(y, t)| y - t).collect()
    }
}

fn head_loss_dd(logits: &[Dd], targets: &[f64], atoms: usize, categorical: bool) -> Dd {
    let mut loss = Dd::ZERO;
    if categorical {
        for (row, t) in logits.chunks(atoms).zip(targets.chunks(atoms)) {
            loss = loss.add(cross_entropy_dd(row, t));
        }
    } else {
        for (y, &t) in logits.iter().zip(targets) {
            let d = y.sub(Dd::new(t));
            loss = loss.add(d.mul(d).mul_f(0.5));
        }
    }
    loss
}

/// Central difference of `loss` in parameter `i`, divided by the step that
/// was actually representable.
fn central_difference(params: &mut [f64], i: usize, loss: impl Fn(&[f64]) -> Dd) -> f64 {
    let orig = params[i];
    params[i] = orig + FD_H;
    let up_x = params[i];
    let up = loss(params);
    params[i] = orig - FD_H;
    let down_x = params[i];
    let down = loss(params);
    params[i] = orig;
    let diff = up.sub(down);
    (diff.hi + diff.lo) / (up_x - down_x)
}

fn random_spec(r: &mut ChaCha8Rng) -> NetSpec {
    let categorical = r.random_bool(0.6);
    NetSpec {
        input_dim: r.random_range(1..=8),
        hidden: (0..r.random_range(1..=2)).map(|_| r.random_range(1..=8)).collect(),
        n_actions: r.random_range(1..=8),
        support: categorical.then(|| {
            let lo = r.random_range(-10.0..0.0);
            ValueSupport::new(lo, lo + r.random_range(1.0..10.0), r.random_range(2..=8)).unwrap()
        }),
        dueling: r.random_bool(0.5),
        noisy: r.random_bool(0.5),
        sigma_init: 0.5,
    }
}

fn network_gradcheck(cases: usize) -> (f64, usize) {
    let mut r = rng(303);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..cases {
        let spec = random_spec(&mut r);
        let categorical = spec.support.is_some();
        let atoms = spec.n_atoms();
        let net = Network::new(spec.clone(), &mut r).unwrap();
        let noise = NetNoise::sample(&net, &mut r);
        let noise = spec.noisy.then_some(&noise);
        let batch = r.random_range(1..=4);
        let x: Vec<f64> = (0..batch * spec.input_dim).map(|_| r.random_range(-2.0..2.0)).collect();
        let out_len = batch * spec.n_actions * atoms;
        let targets: Vec<f64> = if categorical {
            (0..batch * spec.n_actions)
                .flat_map(|_| {
                    let raw: Vec<f64> = (0..atoms).map(|_| r.random::<f64>()).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(move |v| v / s)
                })
                .collect()
        } else {
            (0..out_len).map(|_| r.random_range(-3.0..3.0)).collect()
        };

        let pass = net.forward(&x, batch, noise).unwrap();
        let dlogits = head_loss_grad(&pass.logits, &targets, atoms, categorical);
        let analytic = net.backward(&pass, &dlogits, noise).unwrap();

        let mut params = net.params().to_vec();
        for i in 0..params.len() {
            let numeric = central_difference(&mut params, i, |p| {
                head_loss_dd(&forward_dd(&net, p, &x, batch, noise), &targets, atoms, categorical)
            });
            worst = worst.max(rel_err(analytic[i], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

/// The agent's training loss (weighted cross-entropy against the projected
/// target, or weighted half squared TD error) against finite differences on
/// the online parameters. Targets are rebuilt here from the target network
/// and the projection oracle.
fn agent_gradcheck(cases: usize) -> (f64, usize) {
    let mut r = rng(304);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for case in 0..cases {
        let variant = if case % 2 == 0 { Variant::Rainbow } else { Variant::VanillaDqn };
        let input_dim = r.random_range(1..=8);
        let n_actions = r.random_range(2..=8);
        let net_cfg = NetConfig {
            hidden: vec![r.random_range(2..=8)],
            n_atoms: r.random_range(2..=8),
            v_min: -5.0,
            v_max: 5.0,
            sigma_init: 0.5,
        };
        let cfg = AgentConfig {
            batch_size: 4,
            train_start: 4,
            ..AgentConfig::default()
        }
        .with_variant(variant);
        let mut agent = Agent::new(input_dim, n_actions, &net_cfg, &cfg, case as u64).unwrap();
        // Distinct target network.
        for p in agent.online_mut().params_mut() {
            *p += r.random_range(-0.1..0.1);
        }
        let bsz = 4;
        let transitions: Vec<Transition> = (0..bsz)
            .map(|_| Transition {
                state: Observation((0..input_dim).map(|_| r.random_range(-1.0..1.0)).collect()),
                action: r.random_range(0..n_actions),
                return_n: r.random_range(-4.0..4.0),
                next_state: Observation((0..input_dim).map(|_| r.random_range(-1.0..1.0)).collect()),
                done: r.random_bool(0.25),
                gamma_n: 0.97,
            })
            .collect();
        let weights: Vec<f64> = (0..bsz).map(|_| r.random_range(0.2..1.0)).collect();
        let batch = TrainBatch::from_transitions(&transitions, weights.clone(), (0..bsz).collect());
        let noise = if variant == Variant::Rainbow {
            let online = agent.online();
            BatchNoise {
                online: Some(NetNoise::sample(online, &mut r)),
                online_next: Some(NetNoise::sample(online, &mut r)),
                target: Some(NetNoise::sample(agent.target(), &mut r)),
            }
        } else {
            BatchNoise::default()
        };
        let analytic = agent.loss_and_grad(&batch, &noise).unwrap().grads;

        let online = agent.online().clone();
        let spec = online.spec().clone();
        let atoms = spec.n_atoms();
        let per = n_actions * atoms;
        let states: Vec<f64> = transitions.iter().flat_map(|t| t.state.0.clone()).collect();
        let next: Vec<f64> = transitions.iter().flat_map(|t| t.next_state.0.clone()).collect();
        let next_online = online.forward(&next, bsz, noise.online_next.as_ref()).unwrap();
        let next_target = agent.target().forward(&next, bsz, noise.target.as_ref()).unwrap();
        // Per sample: the target row for the taken action.
        let targets: Vec<Vec<f64>> = transitions
            .iter()
            .enumerate()
            .map(|(b, t)| match spec.support {
                Some(s) => {
                    let z = s.atoms();
                    let q: Vec<f64> = next_online
                        .sample_logits(b, per)
                        .chunks(atoms)
                        .map(|row| softmax(row).iter().zip(&z).map(|(p, z)| p * z).sum())
                        .collect();
                    let a_star = first_argmax(&q);
                    let probs = softmax(&next_target.sample_logits(b, per)[a_star * atoms..(a_star + 1) * atoms]);
                    projection_oracle(t.return_n, t.done, t.gamma_n, &probs, s.v_min, s.v_max)
                }
                None => {
                    let q = next_target.sample_logits(b, per);
                    let boot = if t.done { 0.0 } else { t.gamma_n * q[first_argmax(q)] };
                    vec![t.return_n + boot]
                }
            })
            .collect();
        let loss = |p: &[f64]| {
            let out = forward_dd(&online, p, &states, bsz, noise.online.as_ref());
            let mut total = Dd::ZERO;
            for (b, t) in transitions.iter().enumerate() {
                let row = &out[b * per + t.action * atoms..b * per + (t.action + 1) * atoms];
                total = total.add(head_loss_dd(row, &targets[b], atoms, spec.support.is_some()).mul_f(weights[b]));
            }
            total.div_f(bsz as f64)
        };
        let mut params = online.params().to_vec();
        for i in 0..params.len() {
            let numeric = central_difference(&mut params, i, &loss);
            worst = worst.max(rel_err(analytic[i], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn gradient_criterion() -> Outcome {
    let (net_worst, net_n) = network_gradcheck(200);
    let (agent_worst, agent_n) = agent_gradcheck(40);
    outcome(
        net_worst < 1e-5 && agent_worst < 1e-5,
        format!(
            "h=1e-6 central differences: network max rel err {net_worst:.2e} over {net_n} params, agent loss max rel err {agent_worst:.2e} over {agent_n} params (tol 1e-5)"
        ),
    )
}

// -------------------------------------------------------------------- PER

fn dummy(i: usize) -> Transition {
    Transition {
        state: Observation(vec![i as f64]),
        action: 0,
        return_n: 0.0,
        next_state: Observation(vec![0.0]),
        done: false,
        gamma_n: 1.0,
    }
}

fn per_criterion() -> Outcome {
    let mut r = rng(404);

    let mut tree = SumTree::new(1000);
    let mut leaves = vec![0.0; 1000];
    let mut root_err = 0.0f64;
    for _ in 0..10_000 {
        let i = r.random_range(0..1000);
        let v = r.random_range(0.0..100.0);
        tree.set(i, v);
        leaves[i] = v;
        let naive: f64 = leaves.iter().sum();
        root_err = root_err.max((tree.total() - naive).abs());
    }

    let k = 100;
    let mut buf = PrioritizedBuffer::new(k, 0.5, 1e-3);
    for i in 0..k {
        buf.push(dummy(i));
    }
    let errors: Vec<f64> = (0..k).map(|_| r.random_range(0.05..20.0)).collect();
    buf.update_priorities(&(0..k).collect::<Vec<_>>(), &errors).unwrap();
    let p: Vec<f64> = (0..k).map(|i| buf.probability(i)).collect();

    let n = 100_000;
    let chi2 = |batch: usize, r: &mut ChaCha8Rng| {
        let mut counts = vec![0usize; k];
        let mut max_w = 0.0f64;
        for _ in 0..n / batch {
            let s = buf.sample(batch, 0.4, r).unwrap();
            for (&i, &w) in s.indices.iter().zip(&s.weights) {
                counts[i] += 1;
                max_w = max_w.max(w);
            }
        }
        let stat: f64 = counts
            .iter()
            .zip(&p)
            .map(|(&c, &pi)| {
                let e = pi * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let pval = 1.0 - ChiSquared::new((k - 1) as f64).unwrap().cdf(stat);
        (pval, max_w)
    };
    let (p_single, w_single) = chi2(1, &mut r);
    let (p_batch, w_batch) = chi2(50, &mut r);
    let max_w = w_single.max(w_batch);
    outcome(
        root_err <= 1e-6 && p_single > 0.01 && p_batch > 0.01 && max_w <= 1.0,
        format!(
            "root drift {root_err:.2e} after 10^4 updates (tol 1e-6); chi-square p={p_single:.3} (batch 1), p={p_batch:.3} (batch 50) on 10^5 draws (need > 0.01); max weight {max_w}"
        ),
    )
}

// ------------------------------------------------------ conservation + CSV

fn road_conserved(env: &Intersection) -> bool {
    let t = env.totals();
    env.roads()
        .iter()
        .enumerate()
        .all(|(i, road)| t.arrivals[i] == t.departures[i] + road.queue.len())
}

fn conservation_criterion(dir: &Path) -> Outcome {
    let mut r = rng(505);
    let configs = [
        SimConfig::default().resolved(),
        SimConfig {
            arrival_rates: vec![0.3, 0.1, 0.1, 0.1],
            ..SimConfig::default()
        }
        .resolved(),
        SimConfig {
            roads_count: 3,
            arrival_rates: vec![0.5, 0.2, 0.05],
            queue_capacity: Some(12),
            enable_stuck_term: true,
            enable_speed_term: true,
            stuck_probability: 0.3,
            ..SimConfig::default()
        }
        .resolved(),
    ];
    let mut episodes = 0;
    let mut violations = 0;
    for cfg in &configs {
        let mut env = Intersection::new(cfg.clone(), 1).unwrap();
        for ep in 0..20u64 {
            env.reset(ep * 7 + 3);
            while !env.is_done() {
                env.step(r.random_range(0..cfg.roads_count)).unwrap();
                if !road_conserved(&env) {
                    violations += 1;
                }
            }
            episodes += 1;
        }
        // Learning controllers too.
        let net = NetConfig {
            hidden: vec![16],
            ..NetConfig::default()
        };
        let agent_cfg = AgentConfig {
            train_start: 32,
            batch_size: 16,
            ..AgentConfig::default()
        };
        let mut agent = Agent::new(cfg.observation_len(), cfg.roads_count, &net, &agent_cfg, 2).unwrap();
        for ep in 0..5 {
            env.reset(100 + ep as u64);
            run_episode(&mut agent, &mut env, ep, true).unwrap();
            episodes += 1;
            if !road_conserved(&env) {
                violations += 1;
            }
        }
        let mut fixed = FixedTime::new(cfg.roads_count);
        run_training(&mut fixed, &mut env, 4, 5, false, |_| {}).unwrap();
        episodes += 5;
        if !road_conserved(&env) {
            violations += 1;
        }
    }

    let cfg = RunConfig {
        episodes: 3,
        seeds: vec![1, 2],
        sim: SimConfig {
            episode_length_s: 600.0,
            ..SimConfig::default()
        },
        agent: AgentConfig {
            train_start: 64,
            batch_size: 16,
            ..AgentConfig::default()
        },
        net: NetConfig {
            hidden: vec![32],
            ..NetConfig::default()
        },
        ..RunConfig::default()
    }
    .resolved();
    let mut identical = true;
    for variant in [Variant::Rainbow, Variant::VanillaDqn] {
        let mut c = cfg.clone();
        c.agent.variant = variant;
        let a = dir.join(format!("csv_a_{}", variant.label()));
        let b = dir.join(format!("csv_b_{}", variant.label()));
        cmd_train(&c, &a).unwrap();
        cmd_train(&c, &b).unwrap();
        identical &= fs::read(a.join("metrics.csv")).unwrap() == fs::read(b.join("metrics.csv")).unwrap();
    }
    outcome(
        violations == 0 && identical,
        format!(
            "{episodes} episodes checked after every interval, {violations} conservation violations; rerun metrics CSV byte-identical: {identical}"
        ),
    )
}

// ------------------------------------------------------------ multi-agent

fn is_sub_multiset<T: Ord>(small: &mut [T], big: &mut [T]) -> bool {
    small.sort_unstable();
    big.sort_unstable();
    let mut j = 0;
    for x in small.iter() {
        while j < big.len() && big[j] < *x {
            j += 1;
        }
        if j == big.len() || big[j] != *x {
            return false;
        }
        j += 1;
    }
    true
}

fn multi_agent_criterion() -> Outcome {
    let seed = 17;
    let cfg = SimConfig::default().resolved();

    // Fixed action sequence, raw simulator.
    let mut single = Intersection::new(cfg.clone(), seed).unwrap();
    let mut net = NetworkEnv::new(
        NetworkConfig {
            intersections: vec![cfg.clone()],
            links: vec![],
        },
        seed,
    )
    .unwrap();
    let mut same_steps = single.reset(seed) == net.reset(seed)[0];
    let mut k = 0;
    while !single.is_done() {
        let a = (k * 5 + k / 3) % 4;
        let s = single.step(a).unwrap();
        let n = net.step(&[a]).unwrap().remove(0).unwrap();
        same_steps &= s == n;
        k += 1;
    }
    same_steps &= net.is_done();

    // Training through both runners.
    let net_cfg = NetConfig {
        hidden: vec![16],
        ..NetConfig::default()
    };
    let agent_cfg = AgentConfig {
        train_start: 32,
        batch_size: 16,
        ..AgentConfig::default()
    };
    let mut a1 = Agent::new(cfg.observation_len(), 4, &net_cfg, &agent_cfg, 5).unwrap();
    let mut a2 = a1.clone();
    let mut env = Intersection::new(cfg.clone(), seed).unwrap();
    let solo = run_training(&mut a1, &mut env, seed, 4, true, |_| {}).unwrap();
    let mut network = NetworkEnv::new(
        NetworkConfig {
            intersections: vec![cfg.clone()],
            links: vec![],
        },
        seed,
    )
    .unwrap();
    let multi = run_multi_agent(&mut network, &mut [&mut a2], seed, 4, true).unwrap();
    let same_training = solo == multi[0] && a1.online().params() == a2.online().params();

    // Two-node chain.
    let link = Link {
        from_intersection: 0,
        from_road: 0,
        to_intersection: 1,
        to_road: 2,
        travel_time_s: 25.0,
        turn_fraction: 0.7,
    };
    let mut chain = NetworkEnv::new(
        NetworkConfig {
            intersections: vec![
                SimConfig {
                    arrival_rates: vec![0.25, 0.1, 0.1, 0.1],
                    ..SimConfig::default()
                },
                cfg.clone(),
            ],
            links: vec![link.clone()],
        },
        seed,
    )
    .unwrap();
    let mut r = rng(606);
    let mut conserved = true;
    let mut barriers = 0;
    let mut routed_ok = true;
    let mut routed: Vec<(usize, u64)> = Vec::new();
    let mut injected: Vec<(usize, u64)> = Vec::new();
    let mut upstream_departures = 0;
    let mut n_routed = 0;
    for ep in 0..3 {
        chain.reset(seed + ep);
        while !chain.is_done() {
            let acts = [r.random_range(0..4), r.random_range(0..4)];
            chain.step(&acts).unwrap();
            barriers += 1;
            conserved &= chain.counts().conserved();
            let deps: Vec<_> = chain
                .node(0)
                .last_interval()
                .departures
                .iter()
                .filter(|d| d.road == 0)
                .copied()
                .collect();
            upstream_departures += deps.len();
            let routing = chain.last_routing();
            for ra in &routing.routed {
                routed_ok &= ra.from_intersection == 0
                    && ra.to_intersection == 1
                    && ra.arrival.road == link.to_road
                    && ra.arrival.t == ra.departed_at + link.travel_time_s
                    && deps.iter().any(|d| d.t == ra.departed_at);
                routed.push((ra.arrival.road, ra.arrival.t.to_bits()));
            }
            n_routed += routing.routed.len();
            for a in &chain.node(1).last_interval().injected {
                injected.push((a.road, a.t.to_bits()));
            }
        }
        // Vehicles still travelling at the end never reached node 1.
        let pending = chain.node(1).pending_injected();
        let rejected = chain.node(1).totals().rejected_injected;
        let delivered = injected.len();
        routed_ok &= delivered + pending + rejected == routed.len();
        routed_ok &= is_sub_multiset(&mut injected, &mut routed);
        routed.clear();
        injected.clear();
    }
    let share = n_routed as f64 / upstream_departures.max(1) as f64;
    outcome(
        same_steps && same_training && conserved && routed_ok && n_routed > 0,
        format!(
            "1-node network identical to single run: steps {same_steps}, training {same_training}; 2-node chain conserved at all {barriers} barriers: {conserved}; downstream arrivals = upstream departures + {}s: {routed_ok} ({n_routed} routed, share {share:.3} vs turn fraction 0.7)",
            link.travel_time_s
        ),
    )
}

// --------------------------------------------------------------- learning

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn learning_criterion(dir: &Path) -> Outcome {
    let cfg = RunConfig {
        episodes: 1000,
        seeds: SEEDS.to_vec(),
        ..RunConfig::default()
    }
    .resolved();
    let out = dir.join("compare");
    if let Err(e) = cmd_compare(&cfg, &out) {
        return outcome(false, format!("compare failed: {e}"));
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let entry = |seed: u64, variant: &str| {
        summary["entries"]
            .as_array()
            .unwrap()
            .iter()
            .find(|e| e["seed"] == seed && e["variant"] == variant)
            .cloned()
            .unwrap()
    };
    let mut beats = 0;
    let mut improves = 0;
    let mut crn = true;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let rb = entry(seed, "rainbow");
        let va = entry(seed, "vanilla_dqn");
        let rb_last = rb["last_mean_reward"].as_f64().unwrap();
        let rb_first = rb["first_mean_reward"].as_f64().unwrap();
        let va_last = va["last_mean_reward"].as_f64().unwrap();
        crn &= rb["arrival_checksum"] == va["arrival_checksum"];
        if rb_last > va_last {
            beats += 1;
        }
        if rb_last > rb_first {
            improves += 1;
        }
        lines.push(format!(
            "seed {seed}: rainbow last {rb_last:.0} first {rb_first:.0}, vanilla last {va_last:.0}"
        ));
    }
    outcome(
        beats >= 4 && improves == SEEDS.len() && crn,
        format!(
            "rainbow last-100 > vanilla in {beats}/5 seeds (need >= 4), last-100 > first-100 in {improves}/5 (need 5), identical arrivals {crn}; {}",
            lines.join("; ")
        ),
    )
}

/// Episodes of training before the baseline evaluation.
const BASELINE_EPISODES: usize = 300;

fn baseline_criterion(dir: &Path) -> Outcome {
    let cfg = RunConfig {
        episodes: BASELINE_EPISODES,
        seeds: SEEDS.to_vec(),
        eval_episodes: 20,
        sim: SimConfig {
            arrival_rates: vec![0.3, 0.1, 0.1, 0.1],
            ..SimConfig::default()
        },
        ..RunConfig::default()
    }
    .resolved();
    let out = dir.join("baseline");
    if let Err(e) = cmd_train(&cfg, &out).and_then(|_| cmd_eval(&cfg, &out)) {
        return outcome(false, format!("train/eval failed: {e}"));
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval_summary.json")).unwrap()).unwrap();
    let mut all_lower = true;
    let mut ratios = Vec::new();
    for e in summary.as_array().unwrap() {
        let agent = e["agent_waiting_mean_s"].as_f64().unwrap();
        let fixed = e["fixed_time_waiting_mean_s"].as_f64().unwrap();
        all_lower &= agent < fixed;
        ratios.push(format!("seed {}: {agent:.1}s vs {fixed:.1}s (ratio {:.3})", e["seed"], agent / fixed));
    }
    all_lower &= ratios.len() == SEEDS.len();
    outcome(
        all_lower,
        format!(
            "rainbow trained {BASELINE_EPISODES} episodes, 20 eval episodes, waiting below fixed-time in every seed: {all_lower}; {}",
            ratios.join("; ")
        ),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("reward oracle", Box::new(reward_criterion)),
        ("projection oracle", Box::new(projection_criterion)),
        ("gradient check", Box::new(gradient_criterion)),
        ("PER correctness", Box::new(per_criterion)),
        ("conservation & determinism", Box::new(|| conservation_criterion(dir.path()))),
        ("multi-agent sanity", Box::new(multi_agent_criterion)),
        ("rainbow vs vanilla (1000 episodes x 5 seeds)", Box::new(|| learning_criterion(dir.path()))),
        ("baseline improvement (asymmetric load)", Box::new(|| baseline_criterion(dir.path()))),
    ];
    let only = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, check) in &criteria {
        if only.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name} [{:.1}s]: {}", start.elapsed().as_secs_f64(), o.detail);
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
