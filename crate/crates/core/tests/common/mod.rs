//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scalepinn::autodiff::{Activation, Tape};
use scalepinn::network::{init_params, NetworkConfig, ParameterSet};
use scalepinn::problems::{make_problem, sample_batch, Batch, ProblemSpec, PROBLEM_NAMES};
use scalepinn::scale_loss::{assemble_baseline_loss, assemble_scale_loss, CorrectionConfig, LossWeights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn all_problems() -> Vec<ProblemSpec> {
    PROBLEM_NAMES
        .iter()
        .map(|n| make_problem(n, &BTreeMap::new()).unwrap())
        .collect()
}

/// A small random network: plain, skip-concatenated or branched, with a
/// random hidden activation and frequency factor.
pub fn random_net(rng: &mut ChaCha8Rng, input_dim: usize, outputs: &[String]) -> NetworkConfig {
    let depth = rng.random_range(1..=3);
    let layer_widths: Vec<usize> = (0..depth).map(|_| rng.random_range(3..=8)).collect();
    let shape = rng.random_range(0..3);
    let branch_widths = (shape == 2).then(|| {
        outputs
            .iter()
            .map(|o| {
                let d = rng.random_range(1..=2);
                (o.clone(), (0..d).map(|_| rng.random_range(2..=5)).collect())
            })
            .collect::<BTreeMap<_, _>>()
    });
    NetworkConfig {
        input_dim,
        layer_widths,
        branch_widths,
        skip_concat: shape == 1,
        activation: if rng.random_bool(0.5) { Activation::Silu } else { Activation::Softplus },
        frequency_factor: rng.random_range(0.3..1.5),
        output_names: outputs.to_vec(),
        seed: rng.random(),
    }
}

pub fn net_for(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> NetworkConfig {
    random_net(rng, spec.n_axes(), &spec.outputs)
}

/// He-initialised parameters with every entry then jittered, so biases are
/// non-zero too.
pub fn random_params(cfg: &NetworkConfig, rng: &mut ChaCha8Rng, jitter: f64) -> ParameterSet {
    let mut p = init_params(cfg).unwrap();
    for v in p.flat_mut() {
        *v += jitter * (rng.random::<f64>() - 0.5);
    }
    p
}

pub fn perturb(p: &ParameterSet, rng: &mut ChaCha8Rng, size: f64) -> ParameterSet {
    let mut q = p.clone();
    for v in q.flat_mut() {
        *v += size * (rng.random::<f64>() - 0.5);
    }
    q
}

pub fn small_batch(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> Batch {
    sample_batch(spec, rng, 12, 8, 6)
}

pub fn random_corr(rng: &mut ChaCha8Rng) -> CorrectionConfig {
    CorrectionConfig::new(rng.random_range(0.05..1.0), rng.random_range(0.5..5.0))
}

pub fn random_weights(rng: &mut ChaCha8Rng) -> LossWeights {
    LossWeights::new(rng.random_range(0.5..5.0), rng.random_range(0.5..5.0)).unwrap()
}

/// Scale loss value and gradient at `pk` with snapshot `pkm1`.
pub fn scale_loss(
    spec: &ProblemSpec,
    cfg: &NetworkConfig,
    pk: &ParameterSet,
    pkm1: &ParameterSet,
    batch: &Batch,
    w: &LossWeights,
    corr: &CorrectionConfig,
) -> (f64, Vec<f64>) {
    let mut tape = Tape::new(pk.len());
    let (loss, _) = assemble_scale_loss(&mut tape, spec, cfg, pk, pkm1, batch, w, corr).unwrap();
    let g = tape.backward(loss).unwrap();
    (tape.scalar(loss), g.params)
}

pub fn scale_loss_value(
    spec: &ProblemSpec,
    cfg: &NetworkConfig,
    pk: &ParameterSet,
    pkm1: &ParameterSet,
    batch: &Batch,
    w: &LossWeights,
    corr: &CorrectionConfig,
) -> f64 {
    let mut tape = Tape::inference(pk.len());
    let (loss, _) = assemble_scale_loss(&mut tape, spec, cfg, pk, pkm1, batch, w, corr).unwrap();
    tape.scalar(loss)
}

pub fn baseline_loss(
    spec: &ProblemSpec,
    cfg: &NetworkConfig,
    p: &ParameterSet,
    batch: &Batch,
    w: &LossWeights,
) -> (f64, Vec<f64>) {
    let mut tape = Tape::new(p.len());
    let (loss, _) = assemble_baseline_loss(&mut tape, spec, cfg, p, batch, w).unwrap();
    let g = tape.backward(loss).unwrap();
    (tape.scalar(loss), g.params)
}

/// Fourth-order central difference of `f` along `dir` at `p`.
pub fn directional_fd(f: &dyn Fn(&ParameterSet) -> f64, p: &ParameterSet, dir: &[f64], eps: f64) -> f64 {
    let shifted = |s: f64| {
        let mut q = p.clone();
        for (v, d) in q.flat_mut().iter_mut().zip(dir) {
            *v += s * d;
        }
        f(&q)
    };
    (-shifted(2.0 * eps) + 8.0 * shifted(eps) - 8.0 * shifted(-eps) + shifted(-2.0 * eps)) / (12.0 * eps)
}

pub fn unit_direction(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Richardson-extrapolated central difference at the step where two
/// consecutive estimates agree best, balancing truncation and round-off.
pub fn adaptive_difference(f: &dyn Fn(f64) -> f64, x: f64, order: usize) -> f64 {
    use scalepinn::autodiff::richardson_difference;
    let est: Vec<f64> = [6.4e-2, 3.2e-2, 1.6e-2, 8e-3, 4e-3, 2e-3]
        .iter()
        .map(|&h| richardson_difference(f, x, order, h))
        .collect();
    let (i, _) = est
        .windows(2)
        .map(|w| (w[0] - w[1]).abs())
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    est[i + 1]
}

/// Worst relative discrepancy between jet derivatives and extrapolated
/// central differences over `cases` random networks and points, split into orders
/// 1-2 and 3-4. Values below `floor` in magnitude are compared absolutely.
pub fn jet_fd_sweep(cases: usize, seed: u64, floor: f64) -> (f64, f64) {
    use scalepinn::autodiff::relative_error;
    use scalepinn::network::{forward, forward_bundle, DerivRequest, InputMap};
    let names = ["u", "v", "p"].map(String::from);
    let mut r = rng(seed);
    let (mut low, mut high) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let dim = r.random_range(1..=3);
        let n_out = r.random_range(1..=3);
        let cfg = random_net(&mut r, dim, &names[..n_out]);
        let params = random_params(&cfg, &mut r, 0.2);
        let x: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::inference(params.len());
        let req = DerivRequest::uniform(n_out, vec![4; dim]);
        let b = forward_bundle(&mut tape, &params, &cfg, &x, &InputMap::identity(dim), &req).unwrap();
        for o in 0..n_out {
            for a in 0..dim {
                let along = |s: f64| {
                    let mut y = x.clone();
                    y[a] = s;
                    forward(&params, &cfg, &y).unwrap()[o]
                };
                for k in 1..=4 {
                    let exact = tape.value(b.deriv(o, a, k).unwrap()).data()[0];
                    let fd = adaptive_difference(&along, x[a], k);
                    let e = relative_error(exact, fd, floor);
                    if k <= 2 {
                        low = low.max(e);
                    } else {
                        high = high.max(e);
                    }
                }
            }
        }
    }
    (low, high)
}

/// Worst relative discrepancy between the taped gradient of the scale loss
/// and a directional finite difference, over `cases` random configurations
/// cycling through every benchmark.
pub fn gradient_sweep(cases: usize, seed: u64) -> f64 {
    let problems = all_problems();
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..cases {
        let spec = &problems[i % problems.len()];
        let cfg = net_for(spec, &mut r);
        let pk = random_params(&cfg, &mut r, 0.2);
        let pkm1 = perturb(&pk, &mut r, 0.05);
        let batch = small_batch(spec, &mut r);
        let w = random_weights(&mut r);
        let corr = random_corr(&mut r);
        let (_, grad) = scale_loss(spec, &cfg, &pk, &pkm1, &batch, &w, &corr);
        let dir = unit_direction(pk.len(), &mut r);
        let f = |p: &ParameterSet| scale_loss_value(spec, &cfg, p, &pkm1, &batch, &w, &corr);
        let fd = directional_fd(&f, &pk, &dir, 1e-4);
        let exact = dot(&grad, &dir);
        worst = worst.max((exact - fd).abs() / exact.abs().max(1e-8));
    }
    worst
}
