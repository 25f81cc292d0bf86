//! The outer training loop: mini-batch sampling, loss assembly with the
//! lagged snapshot, Adam with warm-up cosine decay, and metrics.
//!
//! The snapshot starts equal to the initial weights and then trails the
//! current weights by exactly one optimizer step.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::network::{forward_bundle, forward_values, init_params, DerivRequest, NetworkConfig, ParameterSet};
use crate::problems::{sample_batch, Batch, ProblemKind, ProblemSpec};
use crate::reference::FieldGrid;
use crate::scale_loss::{assemble_scale_loss, CorrectionConfig, LossReport, LossWeights};

/// Floor of the cosine schedule.
pub const LR_MIN: f64 = 1e-10;

fn default_warmup() -> f64 {
    0.02
}

fn default_eval_every() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Interior collocation points per step.
    pub batch_size: usize,
    /// Boundary points per step; a quarter of `batch_size` when absent.
    #[serde(default)]
    pub batch_bc: Option<usize>,
    /// Initial-condition points per step; a quarter of `batch_size` when
    /// absent.
    #[serde(default)]
    pub batch_ic: Option<usize>,
    pub learning_rate: f64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub correction: CorrectionConfig,
    pub weights: LossWeights,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate > LR_MIN && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must exceed the 1e-10 floor"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("train.warmup_fraction", "must lie in [0, 1)"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval_every", "must be positive"));
        }
        if self.correction.enabled {
            self.correction.validate()?;
        }
        self.weights.validate()
    }

    pub fn n_bc(&self) -> usize {
        self.batch_bc.unwrap_or(self.batch_size / 4)
    }

    pub fn n_ic(&self) -> usize {
        self.batch_ic.unwrap_or(self.batch_size / 4)
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.iterations as f64).floor() as usize
    }
}

/// Learning rate at `iter` (0..=N): a linear ramp from 0 to `η₀` over the
/// warm-up steps, then `LR_MIN + ½(η₀ - LR_MIN)(1 + cos πs)` with `s` the
/// post-warm-up progress.
pub fn lr_at(iter: usize, cfg: &TrainConfig) -> f64 {
    let n = cfg.iterations;
    let warm = cfg.warmup_steps();
    let eta = cfg.learning_rate;
    if iter < warm {
        return eta * iter as f64 / warm as f64;
    }
    if n <= warm {
        return eta;
    }
    let s = ((iter - warm) as f64 / (n - warm) as f64).min(1.0);
    LR_MIN + 0.5 * (eta - LR_MIN) * (1.0 + (std::f64::consts::PI * s).cos())
}

/// Adam moments and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(n: usize) -> AdamState {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], state: &mut AdamState, grad: &[f64], lr: f64) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != grad.len() || state.v.len() != grad.len() {
        return Err(Error::internal("adam: parameter, gradient and moment lengths differ"));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient entry {i}: {}", grad[i])));
    }
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Accuracy against a reference grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMetrics {
    pub names: Vec<String>,
    pub rel_l2: Vec<f64>,
    pub mse: Vec<f64>,
    /// Relative L2 of all compared outputs taken together.
    pub overall_rel_l2: f64,
    /// Cavity only: mean square of `u_x + v_y` at interior grid nodes.
    pub div_mse: Option<f64>,
    /// Cavity only: relative L2 of the velocity vector `(u, v)`.
    pub velocity_rel_l2: Option<f64>,
    /// Cavity only: mean of the `u` and `v` MSEs.
    pub velocity_mse: Option<f64>,
}

/// Names of the outputs compared against a reference.
pub fn metric_outputs(spec: &ProblemSpec) -> Vec<String> {
    match spec.kind {
        ProblemKind::Cavity => vec!["u".into(), "v".into()],
        _ => spec.outputs.clone(),
    }
}

/// `‖pred - ref‖₂ / ‖ref‖₂` and the mean squared difference.
pub fn rel_l2_and_mse(pred: &[f64], reference: &[f64]) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, r) in pred.iter().zip(reference) {
        num += (p - r) * (p - r);
        den += r * r;
    }
    let n = reference.len().max(1) as f64;
    ((num / den).sqrt(), num / n)
}

pub fn evaluate(
    params: &ParameterSet,
    net_cfg: &NetworkConfig,
    spec: &ProblemSpec,
    reference: &FieldGrid,
) -> Result<EvalMetrics> {
    spec.check_network(net_cfg)?;
    if reference.axes.len() != spec.n_axes() {
        return Err(Error::config(
            "reference",
            format!("grid has {} axes, `{}` needs {}", reference.axes.len(), spec.name, spec.n_axes()),
        ));
    }
    let names = metric_outputs(spec);
    let mut columns = Vec::new();
    for name in &names {
        columns.push(reference.variable(name).ok_or_else(|| {
            Error::config("reference", format!("grid lacks variable `{name}`"))
        })?);
    }
    let points = reference.points();
    let map = spec.input_map();
    let pred = forward_values(params, net_cfg, &points, &map)?;
    let mut rel_l2 = Vec::new();
    let mut mse = Vec::new();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, col) in columns.iter().enumerate() {
        let (r, m) = rel_l2_and_mse(&pred[k], col);
        rel_l2.push(r);
        mse.push(m);
        for (p, q) in pred[k].iter().zip(col.iter()) {
            num += (p - q) * (p - q);
            den += q * q;
        }
    }
    let overall_rel_l2 = (num / den).sqrt();
    let (mut div_mse, mut velocity_rel_l2, mut velocity_mse) = (None, None, None);
    if spec.kind == ProblemKind::Cavity {
        velocity_rel_l2 = Some(overall_rel_l2);
        velocity_mse = Some(0.5 * (mse[0] + mse[1]));
        div_mse = Some(divergence_mse(params, net_cfg, spec, reference)?);
    }
    Ok(EvalMetrics {
        names,
        rel_l2,
        mse,
        overall_rel_l2,
        div_mse,
        velocity_rel_l2,
        velocity_mse,
    })
}

/// Mean square of the network's `u_x + v_y` at interior grid nodes.
fn divergence_mse(
    params: &ParameterSet,
    net_cfg: &NetworkConfig,
    spec: &ProblemSpec,
    grid: &FieldGrid,
) -> Result<f64> {
    let (nx, ny) = (grid.axes[0].n, grid.axes[1].n);
    let mut pts = Vec::new();
    for i in 1..nx.saturating_sub(1) {
        for j in 1..ny.saturating_sub(1) {
            pts.push(grid.axes[0].node(i));
            pts.push(grid.axes[1].node(j));
        }
    }
    if pts.is_empty() {
        return Ok(0.0);
    }
    let req = DerivRequest::uniform(spec.n_outputs(), vec![1, 1]);
    let map = spec.input_map();
    let mut sum = 0.0;
    let n = pts.len() / 2;
    for chunk in pts.chunks(2 * 2048) {
        let mut tape = Tape::inference(params.len());
        let b = forward_bundle(&mut tape, params, net_cfg, chunk, &map, &req)?;
        let ux = tape.value(b.deriv(0, 0, 1)?).data();
        let vy = tape.value(b.deriv(1, 1, 1)?).data();
        sum += ux.iter().zip(vy).map(|(a, b)| (a + b) * (a + b)).sum::<f64>();
    }
    Ok(sum / n as f64)
}

/// One metrics record.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    /// Training time so far, evaluation excluded.
    pub wall_time_s: f64,
    pub loss: LossReport,
    pub eval: Option<EvalMetrics>,
}

/// CSV header for a problem's metrics file.
pub fn metrics_header(spec: &ProblemSpec) -> String {
    let mut cols: Vec<String> = ["iter", "wall_time_s", "loss_total", "loss_pde", "loss_ic", "loss_bc"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let outs = metric_outputs(spec);
    cols.extend(outs.iter().map(|o| format!("rel_l2_{o}")));
    cols.extend(outs.iter().map(|o| format!("mse_{o}")));
    if spec.kind == ProblemKind::Cavity {
        cols.push("div_mse".into());
    }
    cols.join(",")
}

/// CSV line for one row; missing evaluations are written as `NaN`.
pub fn metrics_line(spec: &ProblemSpec, row: &MetricsRow) -> String {
    let mut cols = vec![
        row.iter.to_string(),
        row.wall_time_s.to_string(),
        row.loss.total.to_string(),
        row.loss.pde_sum().to_string(),
        row.loss.ic.to_string(),
        row.loss.bc.to_string(),
    ];
    let n = metric_outputs(spec).len();
    match &row.eval {
        Some(e) => {
            cols.extend(e.rel_l2.iter().map(f64::to_string));
            cols.extend(e.mse.iter().map(f64::to_string));
            if let Some(d) = e.div_mse {
                cols.push(d.to_string());
            }
        }
        None => {
            let extra = 2 * n + usize::from(spec.kind == ProblemKind::Cavity);
            cols.extend(std::iter::repeat_n(f64::NAN.to_string(), extra));
        }
    }
    cols.join(",")
}

/// Training state machine. One [`Trainer::step`] is one iteration of the
/// sequential-correction algorithm.
pub struct Trainer<'a> {
    spec: &'a ProblemSpec,
    net_cfg: &'a NetworkConfig,
    cfg: &'a TrainConfig,
    params_k: ParameterSet,
    params_km1: ParameterSet,
    adam: AdamState,
    iter: usize,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    /// Starts from `initial`, or from He initialisation with the network
    /// seed.
    pub fn new(
        spec: &'a ProblemSpec,
        net_cfg: &'a NetworkConfig,
        cfg: &'a TrainConfig,
        initial: Option<ParameterSet>,
    ) -> Result<Trainer<'a>> {
        cfg.validate()?;
        spec.check_network(net_cfg)?;
        let params = match initial {
            Some(p) => p,
            None => init_params(net_cfg)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        // keep batch draws independent of any other use of the seed
        rng.set_stream(1);
        Ok(Trainer {
            spec,
            net_cfg,
            cfg,
            adam: AdamState::new(params.len()),
            params_km1: params.clone(),
            params_k: params,
            iter: 0,
            rng,
        })
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params_k
    }

    pub fn snapshot(&self) -> &ParameterSet {
        &self.params_km1
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn into_params(self) -> ParameterSet {
        self.params_k
    }

    pub fn next_batch(&mut self) -> Batch {
        sample_batch(
            self.spec,
            &mut self.rng,
            self.cfg.batch_size,
            self.cfg.n_bc(),
            self.cfg.n_ic(),
        )
    }

    /// Samples a batch, assembles the loss at the current weights with the
    /// snapshot, and applies one Adam update. Returns the loss components
    /// at the pre-update weights.
    pub fn step(&mut self) -> Result<LossReport> {
        let batch = self.next_batch();
        let mut tape = Tape::new(self.params_k.len());
        let (loss, report) = assemble_scale_loss(
            &mut tape,
            self.spec,
            self.net_cfg,
            &self.params_k,
            &self.params_km1,
            &batch,
            &self.cfg.weights,
            &self.cfg.correction,
        )?;
        let detail = || {
            format!(
                "loss total {} pde {:?} ic {} bc {}",
                report.total, report.pde, report.ic, report.bc
            )
        };
        if !report.total.is_finite() {
            return Err(Error::NonFinite {
                iter: self.iter,
                detail: detail(),
            });
        }
        let grad = tape.backward(loss)?;
        let mut next = self.params_k.clone();
        let lr = lr_at(self.iter + 1, self.cfg);
        adam_step(next.flat_mut(), &mut self.adam, &grad.params, lr).map_err(|e| Error::NonFinite {
            iter: self.iter,
            detail: format!("{e}; {}", detail()),
        })?;
        self.params_km1 = std::mem::replace(&mut self.params_k, next);
        self.iter += 1;
        Ok(report)
    }
}

/// Runs the full schedule. A row is produced every `eval_every`
/// iterations and after the last one; each row is handed to `sink` as
/// soon as it exists so partial metrics survive an abort.
pub fn train(
    spec: &ProblemSpec,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    initial: Option<ParameterSet>,
    reference: Option<&FieldGrid>,
    sink: &mut dyn FnMut(&MetricsRow) -> Result<()>,
) -> Result<(ParameterSet, Vec<MetricsRow>)> {
    let mut trainer = Trainer::new(spec, net_cfg, cfg, initial)?;
    let mut rows = Vec::new();
    let mut elapsed = 0.0;
    for k in 1..=cfg.iterations {
        let t0 = Instant::now();
        let report = trainer.step()?;
        elapsed += t0.elapsed().as_secs_f64();
        if k % cfg.eval_every == 0 || k == cfg.iterations {
            let eval = match reference {
                Some(grid) => Some(evaluate(trainer.params(), net_cfg, spec, grid)?),
                None => None,
            };
            let row = MetricsRow {
                iter: k,
                wall_time_s: elapsed,
                loss: report,
                eval,
            };
            sink(&row)?;
            rows.push(row);
        }
    }
    Ok((trainer.into_params(), rows))
}
