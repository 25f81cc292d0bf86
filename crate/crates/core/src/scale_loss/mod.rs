//! The sequentially corrected objective and its uncorrected baseline.
//!
//! ```text
//! L_sc(w^k) = Σ_eq mean((r_eq + S_eq)²) + λ_ic L_ic + λ_bc L_bc
//! ```
//!
//! `r_eq` is the PDE residual at the current weights and `S_eq` the
//! correction term built from the current weights and a frozen snapshot of
//! the previous ones. The snapshot enters the tape as constants, so the
//! gradient flows only through the current network. With the correction
//! disabled the assembly is exactly the baseline loss.

mod linear;

pub use linear::{linear_iterate, linear_sc_equivalence, LinearMethod, LinearRun};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::network::{forward_bundle, DerivBundle, NetworkConfig, ParameterSet};
use crate::problems::{correction_term, ic_bc_residuals, pde_residual, Batch, ProblemSpec};

/// Correction hyperparameters. `γ` comes from the problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionConfig {
    pub tau_sc: f64,
    pub tau_alpha: f64,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

fn default_true() -> bool {
    true
}

impl CorrectionConfig {
    pub fn new(tau_sc: f64, tau_alpha: f64) -> CorrectionConfig {
        CorrectionConfig {
            tau_sc,
            tau_alpha,
            enabled: true,
        }
    }

    pub fn disabled() -> CorrectionConfig {
        CorrectionConfig {
            tau_sc: 1.0,
            tau_alpha: 1.0,
            enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_sc > 0.0 && self.tau_sc.is_finite()) {
            return Err(Error::config("train.correction.tau_sc", "must be positive and finite"));
        }
        if !(self.tau_alpha > 0.0 && self.tau_alpha.is_finite()) {
            return Err(Error::config("train.correction.tau_alpha", "must be positive and finite"));
        }
        Ok(())
    }

    /// Squared smoothing length `α² = τ_sc γ / τ_α`.
    pub fn filter_length_sq(&self, gamma: f64) -> f64 {
        self.tau_sc * gamma / self.tau_alpha
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_ic: f64,
    pub lambda_bc: f64,
}

impl LossWeights {
    pub fn new(lambda_ic: f64, lambda_bc: f64) -> Result<LossWeights> {
        let w = LossWeights {
            lambda_ic,
            lambda_bc,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("train.weights.lambda_ic", self.lambda_ic), ("train.weights.lambda_bc", self.lambda_bc)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be non-negative and finite"));
            }
        }
        Ok(())
    }
}

/// Component values of one assembled loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// Mean square of `r + S` (or `r`) per equation.
    pub pde: Vec<f64>,
    pub ic: f64,
    pub bc: f64,
    /// Mean square of `S` per equation; empty when the correction is off.
    pub correction: Vec<f64>,
}

impl LossReport {
    pub fn pde_sum(&self) -> f64 {
        self.pde.iter().sum()
    }
}

fn interior_bundle(
    tape: &mut Tape,
    spec: &ProblemSpec,
    cfg: &NetworkConfig,
    params: &ParameterSet,
    batch: &Batch,
) -> Result<DerivBundle> {
    if batch.n_interior() == 0 {
        return Err(Error::config("batch.n_interior", "interior batch is empty"));
    }
    spec.check_network(cfg)?;
    forward_bundle(tape, params, cfg, &batch.interior, &spec.input_map(), &spec.required)
}

/// Adds the weighted IC/BC terms and the total to the tape.
fn finish(
    tape: &mut Tape,
    spec: &ProblemSpec,
    cfg: &NetworkConfig,
    params: &ParameterSet,
    batch: &Batch,
    weights: &LossWeights,
    pde_terms: Vec<Var>,
    correction: Vec<f64>,
) -> Result<(Var, LossReport)> {
    weights.validate()?;
    let (ic, bc) = ic_bc_residuals(spec, tape, params, cfg, batch)?;
    let mut terms: Vec<(Var, f64)> = pde_terms.iter().map(|&v| (v, 1.0)).collect();
    let mut ic_sum = 0.0;
    for r in ic {
        let m = tape.mean_square(r);
        ic_sum += tape.scalar(m);
        terms.push((m, weights.lambda_ic));
    }
    let mut bc_sum = 0.0;
    for r in bc {
        let m = tape.mean_square(r);
        bc_sum += tape.scalar(m);
        terms.push((m, weights.lambda_bc));
    }
    let loss = tape.weighted_sum(&terms);
    let report = LossReport {
        total: tape.scalar(loss),
        pde: pde_terms.iter().map(|&v| tape.scalar(v)).collect(),
        ic: ic_sum,
        bc: bc_sum,
        correction,
    };
    Ok((loss, report))
}

/// The uncorrected objective `Σ mean(r²) + λ_ic L_ic + λ_bc L_bc`.
pub fn assemble_baseline_loss(
    tape: &mut Tape,
    spec: &ProblemSpec,
    cfg: &NetworkConfig,
    params: &ParameterSet,
    batch: &Batch,
    weights: &LossWeights,
) -> Result<(Var, LossReport)> {
    let bundle = interior_bundle(tape, spec, cfg, params, batch)?;
    let residuals = pde_residual(spec, tape, &bundle, &batch.interior)?;
    let pde: Vec<Var> = residuals.into_iter().map(|r| tape.mean_square(r)).collect();
    finish(tape, spec, cfg, params, batch, weights, pde, Vec::new())
}

/// Snapshot derivative bundle at `params_km1`, recorded on `tape` as
/// constants.
pub fn snapshot_bundle(
    tape: &mut Tape,
    spec: &ProblemSpec,
    cfg: &NetworkConfig,
    params_km1: &ParameterSet,
    batch: &Batch,
) -> Result<DerivBundle> {
    let mut side = Tape::inference(params_km1.len());
    let b = interior_bundle(&mut side, spec, cfg, params_km1, batch)?;
    Ok(b.detach_into(&side, tape))
}

/// The corrected objective. The snapshot is evaluated on the same
/// interior points as the current network. With `corr.enabled == false`
/// this is [`assemble_baseline_loss`].
#[allow(clippy::too_many_arguments)]
pub fn assemble_scale_loss(
    tape: &mut Tape,
    spec: &ProblemSpec,
    cfg: &NetworkConfig,
    params_k: &ParameterSet,
    params_km1: &ParameterSet,
    batch: &Batch,
    weights: &LossWeights,
    corr: &CorrectionConfig,
) -> Result<(Var, LossReport)> {
    if !corr.enabled {
        return assemble_baseline_loss(tape, spec, cfg, params_k, batch, weights);
    }
    corr.validate()?;
    if params_km1.len() != params_k.len() {
        return Err(Error::internal("snapshot and current parameters differ in size"));
    }
    let current = interior_bundle(tape, spec, cfg, params_k, batch)?;
    let previous = snapshot_bundle(tape, spec, cfg, params_km1, batch)?;
    let residuals = pde_residual(spec, tape, &current, &batch.interior)?;
    let s = correction_term(spec, tape, &current, &previous, corr.tau_sc, corr.tau_alpha)?;
    let mut pde = Vec::with_capacity(residuals.len());
    let mut s_ms = Vec::with_capacity(s.len());
    for (r, s) in residuals.into_iter().zip(s) {
        let m = tape.mean_square(s);
        s_ms.push(tape.scalar(m));
        let corrected = tape.add(r, s);
        pde.push(tape.mean_square(corrected));
    }
    finish(tape, spec, cfg, params_k, batch, weights, pde, s_ms)
}
