//! Steady lid-driven cavity by the vorticity-streamfunction method.
//!
//! `∇²ψ = -ω`, `u ω_x + v ω_y = ∇²ω / Re`, `u = ψ_y`, `v = -ψ_x`, on an
//! `n x n` node grid with second-order central differences. Wall vorticity
//! follows Thom's formula; the lid adds `-2U/h`. Each outer iteration does
//! one under-relaxed Gauss-Seidel sweep on ω and one SOR sweep on ψ.

use super::{Axis, FieldGrid};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CavityOptions {
    pub re: f64,
    pub n: usize,
    pub u_lid: f64,
    /// Stop when the largest ω and ψ corrections per sweep fall below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Under-relaxation for ω.
    pub omega_relax: f64,
}

impl CavityOptions {
    pub fn new(re: f64, n: usize) -> CavityOptions {
        CavityOptions {
            re,
            n,
            u_lid: 1.0,
            tol: 1e-10,
            max_iters: 400_000,
            omega_relax: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CavityReport {
    pub iterations: usize,
    pub final_update: f64,
    /// Streamfunction on the node grid, row-major with `y` fastest.
    pub psi: Vec<f64>,
    pub grid: FieldGrid,
}

/// Solves and returns `u`, `v` on the node grid (`x` slowest).
pub fn cavity_solve(opts: &CavityOptions) -> Result<CavityReport> {
    let n = opts.n;
    if n < 33 || n.is_multiple_of(2) {
        return Err(Error::config("reference.n", "cavity grid needs an odd n >= 33"));
    }
    if !(opts.re > 0.0) {
        return Err(Error::config("problem.Re", "must be positive"));
    }
    if opts.re > 1000.0 {
        return Err(Error::config(
            "problem.Re",
            "the cavity reference solver is limited to Re <= 1000",
        ));
    }
    let h = 1.0 / (n - 1) as f64;
    let idx = |i: usize, j: usize| i * n + j;
    let mut psi = vec![0.0; n * n];
    let mut omega = vec![0.0; n * n];
    let sor = 2.0 / (1.0 + (std::f64::consts::PI * h).sin());
    let half_reh = 0.5 * opts.re * h;
    let r = opts.omega_relax;
    let mut last = f64::INFINITY;
    for iter in 1..=opts.max_iters {
        for k in 0..n {
            omega[idx(k, 0)] = -2.0 * psi[idx(k, 1)] / (h * h);
            omega[idx(0, k)] = -2.0 * psi[idx(1, k)] / (h * h);
            omega[idx(n - 1, k)] = -2.0 * psi[idx(n - 2, k)] / (h * h);
        }
        for i in 1..n - 1 {
            omega[idx(i, n - 1)] = -2.0 * psi[idx(i, n - 2)] / (h * h) - 2.0 * opts.u_lid / h;
        }
        let mut d_omega = 0.0f64;
        let mut scale = 0.0f64;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let u = (psi[idx(i, j + 1)] - psi[idx(i, j - 1)]) / (2.0 * h);
                let v = -(psi[idx(i + 1, j)] - psi[idx(i - 1, j)]) / (2.0 * h);
                let (e, w) = (omega[idx(i + 1, j)], omega[idx(i - 1, j)]);
                let (nn, s) = (omega[idx(i, j + 1)], omega[idx(i, j - 1)]);
                let target = 0.25 * (e + w + nn + s - half_reh * (u * (e - w) + v * (nn - s)));
                let old = omega[idx(i, j)];
                let new = old + r * (target - old);
                d_omega = d_omega.max((new - old).abs());
                scale = scale.max(new.abs());
                omega[idx(i, j)] = new;
            }
        }
        let mut d_psi = 0.0f64;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let target = 0.25
                    * (psi[idx(i + 1, j)] + psi[idx(i - 1, j)] + psi[idx(i, j + 1)] + psi[idx(i, j - 1)]
                        + h * h * omega[idx(i, j)]);
                let old = psi[idx(i, j)];
                let new = old + sor * (target - old);
                d_psi = d_psi.max((new - old).abs());
                psi[idx(i, j)] = new;
            }
        }
        let update = (d_omega / scale.max(1.0)).max(d_psi / (h * h));
        if !update.is_finite() {
            return Err(Error::Diverged {
                step: iter,
                message: "cavity iteration produced non-finite values".into(),
            });
        }
        last = update;
        if update < opts.tol {
            let grid = velocities(&psi, n, h, opts.u_lid)?;
            return Ok(CavityReport {
                iterations: iter,
                final_update: update,
                psi,
                grid,
            });
        }
    }
    Err(Error::Numeric(format!(
        "cavity solver did not converge in {} iterations (last update {last:e})",
        opts.max_iters
    )))
}

fn velocities(psi: &[f64], n: usize, h: f64, u_lid: f64) -> Result<FieldGrid> {
    let idx = |i: usize, j: usize| i * n + j;
    let mut u = vec![0.0; n * n];
    let mut v = vec![0.0; n * n];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            u[idx(i, j)] = (psi[idx(i, j + 1)] - psi[idx(i, j - 1)]) / (2.0 * h);
            v[idx(i, j)] = -(psi[idx(i + 1, j)] - psi[idx(i - 1, j)]) / (2.0 * h);
        }
        u[idx(i, n - 1)] = u_lid;
    }
    FieldGrid::new(
        "cavity",
        vec![Axis::new("x", n, 0.0, 1.0), Axis::new("y", n, 0.0, 1.0)],
        vec![u, v],
    )
}

/// Central-difference divergence of a cavity grid at nodes at least two
/// cells from the boundary.
pub fn discrete_divergence(grid: &FieldGrid) -> Vec<f64> {
    let n = grid.axes[0].n;
    let h = grid.axes[0].spacing();
    let (u, v) = (&grid.values[0], &grid.values[1]);
    let idx = |i: usize, j: usize| i * n + j;
    let mut out = Vec::new();
    for i in 2..n.saturating_sub(2) {
        for j in 2..n - 2 {
            let ux = (u[idx(i + 1, j)] - u[idx(i - 1, j)]) / (2.0 * h);
            let vy = (v[idx(i, j + 1)] - v[idx(i, j - 1)]) / (2.0 * h);
            out.push(ux + vy);
        }
    }
    out
}

/// Richardson extrapolation from grids `n` and `2n - 1` onto the coarse
/// nodes: `f = f_fine + (f_fine - f_coarse) / 3`.
pub fn cavity_extrapolated(opts: &CavityOptions) -> Result<FieldGrid> {
    let coarse = cavity_solve(opts)?.grid;
    let fine_opts = CavityOptions {
        n: 2 * opts.n - 1,
        ..opts.clone()
    };
    let fine = cavity_solve(&fine_opts)?.grid;
    let n = opts.n;
    let nf = fine_opts.n;
    let values = coarse
        .values
        .iter()
        .zip(&fine.values)
        .map(|(c, f)| {
            (0..n * n)
                .map(|s| {
                    let (i, j) = (s / n, s % n);
                    let ff = f[2 * i * nf + 2 * j];
                    ff + (ff - c[s]) / 3.0
                })
                .collect()
        })
        .collect();
    FieldGrid::new("cavity", coarse.axes.clone(), values)
}
