//! Residual-correction iterations on dense linear systems, and the check
//! that one Richardson step is the exact minimiser of the corrected
//! quadratic loss with the solution vector as the parameter set.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinearMethod {
    /// `B = I / ξ`.
    Richardson(f64),
    /// `B = D`.
    Jacobi,
    /// `B = D + L`.
    GaussSeidel,
}

/// Iterates `u^1..u^n` and `‖h - A u^k‖₂` for each.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRun {
    pub iterates: Vec<Vec<f64>>,
    pub residual_norms: Vec<f64>,
}

fn check_square(a: &[Vec<f64>], h: &[f64], u0: &[f64]) -> Result<usize> {
    let n = a.len();
    if a.iter().any(|row| row.len() != n) || h.len() != n || u0.len() != n {
        return Err(Error::config("matrix", "A must be square and match h and u0"));
    }
    Ok(n)
}

fn residual(a: &[Vec<f64>], h: &[f64], u: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(h)
        .map(|(row, &hi)| hi - row.iter().zip(u).map(|(x, y)| x * y).sum::<f64>())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `u^{k+1} = u^k + B⁻¹ (h - A u^k)`.
pub fn linear_iterate(
    method: LinearMethod,
    a: &[Vec<f64>],
    h: &[f64],
    u0: &[f64],
    iters: usize,
) -> Result<LinearRun> {
    let n = check_square(a, h, u0)?;
    if !matches!(method, LinearMethod::Richardson(_)) {
        if let Some(i) = (0..n).find(|&i| a[i][i] == 0.0) {
            return Err(Error::Numeric(format!("zero diagonal entry at row {i}")));
        }
    }
    if let LinearMethod::Richardson(xi) = method {
        if !(xi.is_finite() && xi != 0.0) {
            return Err(Error::config("xi", "must be finite and non-zero"));
        }
    }
    let mut u = u0.to_vec();
    let mut run = LinearRun {
        iterates: Vec::with_capacity(iters),
        residual_norms: Vec::with_capacity(iters),
    };
    for _ in 0..iters {
        let r = residual(a, h, &u);
        let du: Vec<f64> = match method {
            LinearMethod::Richardson(xi) => r.iter().map(|v| xi * v).collect(),
            LinearMethod::Jacobi => (0..n).map(|i| r[i] / a[i][i]).collect(),
            LinearMethod::GaussSeidel => {
                // forward substitution with the lower triangle
                let mut x = vec![0.0; n];
                for i in 0..n {
                    let s: f64 = (0..i).map(|j| a[i][j] * x[j]).sum();
                    x[i] = (r[i] - s) / a[i][i];
                }
                x
            }
        };
        for (ui, d) in u.iter_mut().zip(&du) {
            *ui += d;
        }
        run.residual_norms.push(norm(&residual(a, h, &u)));
        run.iterates.push(u.clone());
    }
    Ok(run)
}

/// Solves the symmetric positive definite system `m x = b` by Cholesky.
fn cholesky_solve(m: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if d <= 0.0 {
                    return Err(Error::Numeric("normal matrix is not positive definite".into()));
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    Ok(x)
}

/// Minimises `‖B(u - u_prev) + (A u_prev - h)‖²` over `u` for
/// `B = I / ξ` at each step, by solving the normal equations, and returns
/// the largest elementwise gap to the Richardson iterates.
pub fn linear_sc_equivalence(a: &[Vec<f64>], h: &[f64], xi: f64, steps: usize) -> Result<f64> {
    let n = check_square(a, h, h)?;
    let u0 = vec![0.0; n];
    let reference = linear_iterate(LinearMethod::Richardson(xi), a, h, &u0, steps)?;
    let b: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 / xi } else { 0.0 }).collect())
        .collect();
    // BᵀB
    let btb: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| b[k][i] * b[k][j]).sum()).collect())
        .collect();
    let mut u = u0;
    let mut worst = 0.0f64;
    for reference_u in &reference.iterates {
        // gradient zero: BᵀB δ = Bᵀ (h - A u_prev)
        let r = residual(a, h, &u);
        let rhs: Vec<f64> = (0..n).map(|i| (0..n).map(|k| b[k][i] * r[k]).sum()).collect();
        let delta = cholesky_solve(&btb, &rhs)?;
        for (ui, d) in u.iter_mut().zip(&delta) {
            *ui += d;
        }
        for (x, y) in u.iter().zip(reference_u) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}
