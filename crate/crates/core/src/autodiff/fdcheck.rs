//! Finite-difference cross-checks for jet derivatives.

use super::jet::{Jet, MAX_ORDER};

/// Fourth-order accurate central stencils for derivatives 1..=4, as
/// `(offsets, weights, divisor)`; the derivative is
/// `sum(w_i f(x + o_i h)) / (divisor h^order)`.
const STENCILS: [(&[i32], &[f64], f64); 4] = [
    (&[-2, -1, 1, 2], &[1.0, -8.0, 8.0, -1.0], 12.0),
    (&[-2, -1, 0, 1, 2], &[-1.0, 16.0, -30.0, 16.0, -1.0], 12.0),
    (
        &[-3, -2, -1, 1, 2, 3],
        &[1.0, -8.0, 13.0, -13.0, 8.0, -1.0],
        8.0,
    ),
    (
        &[-3, -2, -1, 0, 1, 2, 3],
        &[-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0],
        6.0,
    ),
];

/// Step sizes balancing truncation and roundoff for each order.
pub const DEFAULT_STEPS: [f64; 4] = [1e-3, 1e-3, 4e-3, 1.5e-2];

/// Central finite difference of `f` at `x` for derivative order 1..=4.
pub fn central_difference(f: &dyn Fn(f64) -> f64, x: f64, order: usize, h: f64) -> f64 {
    assert!((1..=MAX_ORDER).contains(&order));
    let (offsets, weights, divisor) = STENCILS[order - 1];
    let sum: f64 = offsets
        .iter()
        .zip(weights)
        .map(|(&o, &w)| w * f(x + o as f64 * h))
        .sum();
    sum / (divisor * h.powi(order as i32))
}

/// Richardson combination `(16 D(h/2) - D(h)) / 15` of two central
/// differences, which cancels the leading `h⁴` truncation term.
pub fn richardson_difference(f: &dyn Fn(f64) -> f64, x: f64, order: usize, h: f64) -> f64 {
    let coarse = central_difference(f, x, order, h);
    let fine = central_difference(f, x, order, 0.5 * h);
    (16.0 * fine - coarse) / 15.0
}

/// Relative discrepancy `|a - b| / |a|`, or the absolute one when
/// `|a| < floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if analytic.abs() < floor {
        diff
    } else {
        diff / analytic.abs()
    }
}

/// Largest relative discrepancy between the jet derivatives of `f` at `x`
/// and central finite differences, over orders `1..=order`.
///
/// `h <= 0` selects [`DEFAULT_STEPS`] per order. Derivatives whose exact
/// value is below `1e-8` in magnitude are compared absolutely.
pub fn fd_check(f: &dyn Fn(Jet) -> Jet, x: f64, order: usize, h: f64) -> f64 {
    let order = order.min(MAX_ORDER);
    let jet = f(Jet::variable(x, order).expect("order is clamped"));
    let scalar = |p: f64| f(Jet::constant(p, 0).expect("order 0")).value();
    (1..=order)
        .map(|k| {
            let step = if h > 0.0 { h } else { DEFAULT_STEPS[k - 1] };
            let numeric = central_difference(&scalar, x, k, step);
            relative_error(jet.derivative(k), numeric, 1e-8)
        })
        .fold(0.0, f64::max)
}
