//! Univariate truncated jets.
//!
//! A [`Jet`] carries a value together with its first four derivatives with
//! respect to a single input coordinate. Arithmetic follows the Leibniz rule
//! and composition with an activation follows Faà di Bruno's formula, so a
//! jet pushed through a network yields exact derivatives of the network
//! output along that coordinate.
//!
//! The composition and its adjoint are exposed as free functions
//! ([`compose`], [`compose_adjoint`]) so that the batched tape operations
//! share exactly the same formulas as the scalar type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest derivative order carried by a jet.
pub const MAX_ORDER: usize = 4;

/// Pointwise nonlinearities supported by the jet and tape machinery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sin,
    Silu,
    Softplus,
}

impl Activation {
    /// Value and derivatives of orders 1..=5 at `z`.
    ///
    /// Order five is needed by the adjoint of a fourth-order composition.
    pub fn derivatives(self, z: f64) -> [f64; 6] {
        match self {
            Activation::Sin => {
                let (s, c) = z.sin_cos();
                [s, c, -s, -c, s, c]
            }
            Activation::Silu => {
                let s = sigmoid(z);
                let p = sigmoid_derivatives(s);
                // silu^(n) = z s^(n) + n s^(n-1)
                [
                    z * s,
                    z * p[0] + s,
                    z * p[1] + 2.0 * p[0],
                    z * p[2] + 3.0 * p[1],
                    z * p[3] + 4.0 * p[2],
                    z * p[4] + 5.0 * p[3],
                ]
            }
            Activation::Softplus => {
                let s = sigmoid(z);
                let p = sigmoid_derivatives(s);
                [softplus(z), s, p[0], p[1], p[2], p[3]]
            }
        }
    }

    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Sin => z.sin(),
            Activation::Silu => z * sigmoid(z),
            Activation::Softplus => softplus(z),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Activation::Sin => "sin",
            Activation::Silu => "silu",
            Activation::Softplus => "softplus",
        };
        f.write_str(name)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    // log(1 + e^z) without overflow for large |z|
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// First five derivatives of the logistic sigmoid, as polynomials in `s`.
fn sigmoid_derivatives(s: f64) -> [f64; 5] {
    let q = s * (1.0 - s);
    let s2 = s * s;
    [
        q,
        q * (1.0 - 2.0 * s),
        q * (1.0 - 6.0 * s + 6.0 * s2),
        q * (1.0 - 2.0 * s) * (1.0 - 12.0 * s + 12.0 * s2),
        q * (1.0 - 30.0 * s + 150.0 * s2 - 240.0 * s2 * s + 120.0 * s2 * s2),
    ]
}

/// Derivatives of `phi(z(t))` of orders 1..=order from the derivatives
/// `dz[0..order]` of the inner function and `phi[1..=order]`.
///
/// Writes into `out[0..order]`.
#[inline]
pub fn compose(phi: &[f64; 6], dz: &[f64], out: &mut [f64]) {
    let order = dz.len();
    if order == 0 {
        return;
    }
    let z1 = dz[0];
    out[0] = phi[1] * z1;
    if order == 1 {
        return;
    }
    let z2 = dz[1];
    let z1s = z1 * z1;
    out[1] = phi[2] * z1s + phi[1] * z2;
    if order == 2 {
        return;
    }
    let z3 = dz[2];
    out[2] = phi[3] * z1s * z1 + 3.0 * phi[2] * z1 * z2 + phi[1] * z3;
    if order == 3 {
        return;
    }
    let z4 = dz[3];
    out[3] = phi[4] * z1s * z1s
        + 6.0 * phi[3] * z1s * z2
        + phi[2] * (3.0 * z2 * z2 + 4.0 * z1 * z3)
        + phi[1] * z4;
}

/// Adjoint of [`compose`] for one axis.
///
/// Given output adjoints `dy[0..order]` (for derivative orders 1..=order),
/// accumulates the adjoint of the inner value into the return value and
/// the adjoints of the inner derivatives into `dz_bar[0..order]`.
#[inline]
pub fn compose_adjoint(phi: &[f64; 6], dz: &[f64], dy: &[f64], dz_bar: &mut [f64]) -> f64 {
    let order = dz.len();
    let mut z0_bar = 0.0;
    if order == 0 {
        return z0_bar;
    }
    let z1 = dz[0];
    let y1 = dy[0];
    z0_bar += y1 * phi[2] * z1;
    dz_bar[0] += y1 * phi[1];
    if order == 1 {
        return z0_bar;
    }
    let z2 = dz[1];
    let y2 = dy[1];
    let z1s = z1 * z1;
    z0_bar += y2 * (phi[3] * z1s + phi[2] * z2);
    dz_bar[0] += y2 * 2.0 * phi[2] * z1;
    dz_bar[1] += y2 * phi[1];
    if order == 2 {
        return z0_bar;
    }
    let z3 = dz[2];
    let y3 = dy[2];
    z0_bar += y3 * (phi[4] * z1s * z1 + 3.0 * phi[3] * z1 * z2 + phi[2] * z3);
    dz_bar[0] += y3 * (3.0 * phi[3] * z1s + 3.0 * phi[2] * z2);
    dz_bar[1] += y3 * 3.0 * phi[2] * z1;
    dz_bar[2] += y3 * phi[1];
    if order == 3 {
        return z0_bar;
    }
    let z4 = dz[3];
    let y4 = dy[3];
    z0_bar += y4
        * (phi[5] * z1s * z1s
            + 6.0 * phi[4] * z1s * z2
            + phi[3] * (3.0 * z2 * z2 + 4.0 * z1 * z3)
            + phi[2] * z4);
    dz_bar[0] += y4 * (4.0 * phi[4] * z1s * z1 + 12.0 * phi[3] * z1 * z2 + 4.0 * phi[2] * z3);
    dz_bar[1] += y4 * (6.0 * phi[3] * z1s + 6.0 * phi[2] * z2);
    dz_bar[2] += y4 * 4.0 * phi[2] * z1;
    dz_bar[3] += y4 * phi[1];
    z0_bar
}

const BINOMIAL: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

/// Value and derivatives up to order 4 along one coordinate.
///
/// `coeffs[k]` is the k-th derivative (not the Taylor coefficient), so the
/// jet of `x^2` at 3 reads `(9, 6, 2, 0, 0)`. Slots beyond `order` are zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    coeffs: [f64; 5],
    order: usize,
}

/// Binary operations on jets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JetOp {
    Add,
    Sub,
    Mul,
    Scale,
}

/// Right-hand operand of [`Jet::combine`].
#[derive(Clone, Copy, Debug)]
pub enum Operand {
    Jet(Jet),
    Real(f64),
}

impl Jet {
    /// Lifts `x` into a jet of the given order. An active lift seeds the
    /// first derivative with one; a constant lift has all derivatives zero.
    pub fn lift(x: f64, active: bool, order: usize) -> Result<Jet> {
        if order > MAX_ORDER {
            return Err(Error::config(
                "order",
                format!("jet order {order} exceeds the maximum of {MAX_ORDER}"),
            ));
        }
        let mut coeffs = [0.0; 5];
        coeffs[0] = x;
        if active && order >= 1 {
            coeffs[1] = 1.0;
        }
        Ok(Jet { coeffs, order })
    }

    pub fn constant(x: f64, order: usize) -> Result<Jet> {
        Jet::lift(x, false, order)
    }

    pub fn variable(x: f64, order: usize) -> Result<Jet> {
        Jet::lift(x, true, order)
    }

    /// Builds a jet from explicit derivative values. Entries beyond the
    /// order are ignored.
    pub fn from_derivatives(derivs: &[f64], order: usize) -> Result<Jet> {
        let mut jet = Jet::lift(0.0, false, order)?;
        for (k, &d) in derivs.iter().enumerate().take(order + 1) {
            jet.coeffs[k] = d;
        }
        Ok(jet)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// The k-th derivative; zero for k beyond the order.
    pub fn derivative(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn coeffs(&self) -> &[f64; 5] {
        &self.coeffs
    }

    pub fn combine(op: JetOp, a: Jet, b: Operand) -> Result<Jet> {
        match (op, b) {
            (JetOp::Scale, Operand::Real(c)) => Ok(a.scale(c)),
            (JetOp::Scale, Operand::Jet(_)) => Err(Error::internal("scale expects a real operand")),
            (_, Operand::Real(c)) => {
                let b = Jet::constant(c, a.order)?;
                Jet::combine(op, a, Operand::Jet(b))
            }
            (op, Operand::Jet(b)) => {
                if a.order != b.order {
                    return Err(Error::internal(format!(
                        "jet order mismatch: {} vs {}",
                        a.order, b.order
                    )));
                }
                Ok(match op {
                    JetOp::Add => a.zip(&b, |x, y| x + y),
                    JetOp::Sub => a.zip(&b, |x, y| x - y),
                    JetOp::Mul => a.leibniz(&b),
                    JetOp::Scale => unreachable!(),
                })
            }
        }
    }

    pub fn scale(&self, c: f64) -> Jet {
        let mut out = *self;
        for k in 0..=self.order {
            out.coeffs[k] *= c;
        }
        out
    }

    fn zip(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        let mut out = *self;
        for k in 0..=self.order {
            out.coeffs[k] = f(self.coeffs[k], other.coeffs[k]);
        }
        out
    }

    fn leibniz(&self, other: &Jet) -> Jet {
        let mut out = Jet {
            coeffs: [0.0; 5],
            order: self.order,
        };
        for n in 0..=self.order {
            let mut acc = 0.0;
            for k in 0..=n {
                acc += BINOMIAL[n][k] * self.coeffs[k] * other.coeffs[n - k];
            }
            out.coeffs[n] = acc;
        }
        out
    }

    /// Applies a pointwise activation.
    pub fn activate(&self, kind: Activation) -> Jet {
        let phi = kind.derivatives(self.coeffs[0]);
        let mut out = Jet {
            coeffs: [0.0; 5],
            order: self.order,
        };
        out.coeffs[0] = phi[0];
        let (_, tail) = out.coeffs.split_at_mut(1);
        compose(&phi, &self.coeffs[1..=self.order], &mut tail[..self.order]);
        out
    }
}

impl std::ops::Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        Jet::combine(JetOp::Add, self, Operand::Jet(rhs)).expect("jet orders must match")
    }
}

impl std::ops::Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        Jet::combine(JetOp::Sub, self, Operand::Jet(rhs)).expect("jet orders must match")
    }
}

impl std::ops::Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        Jet::combine(JetOp::Mul, self, Operand::Jet(rhs)).expect("jet orders must match")
    }
}

impl std::ops::Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}
