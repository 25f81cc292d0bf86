//! PDE benchmarks as data: coefficients, domains, residuals, the
//! sequential-correction term, boundary/initial residuals and collocation
//! sampling.
//!
//! Coordinates are ordered spatial axes first, then time: `(x, t)`,
//! `(x, y, t)` or `(x, y)` for the steady cavity.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::distr::{Open01, OpenClosed01};
use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::network::{forward_bundle, DerivBundle, DerivRequest, InputMap, NetworkConfig, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    AllenCahn,
    Kdv,
    KuramotoSivashinsky,
    GrayScott,
    Cavity,
    /// `-u'' = π² sin(πx)` on `[-1, 1]` with `u(±1) = 0`; exact solution
    /// `sin(πx)`. Used by tests only.
    Poisson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcKind {
    Periodic,
    DirichletWallsWithLid,
    Dirichlet,
}

/// Where a boundary point sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcTag {
    /// Low end of a periodic pair along `axis`.
    PeriodicLo(usize),
    /// High end of a periodic pair along `axis`.
    PeriodicHi(usize),
    /// Cavity side or bottom wall, corners included.
    Wall,
    /// Open top edge of the cavity.
    Lid,
    /// Homogeneous Dirichlet point.
    Fixed,
}

/// One benchmark problem. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub kind: ProblemKind,
    pub spatial_dims: usize,
    pub time_dependent: bool,
    /// Lower bound per axis, time last (0 for time).
    pub lo: Vec<f64>,
    /// Upper bound per axis, time last (the horizon `T`).
    pub hi: Vec<f64>,
    pub coefficients: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    /// Required pure derivative orders per output and axis.
    pub required: DerivRequest,
    pub bc_kind: BcKind,
    /// Diffusion-like coefficient per output used in the correction term.
    pub gamma: Vec<f64>,
}

pub const PROBLEM_NAMES: [&str; 5] = [
    "allen_cahn",
    "kdv",
    "kuramoto_sivashinsky",
    "gray_scott",
    "cavity",
];

fn check_overrides(
    name: &str,
    overrides: &BTreeMap<String, f64>,
    allowed: &[&str],
) -> Result<()> {
    for key in overrides.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::config(
                format!("problem.{key}"),
                format!("`{name}` has no coefficient `{key}` (known: {})", allowed.join(", ")),
            ));
        }
    }
    for (key, &v) in overrides {
        if !v.is_finite() {
            return Err(Error::config(format!("problem.{key}"), "must be finite"));
        }
    }
    Ok(())
}

/// Builds a benchmark with its default coefficients, then applies
/// `overrides`. Besides the named coefficients, `T` overrides the time
/// horizon and `gamma_<output>` overrides a correction coefficient.
pub fn make_problem(name: &str, overrides: &BTreeMap<String, f64>) -> Result<ProblemSpec> {
    let (kind, defaults): (ProblemKind, Vec<(&str, f64)>) = match name {
        "allen_cahn" => (ProblemKind::AllenCahn, vec![("alpha", 1e-4), ("delta", 5.0)]),
        "kdv" => (ProblemKind::Kdv, vec![("nu", (11.0f64 / 500.0).powi(2))]),
        "kuramoto_sivashinsky" => (
            ProblemKind::KuramotoSivashinsky,
            vec![("a1", 100.0 / 16.0), ("a2", 100.0 / 256.0), ("a3", 100.0 / 256.0)],
        ),
        "gray_scott" => (
            ProblemKind::GrayScott,
            vec![
                ("eps1", 0.2),
                ("eps2", 0.1),
                ("b1", 40.0),
                ("b2", 100.0),
                ("c1", 1000.0),
                ("c2", 1000.0),
            ],
        ),
        "cavity" => (ProblemKind::Cavity, vec![("Re", 100.0), ("u_lid", 1.0)]),
        _ => {
            return Err(Error::config(
                "problem.name",
                format!("unknown problem `{name}` (known: {})", PROBLEM_NAMES.join(", ")),
            ))
        }
    };
    build(kind, name, defaults, overrides)
}

/// The Poisson test problem. Not reachable through [`make_problem`].
pub fn poisson_problem() -> ProblemSpec {
    build(ProblemKind::Poisson, "poisson", vec![], &BTreeMap::new())
        .expect("fixed coefficients are valid")
}

fn build(
    kind: ProblemKind,
    name: &str,
    defaults: Vec<(&str, f64)>,
    overrides: &BTreeMap<String, f64>,
) -> Result<ProblemSpec> {
    let (outputs, spatial_dims, time_dependent, lo, hi, bc_kind): (
        Vec<&str>,
        usize,
        bool,
        Vec<f64>,
        Vec<f64>,
        BcKind,
    ) = match kind {
        ProblemKind::AllenCahn | ProblemKind::Kdv => {
            (vec!["u"], 1, true, vec![-1.0, 0.0], vec![1.0, 1.0], BcKind::Periodic)
        }
        ProblemKind::KuramotoSivashinsky => (
            vec!["u"],
            1,
            true,
            vec![0.0, 0.0],
            vec![2.0 * PI, 0.4],
            BcKind::Periodic,
        ),
        ProblemKind::GrayScott => (
            vec!["u", "v"],
            2,
            true,
            vec![-1.0, -1.0, 0.0],
            vec![1.0, 1.0, 0.5],
            BcKind::Periodic,
        ),
        ProblemKind::Cavity => (
            vec!["u", "v", "p"],
            2,
            false,
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            BcKind::DirichletWallsWithLid,
        ),
        ProblemKind::Poisson => (vec!["u"], 1, false, vec![-1.0], vec![1.0], BcKind::Dirichlet),
    };
    let mut allowed: Vec<String> = defaults.iter().map(|(k, _)| k.to_string()).collect();
    if time_dependent {
        allowed.push("T".into());
    }
    allowed.extend(outputs.iter().map(|o| format!("gamma_{o}")));
    let allowed_ref: Vec<&str> = allowed.iter().map(String::as_str).collect();
    check_overrides(name, overrides, &allowed_ref)?;

    let mut coefficients: BTreeMap<String, f64> =
        defaults.iter().map(|&(k, v)| (k.to_string(), v)).collect();
    for (k, &v) in overrides {
        if coefficients.contains_key(k) {
            coefficients.insert(k.clone(), v);
        }
    }
    for (k, &v) in &coefficients {
        let ok = if k == "Re" { v > 0.0 } else { v >= 0.0 };
        if !ok {
            let need = if k == "Re" { "positive" } else { "non-negative" };
            return Err(Error::config(format!("problem.{k}"), format!("must be {need}, got {v}")));
        }
    }
    let c = |k: &str| coefficients[k];
    let mut hi = hi;
    if let Some(&t) = overrides.get("T") {
        if t <= 0.0 {
            return Err(Error::config("problem.T", "time horizon must be positive"));
        }
        *hi.last_mut().expect("time axis") = t;
    }

    let n_axes = lo.len();
    let mut gamma = match kind {
        ProblemKind::AllenCahn => vec![c("alpha")],
        ProblemKind::Kdv => vec![c("nu").sqrt()],
        ProblemKind::KuramotoSivashinsky => vec![c("a2")],
        ProblemKind::GrayScott => vec![c("eps1"), c("eps2")],
        ProblemKind::Cavity => vec![1.0 / c("Re"), 1.0 / c("Re"), 0.0],
        ProblemKind::Poisson => vec![1.0],
    };
    for (k, o) in outputs.iter().enumerate() {
        if let Some(&g) = overrides.get(&format!("gamma_{o}")) {
            if g < 0.0 {
                return Err(Error::config(format!("problem.gamma_{o}"), "must be non-negative"));
            }
            gamma[k] = g;
        }
    }

    // Highest spatial order needed by the residual; at least 2 for the
    // Laplacian in the correction term.
    let required = match kind {
        ProblemKind::AllenCahn => DerivRequest::uniform(1, vec![2, 1]),
        ProblemKind::Kdv => DerivRequest::uniform(1, vec![3, 1]),
        ProblemKind::KuramotoSivashinsky => DerivRequest::uniform(1, vec![4, 1]),
        ProblemKind::GrayScott => DerivRequest::uniform(2, vec![2, 2, 1]),
        ProblemKind::Cavity => DerivRequest {
            orders: vec![vec![2, 2], vec![2, 2], vec![1, 1]],
        },
        ProblemKind::Poisson => DerivRequest::uniform(1, vec![2]),
    };
    debug_assert!(required.orders.iter().all(|o| o.len() == n_axes));

    Ok(ProblemSpec {
        name: name.to_string(),
        kind,
        spatial_dims,
        time_dependent,
        lo,
        hi,
        coefficients,
        outputs: outputs.into_iter().map(String::from).collect(),
        required,
        bc_kind,
        gamma,
    })
}

impl ProblemSpec {
    pub fn n_axes(&self) -> usize {
        self.lo.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn coefficient(&self, key: &str) -> f64 {
        self.coefficients[key]
    }

    pub fn horizon(&self) -> Option<f64> {
        self.time_dependent.then(|| self.hi[self.n_axes() - 1])
    }

    pub fn input_map(&self) -> InputMap {
        InputMap::new(self.lo.clone(), self.hi.clone()).expect("problem bounds are ordered")
    }

    pub fn n_equations(&self) -> usize {
        self.equation_outputs().len()
    }

    /// For each governing equation, the output whose sequence enters its
    /// correction term and whether the Laplacian part applies.
    pub fn equation_outputs(&self) -> Vec<(usize, bool)> {
        match self.kind {
            ProblemKind::GrayScott => vec![(0, true), (1, true)],
            // continuity is paired with the pressure, momentum with u and v
            ProblemKind::Cavity => vec![(2, false), (0, true), (1, true)],
            _ => vec![(0, true)],
        }
    }

    pub fn equation_names(&self) -> Vec<&'static str> {
        match self.kind {
            ProblemKind::GrayScott => vec!["u", "v"],
            ProblemKind::Cavity => vec!["continuity", "momentum_x", "momentum_y"],
            _ => vec!["pde"],
        }
    }

    /// Closed-form initial condition for `output` at spatial point `x`.
    pub fn initial_condition(&self, output: usize, x: &[f64]) -> Option<f64> {
        match self.kind {
            ProblemKind::AllenCahn => Some(x[0] * x[0] * (PI * x[0]).cos()),
            ProblemKind::Kdv => Some((PI * x[0]).cos()),
            ProblemKind::KuramotoSivashinsky => Some(x[0].cos() * (1.0 + x[0].sin())),
            ProblemKind::GrayScott => {
                let (x, y) = (x[0], x[1]);
                Some(match output {
                    0 => 1.0 - (-10.0 * ((x + 0.05).powi(2) + (y + 0.02).powi(2))).exp(),
                    _ => (-10.0 * ((x - 0.05).powi(2) + (y - 0.02).powi(2))).exp(),
                })
            }
            ProblemKind::Cavity | ProblemKind::Poisson => None,
        }
    }

    /// Checks that a network fits this problem.
    pub fn check_network(&self, cfg: &NetworkConfig) -> Result<()> {
        if cfg.input_dim != self.n_axes() {
            return Err(Error::config(
                "network.input_dim",
                format!("`{}` needs {} inputs, network has {}", self.name, self.n_axes(), cfg.input_dim),
            ));
        }
        if cfg.output_names != self.outputs {
            return Err(Error::config(
                "network.output_names",
                format!("`{}` needs outputs {:?}", self.name, self.outputs),
            ));
        }
        Ok(())
    }

    fn inside_closed(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&a, &b))| v >= a && v <= b)
    }

    /// Membership predicates used by tests and by [`Batch::validate`].
    pub fn is_interior(&self, p: &[f64]) -> bool {
        self.inside_closed(p)
    }

    pub fn is_on_boundary(&self, p: &[f64], tag: BcTag) -> bool {
        if !self.inside_closed(p) {
            return false;
        }
        let d = self.spatial_dims;
        let on_face = |a: usize| p[a] == self.lo[a] || p[a] == self.hi[a];
        match tag {
            BcTag::PeriodicLo(a) => a < d && p[a] == self.lo[a],
            BcTag::PeriodicHi(a) => a < d && p[a] == self.hi[a],
            BcTag::Lid => d == 2 && p[1] == self.hi[1] && p[0] > self.lo[0] && p[0] < self.hi[0],
            BcTag::Wall => (0..d).any(on_face) && !(p[1] == self.hi[1] && p[0] > self.lo[0] && p[0] < self.hi[0]),
            BcTag::Fixed => (0..d).any(on_face),
        }
    }
}

/// Collocation points, row-major with `dim` coordinates each.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub dim: usize,
    pub interior: Vec<f64>,
    pub bc: Vec<f64>,
    pub bc_tags: Vec<BcTag>,
    pub ic: Vec<f64>,
}

impl Batch {
    pub fn n_interior(&self) -> usize {
        self.interior.len() / self.dim
    }

    pub fn n_bc(&self) -> usize {
        self.bc_tags.len()
    }

    pub fn n_ic(&self) -> usize {
        self.ic.len() / self.dim
    }

    pub fn bc_point(&self, i: usize) -> &[f64] {
        &self.bc[i * self.dim..(i + 1) * self.dim]
    }

    /// Row ranges `(start, len)` of consecutive runs carrying the same tag.
    pub fn bc_runs(&self) -> Vec<(BcTag, usize, usize)> {
        let mut runs: Vec<(BcTag, usize, usize)> = Vec::new();
        for (i, &t) in self.bc_tags.iter().enumerate() {
            match runs.last_mut() {
                Some((tag, _, len)) if *tag == t => *len += 1,
                _ => runs.push((t, i, 1)),
            }
        }
        runs
    }

    /// Checks every point against the problem's domain predicates.
    pub fn validate(&self, spec: &ProblemSpec) -> bool {
        let d = self.dim;
        self.interior.chunks(d).all(|p| spec.is_interior(p))
            && self
                .bc_tags
                .iter()
                .enumerate()
                .all(|(i, &t)| spec.is_on_boundary(self.bc_point(i), t))
            && self.ic.chunks(d).all(|p| {
                spec.inside_closed(p) && (!spec.time_dependent || p[d - 1] == 0.0)
            })
    }
}

fn split_even(n: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| n / parts + usize::from(i < n % parts)).collect()
}

/// Draws a mini-batch. Interior points are uniform over the open domain
/// (time in `(0, T]`), boundary points uniform over each face with equal
/// shares per face, and initial points uniform over the domain at `t = 0`.
///
/// Periodic problems draw `n_bc / 2` lo/hi pairs: for each periodic axis a
/// block of low-face points followed by the matching high-face points.
/// Cavity points come as the three walls followed by the lid.
pub fn sample_batch<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    rng: &mut R,
    n_interior: usize,
    n_bc: usize,
    n_ic: usize,
) -> Batch {
    let dim = spec.n_axes();
    let sd = spec.spatial_dims;
    let (lo, hi) = (&spec.lo, &spec.hi);
    let span = |a: usize, r: f64| lo[a] + (hi[a] - lo[a]) * r;

    let mut interior = Vec::with_capacity(n_interior * dim);
    for _ in 0..n_interior {
        for a in 0..dim {
            let r: f64 = if spec.time_dependent && a == dim - 1 {
                rng.sample(OpenClosed01)
            } else {
                rng.sample(Open01)
            };
            interior.push(span(a, r));
        }
    }

    let mut bc = Vec::with_capacity(n_bc * dim);
    let mut bc_tags = Vec::with_capacity(n_bc);
    // A boundary point with axis `fixed` pinned to `value`.
    let draw_face = |rng: &mut R, fixed: usize, value: f64| -> Vec<f64> {
        (0..dim)
            .map(|a| {
                if a == fixed {
                    value
                } else if spec.time_dependent && a == dim - 1 {
                    span(a, rng.sample(OpenClosed01))
                } else {
                    span(a, rng.random::<f64>())
                }
            })
            .collect()
    };
    match spec.bc_kind {
        BcKind::Periodic => {
            let pairs = split_even(n_bc / 2, sd);
            for (axis, &m) in pairs.iter().enumerate() {
                let lo_pts: Vec<Vec<f64>> =
                    (0..m).map(|_| draw_face(rng, axis, lo[axis])).collect();
                for p in &lo_pts {
                    bc.extend_from_slice(p);
                    bc_tags.push(BcTag::PeriodicLo(axis));
                }
                for p in &lo_pts {
                    let mut q = p.clone();
                    q[axis] = hi[axis];
                    bc.extend_from_slice(&q);
                    bc_tags.push(BcTag::PeriodicHi(axis));
                }
            }
        }
        BcKind::DirichletWallsWithLid => {
            // left, right, bottom, lid
            let faces = [(0, lo[0]), (0, hi[0]), (1, lo[1]), (1, hi[1])];
            let counts = split_even(n_bc, 4);
            let mut lid = Vec::new();
            for (f, (&(axis, value), &m)) in faces.iter().zip(&counts).enumerate() {
                for _ in 0..m {
                    let p = draw_face(rng, axis, value);
                    let on_lid = f == 3 && p[0] > lo[0] && p[0] < hi[0];
                    if on_lid {
                        lid.push(p);
                    } else {
                        bc.extend_from_slice(&p);
                        bc_tags.push(BcTag::Wall);
                    }
                }
            }
            for p in lid {
                bc.extend_from_slice(&p);
                bc_tags.push(BcTag::Lid);
            }
        }
        BcKind::Dirichlet => {
            let mut faces = Vec::new();
            for a in 0..sd {
                faces.push((a, lo[a]));
                faces.push((a, hi[a]));
            }
            for (&(axis, value), m) in faces.iter().zip(split_even(n_bc, faces.len())) {
                for _ in 0..m {
                    bc.extend(draw_face(rng, axis, value));
                    bc_tags.push(BcTag::Fixed);
                }
            }
        }
    }

    let mut ic = Vec::new();
    if spec.time_dependent {
        ic.reserve(n_ic * dim);
        for _ in 0..n_ic {
            for a in 0..sd {
                ic.push(span(a, rng.random::<f64>()));
            }
            ic.push(0.0);
        }
    }
    Batch {
        dim,
        interior,
        bc,
        bc_tags,
        ic,
    }
}

fn cube(tape: &mut Tape, u: Var) -> Var {
    let sq = tape.mul(u, u);
    tape.mul(sq, u)
}

/// One residual node per governing equation, `N[f] - h` at the bundle's
/// points. `points` are needed only by problems with a source term.
pub fn pde_residual(
    spec: &ProblemSpec,
    tape: &mut Tape,
    bundle: &DerivBundle,
    points: &[f64],
) -> Result<Vec<Var>> {
    let d = |o: usize, a: usize, n: usize| bundle.deriv(o, a, n);
    let c = |k: &str| spec.coefficient(k);
    Ok(match spec.kind {
        ProblemKind::AllenCahn => {
            let (u, ut, uxx) = (bundle.value(0), d(0, 1, 1)?, d(0, 0, 2)?);
            let u3 = cube(tape, u);
            let react = tape.sub(u3, u);
            let react = tape.scale(react, c("delta"));
            let diff = tape.scale(uxx, c("alpha"));
            let r = tape.sub(ut, diff);
            vec![tape.add(r, react)]
        }
        ProblemKind::Kdv => {
            let (u, ut, ux, uxxx) = (bundle.value(0), d(0, 1, 1)?, d(0, 0, 1)?, d(0, 0, 3)?);
            let adv = tape.mul(u, ux);
            let disp = tape.scale(uxxx, c("nu"));
            let r = tape.add(ut, adv);
            vec![tape.add(r, disp)]
        }
        ProblemKind::KuramotoSivashinsky => {
            let u = bundle.value(0);
            let (ut, ux, uxx, uxxxx) = (d(0, 1, 1)?, d(0, 0, 1)?, d(0, 0, 2)?, d(0, 0, 4)?);
            let adv = tape.mul(u, ux);
            let adv = tape.scale(adv, c("a1"));
            let t2 = tape.scale(uxx, c("a2"));
            let t4 = tape.scale(uxxxx, c("a3"));
            let r = tape.add(ut, adv);
            let r = tape.add(r, t2);
            vec![tape.add(r, t4)]
        }
        ProblemKind::GrayScott => {
            let (u, v) = (bundle.value(0), bundle.value(1));
            let lap_u = {
                let (a, b) = (d(0, 0, 2)?, d(0, 1, 2)?);
                tape.add(a, b)
            };
            let lap_v = {
                let (a, b) = (d(1, 0, 2)?, d(1, 1, 2)?);
                tape.add(a, b)
            };
            let vv = tape.mul(v, v);
            let uvv = tape.mul(u, vv);
            // u_t - eps1 Δu - b1 (1 - u) + c1 u v²
            let ru = {
                let diff = tape.scale(lap_u, c("eps1"));
                let r = tape.sub(d(0, 2, 1)?, diff);
                let one_minus_u = tape.scale(u, -1.0);
                let one_minus_u = tape.add_scalar(one_minus_u, 1.0);
                let feed = tape.scale(one_minus_u, c("b1"));
                let r = tape.sub(r, feed);
                let react = tape.scale(uvv, c("c1"));
                tape.add(r, react)
            };
            // v_t - eps2 Δv + b2 v - c2 u v²
            let rv = {
                let diff = tape.scale(lap_v, c("eps2"));
                let r = tape.sub(d(1, 2, 1)?, diff);
                let kill = tape.scale(v, c("b2"));
                let r = tape.add(r, kill);
                let react = tape.scale(uvv, c("c2"));
                tape.sub(r, react)
            };
            vec![ru, rv]
        }
        ProblemKind::Cavity => {
            let (u, v) = (bundle.value(0), bundle.value(1));
            let (ux, uy, vx, vy) = (d(0, 0, 1)?, d(0, 1, 1)?, d(1, 0, 1)?, d(1, 1, 1)?);
            let (px, py) = (d(2, 0, 1)?, d(2, 1, 1)?);
            let inv_re = 1.0 / c("Re");
            let cont = tape.add(ux, vy);
            let momentum = |tape: &mut Tape, fx: Var, fy: Var, fxx: Var, fyy: Var, grad_p: Var| {
                let a = tape.mul(u, fx);
                let b = tape.mul(v, fy);
                let conv = tape.add(a, b);
                let lap = tape.add(fxx, fyy);
                let visc = tape.scale(lap, inv_re);
                let r = tape.sub(conv, visc);
                tape.add(r, grad_p)
            };
            let mx = momentum(tape, ux, uy, d(0, 0, 2)?, d(0, 1, 2)?, px);
            let my = momentum(tape, vx, vy, d(1, 0, 2)?, d(1, 1, 2)?, py);
            vec![cont, mx, my]
        }
        ProblemKind::Poisson => {
            let uxx = d(0, 0, 2)?;
            let src: Vec<f64> = points.iter().map(|&x| PI * PI * (PI * x).sin()).collect();
            if src.len() != bundle.batch() {
                return Err(Error::internal("poisson source needs the bundle's points"));
            }
            let src = tape.constant(Tensor::column(src));
            let neg = tape.scale(uxx, -1.0);
            vec![tape.sub(neg, src)]
        }
    })
}

/// The sequential-correction term per equation:
/// `S = (f^k - f^{k-1}) / τ_sc - (γ / τ_α)(Δf^k - Δf^{k-1})` with the
/// spatial Laplacian `Δ`. The cavity continuity equation uses
/// `(p^k - p^{k-1}) / τ_sc`.
pub fn correction_term(
    spec: &ProblemSpec,
    tape: &mut Tape,
    bundle_k: &DerivBundle,
    bundle_km1: &DerivBundle,
    tau_sc: f64,
    tau_alpha: f64,
) -> Result<Vec<Var>> {
    if !(tau_sc > 0.0) {
        return Err(Error::config("train.correction.tau_sc", "must be positive"));
    }
    if !(tau_alpha > 0.0) {
        return Err(Error::config("train.correction.tau_alpha", "must be positive"));
    }
    let mut out = Vec::new();
    for (o, with_lap) in spec.equation_outputs() {
        let df = tape.sub(bundle_k.value(o), bundle_km1.value(o));
        let s = tape.scale(df, 1.0 / tau_sc);
        if !with_lap {
            out.push(s);
            continue;
        }
        let mut lap: Option<Var> = None;
        for a in 0..spec.spatial_dims {
            let diff = tape.sub(bundle_k.deriv(o, a, 2)?, bundle_km1.deriv(o, a, 2)?);
            lap = Some(match lap {
                Some(l) => tape.add(l, diff),
                None => diff,
            });
        }
        let lap = lap.expect("at least one spatial axis");
        let smooth = tape.scale(lap, spec.gamma[o] / tau_alpha);
        out.push(tape.sub(s, smooth));
    }
    Ok(out)
}

/// Initial-condition and boundary residual nodes. The loss sums their
/// mean squares.
///
/// Dirichlet problems give one residual per output over all boundary
/// points (`f - g`). Periodic problems give, per periodic axis and output,
/// the value mismatch and the first-derivative mismatch along that axis.
/// Initial residuals are `f(·, 0) - u0` per output.
pub fn ic_bc_residuals(
    spec: &ProblemSpec,
    tape: &mut Tape,
    params: &ParameterSet,
    cfg: &NetworkConfig,
    batch: &Batch,
) -> Result<(Vec<Var>, Vec<Var>)> {
    spec.check_network(cfg)?;
    let map = spec.input_map();
    let n_out = spec.n_outputs();
    let n_axes = spec.n_axes();

    let mut ic = Vec::new();
    if spec.time_dependent && batch.n_ic() > 0 {
        let req = DerivRequest::values_only(n_out, n_axes);
        let b = forward_bundle(tape, params, cfg, &batch.ic, &map, &req)?;
        for o in 0..n_out {
            let target: Vec<f64> = batch
                .ic
                .chunks(batch.dim)
                .map(|p| spec.initial_condition(o, &p[..spec.spatial_dims]).expect("time-dependent problems have an IC"))
                .collect();
            let target = tape.constant(Tensor::column(target));
            ic.push(tape.sub(b.value(o), target));
        }
    }

    let mut bc = Vec::new();
    if batch.n_bc() > 0 {
        match spec.bc_kind {
            BcKind::Periodic => {
                let mut orders = vec![0; n_axes];
                for o in orders.iter_mut().take(spec.spatial_dims) {
                    *o = 1;
                }
                let req = DerivRequest::uniform(n_out, orders);
                let b = forward_bundle(tape, params, cfg, &batch.bc, &map, &req)?;
                let runs = batch.bc_runs();
                for pair in runs.chunks(2) {
                    let (lo_run, hi_run) = match pair {
                        [(BcTag::PeriodicLo(a), s0, n0), (BcTag::PeriodicHi(b_), s1, n1)]
                            if a == b_ && n0 == n1 =>
                        {
                            ((*a, *s0, *n0), *s1)
                        }
                        _ => {
                            return Err(Error::config(
                                "batch",
                                "periodic boundary points must come as lo/hi blocks",
                            ))
                        }
                    };
                    let (axis, s0, n) = lo_run;
                    for o in 0..n_out {
                        for node in [b.value(o), b.deriv(o, axis, 1)?] {
                            let lo = tape.column(node, 0, s0, n);
                            let hi = tape.column(node, 0, hi_run, n);
                            bc.push(tape.sub(lo, hi));
                        }
                    }
                }
            }
            BcKind::DirichletWallsWithLid | BcKind::Dirichlet => {
                if batch.bc_tags.iter().any(|t| matches!(t, BcTag::PeriodicLo(_) | BcTag::PeriodicHi(_))) {
                    return Err(Error::config("batch", "periodic tags on a Dirichlet problem"));
                }
                let req = DerivRequest::values_only(n_out, n_axes);
                let b = forward_bundle(tape, params, cfg, &batch.bc, &map, &req)?;
                let lid_u = spec.coefficients.get("u_lid").copied().unwrap_or(0.0);
                // the cavity pressure carries no boundary condition
                let constrained = if spec.kind == ProblemKind::Cavity { 2 } else { n_out };
                for o in 0..constrained {
                    let target: Vec<f64> = batch
                        .bc_tags
                        .iter()
                        .map(|&t| if t == BcTag::Lid && o == 0 { lid_u } else { 0.0 })
                        .collect();
                    let target = tape.constant(Tensor::column(target));
                    bc.push(tape.sub(b.value(o), target));
                }
            }
        }
    }
    Ok((ic, bc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn no_overrides() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn allen_cahn_defaults() {
        let p = make_problem("allen_cahn", &no_overrides()).unwrap();
        assert_eq!(p.coefficient("alpha"), 1e-4);
        assert_eq!(p.coefficient("delta"), 5.0);
        assert_eq!((p.lo.clone(), p.hi.clone()), (vec![-1.0, 0.0], vec![1.0, 1.0]));
        assert_eq!(p.bc_kind, BcKind::Periodic);
        assert_eq!(p.initial_condition(0, &[0.5]).unwrap(), 0.25 * (PI * 0.5).cos());
    }

    #[test]
    fn kdv_gamma_is_root_of_dispersion() {
        let p = make_problem("kdv", &no_overrides()).unwrap();
        assert!((p.gamma[0] - 11.0 / 500.0).abs() < 1e-17);
    }

    #[test]
    fn cavity_gamma_follows_re() {
        let o = [("Re".to_string(), 400.0)].into_iter().collect();
        let p = make_problem("cavity", &o).unwrap();
        assert_eq!(p.gamma[0], 0.0025);
        assert_eq!(p.gamma[1], 0.0025);
    }

    #[test]
    fn bad_names_and_values() {
        assert!(make_problem("burgers", &no_overrides()).is_err());
        let o = [("Re".to_string(), 0.0)].into_iter().collect();
        assert!(make_problem("cavity", &o).is_err());
        let o = [("alpha".to_string(), -1.0)].into_iter().collect();
        assert!(make_problem("allen_cahn", &o).is_err());
        let o = [("nu".to_string(), 1.0)].into_iter().collect();
        assert!(make_problem("allen_cahn", &o).is_err());
        assert!(make_problem("poisson", &no_overrides()).is_err());
    }

    #[test]
    fn horizon_override() {
        let o = [("T".to_string(), 0.1)].into_iter().collect();
        let p = make_problem("gray_scott", &o).unwrap();
        assert_eq!(p.horizon(), Some(0.1));
        assert_eq!(p.coefficient("c1"), 1000.0);
    }

    #[test]
    fn cavity_sampling_stratifies_faces() {
        let p = make_problem("cavity", &no_overrides()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = sample_batch(&p, &mut rng, 400, 40, 0);
        assert_eq!(b.n_interior(), 400);
        assert!(b.interior.iter().all(|&v| v > 0.0 && v < 1.0));
        let lid = b.bc_tags.iter().filter(|&&t| t == BcTag::Lid).count();
        assert_eq!(lid, 10);
        assert_eq!(b.n_bc(), 40);
        let left = (0..40).filter(|&i| b.bc_point(i)[0] == 0.0).count();
        assert_eq!(left, 10);
        assert!(b.validate(&p));
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = make_problem("gray_scott", &no_overrides()).unwrap();
        let a = sample_batch(&p, &mut ChaCha8Rng::seed_from_u64(9), 50, 20, 10);
        let b = sample_batch(&p, &mut ChaCha8Rng::seed_from_u64(9), 50, 20, 10);
        assert_eq!(a, b);
        assert!(a.validate(&p));
        assert_eq!(a.n_bc(), 20);
        assert!(a.ic.chunks(3).all(|q| q[2] == 0.0));
    }

    #[test]
    fn periodic_pairs_share_coordinates() {
        let p = make_problem("kdv", &no_overrides()).unwrap();
        let b = sample_batch(&p, &mut ChaCha8Rng::seed_from_u64(1), 0, 10, 0);
        let runs = b.bc_runs();
        assert_eq!(runs, vec![(BcTag::PeriodicLo(0), 0, 5), (BcTag::PeriodicHi(0), 5, 5)]);
        for i in 0..5 {
            assert_eq!(b.bc_point(i)[1], b.bc_point(i + 5)[1]);
            assert_eq!(b.bc_point(i)[0], -1.0);
            assert_eq!(b.bc_point(i + 5)[0], 1.0);
        }
    }
}
