//! Fourier pseudo-spectral ETDRK4 for the periodic benchmarks.
//!
//! The state is kept as normalised Fourier coefficients `c` with
//! `u(x) = Σ c_k e^{i k x}`. Each equation splits into a diagonal linear
//! part `L̂` and a nonlinear part evaluated in physical space on a grid
//! padded by 3/2 (dealiasing). The ETDRK4 weights are computed by averaging
//! over 32 points on a circle around each `h L̂`, which avoids the
//! cancellation in the φ-functions near zero.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Axis, FieldGrid};
use crate::error::{Error, Result};
use crate::problems::{ProblemKind, ProblemSpec};

/// Unnormalised forward transform `X_k = Σ_j x_j e^{-2πi jk/n}` by direct
/// summation.
pub fn dft_direct(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| {
                    let ang = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
                    Complex64::from_polar(v, ang)
                })
                .sum()
        })
        .collect()
}

/// Unnormalised forward transform, same convention as [`dft_direct`].
pub fn dft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if !buf.is_empty() {
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    }
    buf
}

/// Inverse of [`dft`], returning the real part.
pub fn idft(x: &[Complex64]) -> Vec<f64> {
    let n = x.len();
    let mut buf = x.to_vec();
    if n > 0 {
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    }
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Signed wavenumber index of FFT slot `i` on an `n`-point grid.
fn signed(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// In-place d-dimensional FFT over a cube of side `n` (d = 1 or 2).
struct CubeFft {
    n: usize,
    d: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl CubeFft {
    fn new(planner: &mut FftPlanner<f64>, n: usize, d: usize) -> CubeFft {
        CubeFft {
            n,
            d,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inv } else { &self.fwd };
        let n = self.n;
        // last axis is contiguous
        plan.process(data);
        if self.d == 2 {
            let mut col = vec![Complex64::new(0.0, 0.0); n];
            for j in 0..n {
                for i in 0..n {
                    col[i] = data[i * n + j];
                }
                plan.process(&mut col);
                for i in 0..n {
                    data[i * n + j] = col[i];
                }
            }
        }
    }
}

/// Spectral discretisation of one periodic problem.
struct Spectral {
    n: usize,
    m: usize,
    d: usize,
    /// Wavenumber per axis per slot.
    k: Vec<f64>,
    base: CubeFft,
    padded: CubeFft,
}

impl Spectral {
    fn new(n: usize, d: usize, length: f64) -> Spectral {
        let m = 3 * n / 2;
        let mut planner = FftPlanner::new();
        Spectral {
            n,
            m,
            d,
            k: (0..n).map(|i| 2.0 * PI / length * signed(i, n) as f64).collect(),
            base: CubeFft::new(&mut planner, n, d),
            padded: CubeFft::new(&mut planner, m, d),
        }
    }

    fn size(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Wavenumber of the first derivative, zero at the Nyquist slot.
    fn k_odd(&self, i: usize) -> f64 {
        if self.n.is_multiple_of(2) && i == self.n / 2 {
            0.0
        } else {
            self.k[i]
        }
    }

    fn slot_k2(&self, s: usize) -> f64 {
        match self.d {
            1 => self.k[s].powi(2),
            _ => self.k[s / self.n].powi(2) + self.k[s % self.n].powi(2),
        }
    }

    fn to_coeffs(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.base.run(&mut buf, false);
        let scale = 1.0 / self.size() as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        buf
    }

    fn to_physical(&self, c: &[Complex64]) -> Vec<f64> {
        let mut buf = c.to_vec();
        self.base.run(&mut buf, true);
        buf.iter().map(|z| z.re).collect()
    }

    /// Maps a base slot index to the padded grid, or `None` for Nyquist.
    fn pad_index(&self, i: usize) -> Option<usize> {
        let w = signed(i, self.n);
        if self.n.is_multiple_of(2) && w == (self.n / 2) as i64 {
            return None;
        }
        Some(if w >= 0 { w as usize } else { (self.m as i64 + w) as usize })
    }

    fn slots(&self) -> Vec<(usize, Option<usize>)> {
        let n = self.n;
        match self.d {
            1 => (0..n).map(|i| (i, self.pad_index(i))).collect(),
            _ => (0..n * n)
                .map(|s| {
                    let (i, j) = (s / n, s % n);
                    let p = match (self.pad_index(i), self.pad_index(j)) {
                        (Some(a), Some(b)) => Some(a * self.m + b),
                        _ => None,
                    };
                    (s, p)
                })
                .collect(),
        }
    }

    /// Physical values on the padded grid.
    fn pad_physical(&self, c: &[Complex64]) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.m.pow(self.d as u32)];
        for (s, p) in self.slots() {
            if let Some(p) = p {
                buf[p] = c[s];
            }
        }
        self.padded.run(&mut buf, true);
        buf.iter().map(|z| z.re).collect()
    }

    /// Coefficients of a padded-grid physical field, truncated to the base
    /// grid with the Nyquist slot zeroed.
    fn truncate(&self, phys: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = phys.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.padded.run(&mut buf, false);
        let scale = 1.0 / self.m.pow(self.d as u32) as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); self.size()];
        for (s, p) in self.slots() {
            if let Some(p) = p {
                out[s] = buf[p] * scale;
            }
        }
        out
    }
}

/// Time stepping settings. Snapshots are taken at `n_snapshots` equally
/// spaced times from 0 to `t_final`; `dt` is reduced if needed so that
/// every snapshot falls on a step.
#[derive(Clone, Debug, PartialEq)]
pub struct Etdrk4Options {
    pub n_modes: usize,
    pub dt: f64,
    pub t_final: f64,
    pub n_snapshots: usize,
}

impl Etdrk4Options {
    fn validate(&self) -> Result<()> {
        if self.n_modes < 4 || !self.n_modes.is_multiple_of(2) {
            return Err(Error::config("reference.n_modes", "must be even and at least 4"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("reference.dt", "must be positive"));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::config("reference.t_final", "must be positive"));
        }
        if self.n_snapshots < 2 {
            return Err(Error::config("reference.n_snapshots", "need at least two snapshots"));
        }
        Ok(())
    }

    /// Steps between consecutive snapshots and the step size used.
    pub fn schedule(&self) -> (usize, f64) {
        let interval = self.t_final / (self.n_snapshots - 1) as f64;
        let steps = (interval / self.dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        (steps, interval / steps as f64)
    }
}

const CONTOUR_POINTS: usize = 32;

/// ETDRK4 weights for every slot of one field.
struct Weights {
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

impl Weights {
    fn new(l: &[Complex64], h: f64) -> Weights {
        let n = l.len();
        let mut w = Weights {
            e: Vec::with_capacity(n),
            e2: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            f2: Vec::with_capacity(n),
            f3: Vec::with_capacity(n),
        };
        let roots: Vec<Complex64> = (0..CONTOUR_POINTS)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64))
            .collect();
        let c = h / CONTOUR_POINTS as f64;
        for &lk in l {
            let hl = lk * h;
            let zero = Complex64::new(0.0, 0.0);
            let (mut q, mut f1, mut f2, mut f3) = (zero, zero, zero, zero);
            for &r in &roots {
                let z = hl + r;
                let ez = z.exp();
                let z3 = z * z * z;
                q += ((z / 2.0).exp() - 1.0) / z;
                f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                f2 += (2.0 + z + ez * (z - 2.0)) / z3;
                f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            w.e.push(hl.exp());
            w.e2.push((hl / 2.0).exp());
            w.q.push(q * c);
            w.f1.push(f1 * c);
            w.f2.push(f2 * c);
            w.f3.push(f3 * c);
        }
        w
    }
}

type State = Vec<Vec<Complex64>>;

/// Linear diagonal and nonlinear term of one periodic problem.
struct Model<'a> {
    spec: &'a ProblemSpec,
    sp: Spectral,
}

impl Model<'_> {
    fn linear(&self) -> Vec<Vec<Complex64>> {
        let c = |k: &str| self.spec.coefficient(k);
        let size = self.sp.size();
        let diag = |f: &dyn Fn(usize) -> Complex64| (0..size).map(f).collect::<Vec<_>>();
        let re = |x: f64| Complex64::new(x, 0.0);
        match self.spec.kind {
            ProblemKind::AllenCahn => vec![diag(&|s| re(-c("alpha") * self.sp.slot_k2(s)))],
            ProblemKind::Kdv => vec![diag(&|s| Complex64::new(0.0, c("nu") * self.sp.k_odd(s).powi(3)))],
            ProblemKind::KuramotoSivashinsky => vec![diag(&|s| {
                let k2 = self.sp.slot_k2(s);
                re(c("a2") * k2 - c("a3") * k2 * k2)
            })],
            ProblemKind::GrayScott => vec![
                diag(&|s| re(-c("eps1") * self.sp.slot_k2(s) - c("b1"))),
                diag(&|s| re(-c("eps2") * self.sp.slot_k2(s) - c("b2"))),
            ],
            _ => unreachable!("checked by caller"),
        }
    }

    fn nonlinear(&self, state: &State) -> State {
        let c = |k: &str| self.spec.coefficient(k);
        let sp = &self.sp;
        match self.spec.kind {
            ProblemKind::AllenCahn => {
                let u = sp.pad_physical(&state[0]);
                let delta = c("delta");
                let f: Vec<f64> = u.iter().map(|&x| -delta * (x * x * x - x)).collect();
                vec![sp.truncate(&f)]
            }
            ProblemKind::Kdv | ProblemKind::KuramotoSivashinsky => {
                let a = if self.spec.kind == ProblemKind::Kdv { 1.0 } else { c("a1") };
                let u = sp.pad_physical(&state[0]);
                let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
                let mut out = sp.truncate(&sq);
                for (s, z) in out.iter_mut().enumerate() {
                    *z *= Complex64::new(0.0, -0.5 * a * sp.k_odd(s));
                }
                vec![out]
            }
            ProblemKind::GrayScott => {
                let u = sp.pad_physical(&state[0]);
                let v = sp.pad_physical(&state[1]);
                let (b1, c1, c2) = (c("b1"), c("c1"), c("c2"));
                let uvv: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a * b * b).collect();
                let nu: Vec<f64> = uvv.iter().map(|x| b1 - c1 * x).collect();
                let nv: Vec<f64> = uvv.iter().map(|x| c2 * x).collect();
                vec![sp.truncate(&nu), sp.truncate(&nv)]
            }
            _ => unreachable!("checked by caller"),
        }
    }
}

fn axpy(out: &mut [Complex64], terms: &[(&[Complex64], &[Complex64])]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = terms.iter().map(|(w, x)| w[i] * x[i]).sum();
    }
}

fn step(model: &Model, w: &[Weights], v: &State) -> State {
    let nv = model.nonlinear(v);
    let mut a = v.clone();
    for f in 0..v.len() {
        axpy(&mut a[f], &[(&w[f].e2, &v[f]), (&w[f].q, &nv[f])]);
    }
    let na = model.nonlinear(&a);
    let mut b = v.clone();
    for f in 0..v.len() {
        axpy(&mut b[f], &[(&w[f].e2, &v[f]), (&w[f].q, &na[f])]);
    }
    let nb = model.nonlinear(&b);
    let mut c = v.clone();
    for f in 0..v.len() {
        let twice: Vec<Complex64> = nb[f].iter().zip(&nv[f]).map(|(x, y)| 2.0 * x - y).collect();
        axpy(&mut c[f], &[(&w[f].e2, &a[f]), (&w[f].q, &twice)]);
    }
    let nc = model.nonlinear(&c);
    let mut out = v.clone();
    for f in 0..v.len() {
        let ab: Vec<Complex64> = na[f].iter().zip(&nb[f]).map(|(x, y)| 2.0 * (x + y)).collect();
        axpy(
            &mut out[f],
            &[
                (&w[f].e, &v[f]),
                (&w[f].f1, &nv[f]),
                (&w[f].f2, &ab),
                (&w[f].f3, &nc[f]),
            ],
        );
    }
    out
}

const BLOW_UP: f64 = 1e6;

/// Solves from the problem's own initial condition.
pub fn etdrk4_solve(spec: &ProblemSpec, opts: &Etdrk4Options) -> Result<FieldGrid> {
    check_periodic(spec)?;
    let n = opts.n_modes;
    let d = spec.spatial_dims;
    let axes = spatial_axes(spec, n);
    let size = n.pow(d as u32);
    let initial = (0..spec.n_outputs())
        .map(|o| {
            (0..size)
                .map(|s| {
                    let x: Vec<f64> = match d {
                        1 => vec![axes[0].node(s)],
                        _ => vec![axes[0].node(s / n), axes[1].node(s % n)],
                    };
                    spec.initial_condition(o, &x).expect("periodic problems have an IC")
                })
                .collect()
        })
        .collect();
    etdrk4_solve_from(spec, opts, initial)
}

fn check_periodic(spec: &ProblemSpec) -> Result<()> {
    match spec.kind {
        ProblemKind::AllenCahn | ProblemKind::Kdv | ProblemKind::KuramotoSivashinsky | ProblemKind::GrayScott => Ok(()),
        _ => Err(Error::config(
            "problem.name",
            format!("`{}` has no spectral reference solver", spec.name),
        )),
    }
}

fn spatial_axes(spec: &ProblemSpec, n: usize) -> Vec<Axis> {
    let names = ["x", "y"];
    (0..spec.spatial_dims)
        .map(|a| Axis::periodic(names[a], n, spec.lo[a], spec.hi[a] - spec.lo[a]))
        .collect()
}

/// Solves from explicit initial fields given on the periodic grid of
/// `opts.n_modes` points per axis (row-major, one vector per output).
pub fn etdrk4_solve_from(
    spec: &ProblemSpec,
    opts: &Etdrk4Options,
    initial: Vec<Vec<f64>>,
) -> Result<FieldGrid> {
    check_periodic(spec)?;
    opts.validate()?;
    let n = opts.n_modes;
    let d = spec.spatial_dims;
    let length = spec.hi[0] - spec.lo[0];
    if d == 2 && (spec.hi[1] - spec.lo[1] - length).abs() > 1e-12 * length {
        return Err(Error::config("problem", "2-D spectral solver needs a square domain"));
    }
    let sp = Spectral::new(n, d, length);
    if initial.len() != spec.n_outputs() || initial.iter().any(|f| f.len() != sp.size()) {
        return Err(Error::config("reference.initial", "initial fields do not match the grid"));
    }
    let model = Model { spec, sp };
    let (steps_per, h) = opts.schedule();
    let weights: Vec<Weights> = model.linear().iter().map(|l| Weights::new(l, h)).collect();

    let mut v: State = initial.iter().map(|f| model.sp.to_coeffs(f)).collect();
    let n_snap = opts.n_snapshots;
    let size = model.sp.size();
    let mut values = vec![vec![0.0; size * n_snap]; spec.n_outputs()];
    let record = |values: &mut Vec<Vec<f64>>, v: &State, snap: usize| {
        for (f, c) in v.iter().enumerate() {
            let phys = model.sp.to_physical(c);
            for (s, x) in phys.into_iter().enumerate() {
                values[f][s * n_snap + snap] = x;
            }
        }
    };
    record(&mut values, &v, 0);
    for snap in 1..n_snap {
        for i in 0..steps_per {
            v = step(&model, &weights, &v);
            let global = (snap - 1) * steps_per + i + 1;
            let bound: f64 = v.iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
            if !bound.is_finite() {
                return Err(Error::Diverged {
                    step: global,
                    message: "non-finite spectral coefficients".into(),
                });
            }
            if bound > BLOW_UP {
                let peak = v
                    .iter()
                    .map(|c| model.sp.to_physical(c).iter().fold(0.0f64, |m, x| m.max(x.abs())))
                    .fold(0.0, f64::max);
                if peak > BLOW_UP {
                    return Err(Error::Diverged {
                        step: global,
                        message: format!("max |u| = {peak:e} exceeds {BLOW_UP:e}"),
                    });
                }
            }
        }
        record(&mut values, &v, snap);
    }
    let mut axes = spatial_axes(spec, n);
    axes.push(Axis::new("t", n_snap, 0.0, opts.t_final));
    FieldGrid::new(&spec.name, axes, values)
}

/// Errors and observed order from three runs at `dt`, `dt/2`, `dt/4`,
/// compared at the final time.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceLadder {
    pub dt: [f64; 3],
    /// `‖u_dt - u_dt/2‖∞` and `‖u_dt/2 - u_dt/4‖∞`.
    pub differences: [f64; 2],
    pub order: f64,
}

fn final_snapshot(grid: &FieldGrid) -> Vec<f64> {
    let nt = grid.axes.last().expect("time axis").n;
    grid.values
        .iter()
        .flat_map(|v| v.iter().skip(nt - 1).step_by(nt).copied())
        .collect()
}

pub fn self_convergence(spec: &ProblemSpec, opts: &Etdrk4Options) -> Result<ConvergenceLadder> {
    let run = |dt: f64| {
        let o = Etdrk4Options {
            dt,
            n_snapshots: 2,
            ..opts.clone()
        };
        let (_, h) = o.schedule();
        etdrk4_solve(spec, &o).map(|g| (h, final_snapshot(&g)))
    };
    let (h0, a) = run(opts.dt)?;
    let (h1, b) = run(h0 / 2.0)?;
    let (h2, c) = run(h1 / 2.0)?;
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    let d0 = diff(&a, &b);
    let d1 = diff(&b, &c);
    Ok(ConvergenceLadder {
        dt: [h0, h1, h2],
        differences: [d0, d1],
        order: (d0 / d1).log2(),
    })
}
