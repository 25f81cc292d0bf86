//! Independent reference solutions and the grid file format.
//!
//! * [`etdrk4_solve`]: Fourier pseudo-spectral ETDRK4 for the periodic
//!   problems.
//! * [`cavity_solve`]: steady vorticity-streamfunction finite differences
//!   for the lid-driven cavity.

mod cavity;
mod spectral;

pub use cavity::{cavity_extrapolated, cavity_solve, discrete_divergence, CavityOptions, CavityReport};
pub use spectral::{
    dft, dft_direct, etdrk4_solve, etdrk4_solve_from, idft, self_convergence, ConvergenceLadder,
    Etdrk4Options,
};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One uniform grid axis. `lo` and `hi` are the first and last node, so a
/// periodic axis sampled without its right endpoint has `hi = L - h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub name: String,
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Axis {
    pub fn new(name: impl Into<String>, n: usize, lo: f64, hi: f64) -> Axis {
        Axis {
            name: name.into(),
            n,
            lo,
            hi,
        }
    }

    /// Nodes `lo + i (L / n)` for `i < n` of a periodic interval of length `L`.
    pub fn periodic(name: impl Into<String>, n: usize, lo: f64, length: f64) -> Axis {
        Axis::new(name, n, lo, lo + length * (n - 1) as f64 / n as f64)
    }

    pub fn spacing(&self) -> f64 {
        if self.n > 1 {
            (self.hi - self.lo) / (self.n - 1) as f64
        } else {
            0.0
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        if self.n > 1 {
            self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
        } else {
            self.lo
        }
    }
}

/// Values of one or more variables on a tensor-product grid, row-major
/// with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub problem: String,
    pub axes: Vec<Axis>,
    pub variables: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// Positional variable names used by the grid format.
pub const VARIABLE_NAMES: [&str; 3] = ["u", "v", "p"];

impl FieldGrid {
    pub fn new(problem: &str, axes: Vec<Axis>, values: Vec<Vec<f64>>) -> Result<FieldGrid> {
        if values.len() > VARIABLE_NAMES.len() || values.is_empty() {
            return Err(Error::config("grid", "between one and three variables are supported"));
        }
        let grid = FieldGrid {
            problem: problem.to_string(),
            axes,
            variables: VARIABLE_NAMES[..values.len()].iter().map(|s| s.to_string()).collect(),
            values,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        for a in &self.axes {
            if a.n == 0 || !(a.lo.is_finite() && a.hi.is_finite()) || (a.n > 1 && !(a.hi > a.lo)) {
                return Err(Error::config("grid", format!("axis `{}` is malformed", a.name)));
            }
        }
        let len = self.len();
        if self.values.iter().any(|v| v.len() != len) {
            return Err(Error::config("grid", "value count must equal the product of axis lengths"));
        }
        Ok(())
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n).collect()
    }

    pub fn variable(&self, name: &str) -> Option<&[f64]> {
        self.variables
            .iter()
            .position(|v| v == name)
            .map(|k| self.values[k].as_slice())
    }

    /// Node coordinates, row-major (`len x n_axes`).
    pub fn points(&self) -> Vec<f64> {
        let d = self.axes.len();
        let mut out = Vec::with_capacity(self.len() * d);
        let mut idx = vec![0usize; d];
        for _ in 0..self.len() {
            for (a, &i) in idx.iter().enumerate() {
                out.push(self.axes[a].node(i));
            }
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < self.axes[a].n {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }
}

const GRID_MAGIC: &str = "#SCALEGRID v1";

/// Writes the grid: a header line, one line with `name n lo hi` for every
/// axis, then each variable as little-endian f64.
pub fn save_field(path: &Path, grid: &FieldGrid) -> Result<()> {
    grid.validate()?;
    let mut buf = format!(
        "{GRID_MAGIC} {} {} {}\n",
        grid.problem,
        grid.values.len(),
        grid.axes.len()
    );
    let axes: Vec<String> = grid
        .axes
        .iter()
        .map(|a| format!("{} {} {:?} {:?}", a.name, a.n, a.lo, a.hi))
        .collect();
    buf.push_str(&axes.join(" "));
    buf.push('\n');
    let mut bytes = buf.into_bytes();
    for v in &grid.values {
        for x in v {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

/// Parses a grid file from bytes.
pub fn parse_field(bytes: &[u8]) -> Result<FieldGrid> {
    let line = |start: usize| -> Result<(&str, usize)> {
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(bytes.len(), "unterminated header line"))?;
        let text = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| parse_err(start, "header is not UTF-8"))?;
        Ok((text, start + rel + 1))
    };
    let (first, next) = line(0)?;
    let rest = first
        .strip_prefix(GRID_MAGIC)
        .ok_or_else(|| parse_err(0, "missing #SCALEGRID v1 magic"))?;
    let head: Vec<&str> = rest.split_whitespace().collect();
    if head.len() != 3 {
        return Err(parse_err(0, "header needs problem, nvars and ndims"));
    }
    let problem = head[0].to_string();
    let nvars: usize = head[1].parse().map_err(|_| parse_err(0, "bad nvars"))?;
    let ndims: usize = head[2].parse().map_err(|_| parse_err(0, "bad ndims"))?;
    let (axis_line, payload_start) = line(next)?;
    let tokens: Vec<&str> = axis_line.split_whitespace().collect();
    if tokens.len() != 4 * ndims {
        return Err(parse_err(next, format!("expected {ndims} axis descriptions")));
    }
    let mut axes = Vec::with_capacity(ndims);
    for q in tokens.chunks(4) {
        let n = q[1].parse().map_err(|_| parse_err(next, format!("bad axis length `{}`", q[1])))?;
        let lo = q[2].parse().map_err(|_| parse_err(next, format!("bad axis bound `{}`", q[2])))?;
        let hi = q[3].parse().map_err(|_| parse_err(next, format!("bad axis bound `{}`", q[3])))?;
        axes.push(Axis::new(q[0], n, lo, hi));
    }
    let per_var: usize = axes.iter().map(|a| a.n).product();
    let expected = nvars * per_var * 8;
    let payload = &bytes[payload_start..];
    if payload.len() != expected {
        return Err(parse_err(
            payload_start + payload.len().min(expected),
            format!("payload holds {} bytes, header promises {expected}", payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(per_var * 8)
        .map(|block| {
            block
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        })
        .collect();
    FieldGrid::new(&problem, axes, values)
        .map_err(|e| parse_err(payload_start, e.to_string()))
}

pub fn load_field(path: &Path) -> Result<FieldGrid> {
    parse_field(&std::fs::read(path)?)
}
