//! Multilayer perceptrons with a frequency-annealed sinusoidal first layer.
//!
//! Three layouts share the same first layer, `x2 = sin(F·π·(W1 x + b1))`:
//!
//! * **plain**: a stack of dense layers followed by a linear output layer;
//! * **skip**: every nonlinear hidden output `x_L, x_{L-1}, …, x_2` is
//!   concatenated (in that order) before the linear output layer;
//! * **branched**: a shared trunk feeding one private stack per output
//!   variable, each ending in its own linear output unit.
//!
//! Output layers have no bias. Hidden weights are He-initialised and biases
//! start at zero.
//!
//! Inputs are affinely mapped to `[-1, 1]` per axis by an [`InputMap`]. The
//! map's chain-rule factor is applied when seeding input jets, so derivative
//! planes coming out of [`forward_bundle`] are derivatives with respect to
//! the physical coordinates.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Activation, JetLayout, Tape, Tensor, Var, MAX_ORDER};
use crate::error::{Error, Result};

/// Architecture and initialisation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Shared hidden widths; the first entry is the sinusoidal layer.
    pub layer_widths: Vec<usize>,
    /// Per-output private hidden widths (branched layout).
    #[serde(default)]
    pub branch_widths: Option<BTreeMap<String, Vec<usize>>>,
    /// Concatenate all nonlinear hidden outputs before the output layer.
    #[serde(default)]
    pub skip_concat: bool,
    pub activation: Activation,
    /// The first layer's pre-activation is multiplied by `F·π`.
    pub frequency_factor: f64,
    pub output_names: Vec<String>,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("network.input_dim", "must be at least 1"));
        }
        if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return Err(Error::config(
                "network.layer_widths",
                "need at least one layer and every width must be positive",
            ));
        }
        if !(self.frequency_factor > 0.0 && self.frequency_factor.is_finite()) {
            return Err(Error::config(
                "network.frequency_factor",
                "must be a positive finite number",
            ));
        }
        if self.activation == Activation::Sin {
            return Err(Error::config(
                "network.activation",
                "hidden activation must be silu or softplus",
            ));
        }
        if self.output_names.is_empty() {
            return Err(Error::config("network.output_names", "need at least one output"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &self.output_names {
            if !seen.insert(name) {
                return Err(Error::config(
                    "network.output_names",
                    format!("duplicate output `{name}`"),
                ));
            }
        }
        if let Some(branches) = &self.branch_widths {
            if self.skip_concat {
                return Err(Error::config(
                    "network.skip_concat",
                    "branched and skip-concatenated layouts are mutually exclusive",
                ));
            }
            for name in &self.output_names {
                match branches.get(name) {
                    Some(w) if !w.contains(&0) => {}
                    Some(_) => {
                        return Err(Error::config(
                            "network.branch_widths",
                            format!("branch `{name}` has a zero width"),
                        ))
                    }
                    None => {
                        return Err(Error::config(
                            "network.branch_widths",
                            format!("missing branch for output `{name}`"),
                        ))
                    }
                }
            }
            if branches.len() != self.output_names.len() {
                return Err(Error::config(
                    "network.branch_widths",
                    "branch names must match the output names",
                ));
            }
        }
        Ok(())
    }

    pub fn n_outputs(&self) -> usize {
        self.output_names.len()
    }

    /// Stable digest of every field that affects parameter layout or
    /// evaluation. Written into checkpoints.
    pub fn hash(&self) -> String {
        let mut text = format!(
            "in={};trunk={:?};skip={};act={};F={:016x};seed={};out={:?}",
            self.input_dim,
            self.layer_widths,
            self.skip_concat,
            self.activation,
            self.frequency_factor.to_bits(),
            self.seed,
            self.output_names
        );
        if let Some(b) = &self.branch_widths {
            for (k, v) in b {
                text.push_str(&format!(";branch:{k}={v:?}"));
            }
        }
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One dense layer's location in the flat parameter vector. Weights are
/// stored `out x in`, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub w_offset: usize,
    pub b_offset: Option<usize>,
    pub out_dim: usize,
    pub in_dim: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.out_dim * self.in_dim + if self.b_offset.is_some() { self.out_dim } else { 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Head {
    /// Plain and skip layouts: one linear layer producing every output.
    Shared(Dense),
    /// One hidden stack and one linear unit per output.
    Branches(Vec<(Vec<Dense>, Dense)>),
}

/// Canonical parameter layout derived from a [`NetworkConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    trunk: Vec<Dense>,
    head: Head,
    skip_concat: bool,
    len: usize,
}

impl ParamLayout {
    pub fn new(cfg: &NetworkConfig) -> Result<ParamLayout> {
        cfg.validate()?;
        let mut offset = 0;
        let mut dense = |in_dim: usize, out_dim: usize, bias: bool| {
            let d = Dense {
                w_offset: offset,
                b_offset: bias.then_some(offset + out_dim * in_dim),
                out_dim,
                in_dim,
            };
            offset += d.len();
            d
        };
        let mut trunk = Vec::with_capacity(cfg.layer_widths.len());
        let mut prev = cfg.input_dim;
        for &w in &cfg.layer_widths {
            trunk.push(dense(prev, w, true));
            prev = w;
        }
        let head = match &cfg.branch_widths {
            Some(branches) => {
                let mut heads = Vec::new();
                for name in &cfg.output_names {
                    let mut stack = Vec::new();
                    let mut p = prev;
                    for &w in &branches[name] {
                        stack.push(dense(p, w, true));
                        p = w;
                    }
                    let out = dense(p, 1, false);
                    heads.push((stack, out));
                }
                Head::Branches(heads)
            }
            None => {
                let in_dim = if cfg.skip_concat {
                    cfg.layer_widths.iter().sum()
                } else {
                    prev
                };
                Head::Shared(dense(in_dim, cfg.n_outputs(), false))
            }
        };
        Ok(ParamLayout {
            trunk,
            head,
            skip_concat: cfg.skip_concat,
            len: offset,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Every dense layer in canonical order: trunk, then per output its
    /// branch stack followed by its output unit (or the shared output layer).
    pub fn layers(&self) -> Vec<Dense> {
        let mut all = self.trunk.clone();
        match &self.head {
            Head::Shared(d) => all.push(*d),
            Head::Branches(b) => {
                for (stack, out) in b {
                    all.extend(stack.iter().copied());
                    all.push(*out);
                }
            }
        }
        all
    }

    /// Width of the input to the final linear layer (shared head only).
    pub fn output_layer_in_dim(&self) -> Option<usize> {
        match &self.head {
            Head::Shared(d) => Some(d.in_dim),
            Head::Branches(_) => None,
        }
    }

    /// Flat index range of the layers belonging to output `k`'s branch.
    pub fn branch_range(&self, k: usize) -> Option<std::ops::Range<usize>> {
        match &self.head {
            Head::Branches(b) => {
                let (stack, out) = b.get(k)?;
                let start = stack.first().unwrap_or(out).w_offset;
                Some(start..out.w_offset + out.len())
            }
            Head::Shared(_) => None,
        }
    }
}

/// Weights and biases of one layer, unpacked.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerBlock {
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// All network parameters in one contiguous vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl ParameterSet {
    pub fn zeros(cfg: &NetworkConfig) -> Result<ParameterSet> {
        let layout = ParamLayout::new(cfg)?;
        Ok(ParameterSet {
            values: vec![0.0; layout.len()],
            layout,
        })
    }

    pub fn from_flat(cfg: &NetworkConfig, values: Vec<f64>) -> Result<ParameterSet> {
        let layout = ParamLayout::new(cfg)?;
        if values.len() != layout.len() {
            return Err(Error::Integrity(format!(
                "parameter vector has {} entries, layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(ParameterSet { values, layout })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    /// Per-layer blocks in canonical order.
    pub fn unpack(&self) -> Vec<LayerBlock> {
        self.layout
            .layers()
            .iter()
            .map(|d| {
                let nw = d.out_dim * d.in_dim;
                LayerBlock {
                    weights: self.values[d.w_offset..d.w_offset + nw].to_vec(),
                    bias: d.b_offset.map(|b| self.values[b..b + d.out_dim].to_vec()),
                }
            })
            .collect()
    }

    pub fn pack(cfg: &NetworkConfig, blocks: &[LayerBlock]) -> Result<ParameterSet> {
        let mut set = ParameterSet::zeros(cfg)?;
        let layers = set.layout.layers();
        if layers.len() != blocks.len() {
            return Err(Error::Integrity(format!(
                "expected {} layer blocks, got {}",
                layers.len(),
                blocks.len()
            )));
        }
        for (d, block) in layers.iter().zip(blocks) {
            let nw = d.out_dim * d.in_dim;
            if block.weights.len() != nw {
                return Err(Error::Integrity("layer weight size mismatch".into()));
            }
            set.values[d.w_offset..d.w_offset + nw].copy_from_slice(&block.weights);
            match (d.b_offset, &block.bias) {
                (Some(off), Some(b)) if b.len() == d.out_dim => {
                    set.values[off..off + d.out_dim].copy_from_slice(b)
                }
                (None, None) => {}
                _ => return Err(Error::Integrity("layer bias mismatch".into())),
            }
        }
        Ok(set)
    }
}

/// He-normal weights (variance `2 / fan_in`), zero biases.
pub fn init_params(cfg: &NetworkConfig) -> Result<ParameterSet> {
    let mut set = ParameterSet::zeros(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for d in set.layout.layers() {
        let std = (2.0 / d.in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::internal(e.to_string()))?;
        for w in &mut set.values[d.w_offset..d.w_offset + d.out_dim * d.in_dim] {
            *w = normal.sample(&mut rng);
        }
    }
    Ok(set)
}

/// Per-axis affine map from the physical domain onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputMap {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl InputMap {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<InputMap> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(Error::config("domain", "every axis needs lo < hi"));
        }
        Ok(InputMap { lo, hi })
    }

    /// The identity on every axis.
    pub fn identity(dim: usize) -> InputMap {
        InputMap {
            lo: vec![-1.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Derivative of the normalised coordinate with respect to the
    /// physical one.
    pub fn scale(&self, axis: usize) -> f64 {
        2.0 / (self.hi[axis] - self.lo[axis])
    }

    pub fn apply(&self, axis: usize, x: f64) -> f64 {
        (2.0 * x - (self.lo[axis] + self.hi[axis])) / (self.hi[axis] - self.lo[axis])
    }
}

/// Which derivatives each output needs: `orders[output][axis]` is the
/// highest pure derivative order along that axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivRequest {
    pub orders: Vec<Vec<usize>>,
}

impl DerivRequest {
    pub fn values_only(n_outputs: usize, n_axes: usize) -> DerivRequest {
        DerivRequest {
            orders: vec![vec![0; n_axes]; n_outputs],
        }
    }

    pub fn uniform(n_outputs: usize, orders: Vec<usize>) -> DerivRequest {
        DerivRequest {
            orders: vec![orders; n_outputs],
        }
    }

    pub fn layout(&self) -> Result<JetLayout> {
        let n_axes = self.orders.iter().map(Vec::len).max().unwrap_or(0);
        let mut merged = JetLayout::values(n_axes);
        for o in &self.orders {
            if let Some(&bad) = o.iter().find(|&&k| k > MAX_ORDER) {
                return Err(Error::config(
                    "derivative order",
                    format!("requested order {bad} exceeds the maximum of {MAX_ORDER}"),
                ));
            }
            merged = merged.merge(&JetLayout::new(o.clone())?);
        }
        Ok(merged)
    }
}

/// Tape nodes for one output's value and derivatives.
#[derive(Clone, Debug)]
pub struct OutputDerivs {
    pub value: Var,
    derivs: BTreeMap<(usize, usize), Var>,
}

/// Network outputs and their input derivatives at a batch of points, each
/// stored as a `batch x 1` tape node so residuals built from them stay
/// differentiable with respect to the parameters.
#[derive(Clone, Debug)]
pub struct DerivBundle {
    batch: usize,
    outputs: Vec<OutputDerivs>,
}

impl DerivBundle {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn value(&self, output: usize) -> Var {
        self.outputs[output].value
    }

    /// Pure derivative of `output` of the given order along `axis`.
    pub fn deriv(&self, output: usize, axis: usize, order: usize) -> Result<Var> {
        if order == 0 {
            return Ok(self.value(output));
        }
        self.outputs
            .get(output)
            .and_then(|o| o.derivs.get(&(axis, order)))
            .copied()
            .ok_or_else(|| {
                Error::internal(format!(
                    "derivative bundle lacks order {order} along axis {axis} for output {output}"
                ))
            })
    }

    /// Every (output, axis, order) entry present, value entries excluded.
    pub fn entries(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (k, o) in self.outputs.iter().enumerate() {
            for &(a, n) in o.derivs.keys() {
                out.push((k, a, n));
            }
        }
        out
    }

    /// Builds a bundle whose entries are constant leaves on `dst` holding
    /// the values that `self` has on `src`.
    pub fn detach_into(&self, src: &Tape, dst: &mut Tape) -> DerivBundle {
        let outputs = self
            .outputs
            .iter()
            .map(|o| OutputDerivs {
                value: dst.constant(src.value(o.value).clone()),
                derivs: o
                    .derivs
                    .iter()
                    .map(|(&k, &v)| (k, dst.constant(src.value(v).clone())))
                    .collect(),
            })
            .collect();
        DerivBundle {
            batch: self.batch,
            outputs,
        }
    }

    /// Assembles a bundle from explicit constant columns. Used to feed
    /// analytically known fields into residual code.
    pub fn from_columns(
        tape: &mut Tape,
        batch: usize,
        values: Vec<Vec<f64>>,
        derivs: Vec<BTreeMap<(usize, usize), Vec<f64>>>,
    ) -> Result<DerivBundle> {
        if values.len() != derivs.len() {
            return Err(Error::internal("values and derivatives disagree on output count"));
        }
        let mut outputs = Vec::new();
        for (v, d) in values.into_iter().zip(derivs) {
            if v.len() != batch || d.values().any(|c| c.len() != batch) {
                return Err(Error::internal("bundle column length mismatch"));
            }
            let value = tape.constant(Tensor::column(v));
            let derivs = d
                .into_iter()
                .map(|(k, c)| (k, tape.constant(Tensor::column(c))))
                .collect();
            outputs.push(OutputDerivs { value, derivs });
        }
        Ok(DerivBundle { batch, outputs })
    }
}

/// Input jet tensor for `points` (row-major, `batch x dim`).
fn input_jets(points: &[f64], map: &InputMap, layout: &JetLayout) -> Tensor {
    let dim = map.dim();
    let batch = points.len() / dim;
    let planes = layout.n_planes();
    let mut data = vec![0.0; planes * batch * dim];
    for i in 0..batch {
        for a in 0..dim {
            data[i * dim + a] = map.apply(a, points[i * dim + a]);
        }
    }
    for a in 0..dim {
        if let Some(p) = layout.plane(a, 1) {
            let s = map.scale(a);
            for i in 0..batch {
                data[(p * batch + i) * dim + a] = s;
            }
        }
    }
    Tensor::new(planes * batch, dim, data).expect("shape computed above")
}

fn dense_forward(
    tape: &mut Tape,
    params: &[f64],
    d: &Dense,
    x: Var,
    batch: usize,
    act: Option<Activation>,
    layout: &JetLayout,
) -> Var {
    let w = tape.param(params, d.w_offset, d.out_dim, d.in_dim);
    let mut z = tape.matmul_t(x, w);
    if let Some(b_off) = d.b_offset {
        let b = tape.param(params, b_off, 1, d.out_dim);
        z = tape.add_bias(z, b, batch);
    }
    match act {
        Some(kind) => tape.activate(z, kind, layout, batch),
        None => z,
    }
}

/// Records the network on `tape` for a jet input tensor and returns, per
/// output, the node and column holding it.
pub fn forward_tape(
    tape: &mut Tape,
    params: &ParameterSet,
    cfg: &NetworkConfig,
    input: Var,
    layout: &JetLayout,
    batch: usize,
) -> Vec<(Var, usize)> {
    let p = params.flat();
    let trunk = &params.layout.trunk;
    let first = &trunk[0];
    let w1 = tape.param(p, first.w_offset, first.out_dim, first.in_dim);
    let z1 = tape.matmul_t(input, w1);
    let b1 = tape.param(p, first.b_offset.expect("hidden layers carry a bias"), 1, first.out_dim);
    let z1 = tape.add_bias(z1, b1, batch);
    let z1 = tape.scale(z1, cfg.frequency_factor * std::f64::consts::PI);
    let mut x = tape.activate(z1, Activation::Sin, layout, batch);
    let mut hidden = vec![x];
    for d in &trunk[1..] {
        x = dense_forward(tape, p, d, x, batch, Some(cfg.activation), layout);
        hidden.push(x);
    }
    match &params.layout.head {
        Head::Shared(out) => {
            let feat = if params.layout.skip_concat {
                let rev: Vec<Var> = hidden.iter().rev().copied().collect();
                tape.concat_cols(&rev)
            } else {
                x
            };
            let y = dense_forward(tape, p, out, feat, batch, None, layout);
            (0..cfg.n_outputs()).map(|k| (y, k)).collect()
        }
        Head::Branches(branches) => branches
            .iter()
            .map(|(stack, out)| {
                let mut h = x;
                for d in stack {
                    h = dense_forward(tape, p, d, h, batch, Some(cfg.activation), layout);
                }
                (dense_forward(tape, p, out, h, batch, None, layout), 0)
            })
            .collect(),
    }
}

fn check_points(points: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::config(
            "input",
            format!("point buffer of length {} is not a multiple of input_dim {dim}", points.len()),
        ));
    }
    Ok(points.len() / dim)
}

/// Output values at one point given in network coordinates.
pub fn forward(params: &ParameterSet, cfg: &NetworkConfig, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != cfg.input_dim {
        return Err(Error::config(
            "input",
            format!("expected {} coordinates, got {}", cfg.input_dim, x.len()),
        ));
    }
    let vals = forward_values(params, cfg, x, &InputMap::identity(cfg.input_dim))?;
    Ok(vals.into_iter().map(|v| v[0]).collect())
}

/// Output values at many points (row-major `batch x input_dim`, physical
/// coordinates), evaluated in chunks. Returns one column per output.
pub fn forward_values(
    params: &ParameterSet,
    cfg: &NetworkConfig,
    points: &[f64],
    map: &InputMap,
) -> Result<Vec<Vec<f64>>> {
    const CHUNK: usize = 2048;
    let dim = cfg.input_dim;
    let n = check_points(points, dim)?;
    let layout = JetLayout::values(dim);
    let mut out = vec![Vec::with_capacity(n); cfg.n_outputs()];
    for chunk in points.chunks(CHUNK * dim) {
        let batch = chunk.len() / dim;
        let mut tape = Tape::inference(params.len());
        let input = tape.constant(input_jets(chunk, map, &layout));
        let ys = forward_tape(&mut tape, params, cfg, input, &layout, batch);
        for (k, (node, col)) in ys.into_iter().enumerate() {
            let t = tape.value(node);
            out[k].extend((0..batch).map(|i| t.get(i, col)));
        }
    }
    Ok(out)
}

/// Records the network and extracts every requested derivative as a
/// parameter-differentiable `batch x 1` node.
pub fn forward_bundle(
    tape: &mut Tape,
    params: &ParameterSet,
    cfg: &NetworkConfig,
    points: &[f64],
    map: &InputMap,
    req: &DerivRequest,
) -> Result<DerivBundle> {
    let dim = cfg.input_dim;
    if map.dim() != dim {
        return Err(Error::config("input", "input map dimension does not match the network"));
    }
    if req.orders.len() != cfg.n_outputs() {
        return Err(Error::config(
            "derivative request",
            "one entry per network output is required",
        ));
    }
    let batch = check_points(points, dim)?;
    let layout = req.layout()?;
    if layout.n_axes() > dim {
        return Err(Error::config("derivative request", "more axes than network inputs"));
    }
    let layout = JetLayout::new((0..dim).map(|a| layout.order(a)).collect())?;
    let input = tape.constant(input_jets(points, map, &layout));
    let ys = forward_tape(tape, params, cfg, input, &layout, batch);
    let mut outputs = Vec::with_capacity(ys.len());
    for (k, (node, col)) in ys.into_iter().enumerate() {
        let value = tape.column(node, col, 0, batch);
        let mut derivs = BTreeMap::new();
        for (axis, &max) in req.orders[k].iter().enumerate() {
            for order in 1..=max {
                let plane = layout.plane(axis, order).expect("layout covers request");
                derivs.insert((axis, order), tape.column(node, col, plane * batch, batch));
            }
        }
        outputs.push(OutputDerivs { value, derivs });
    }
    Ok(DerivBundle { batch, outputs })
}

const CHECKPOINT_MAGIC: &str = "#SCALECKPT v1";

/// Writes `#SCALECKPT v1 <config-hash> <len>\n` followed by the flat
/// parameter vector as little-endian f64.
pub fn save_checkpoint(path: &Path, params: &ParameterSet, cfg: &NetworkConfig) -> Result<()> {
    let mut buf = format!("{CHECKPOINT_MAGIC} {} {}\n", cfg.hash(), params.len()).into_bytes();
    for v in params.flat() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint, returning the stored config hash and the values.
pub fn read_checkpoint(path: &Path) -> Result<(String, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or(Error::Parse {
        offset: bytes.len(),
        message: "missing header line".into(),
    })?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Parse {
        offset: 0,
        message: "header is not UTF-8".into(),
    })?;
    let rest = header.strip_prefix(CHECKPOINT_MAGIC).ok_or(Error::Parse {
        offset: 0,
        message: "not a checkpoint file".into(),
    })?;
    let fields: Vec<&str> = rest.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(Error::Parse {
            offset: 0,
            message: "header needs a config hash and a length".into(),
        });
    }
    let len: usize = fields[1].parse().map_err(|_| Error::Parse {
        offset: 0,
        message: format!("bad length `{}`", fields[1]),
    })?;
    let payload = &bytes[nl + 1..];
    if payload.len() != len * 8 {
        return Err(Error::Parse {
            offset: nl + 1 + payload.len().min(len * 8),
            message: format!("payload holds {} bytes, header promises {}", payload.len(), len * 8),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((fields[0].to_string(), values))
}

/// Reads a checkpoint and checks it against `cfg`.
pub fn load_checkpoint(path: &Path, cfg: &NetworkConfig) -> Result<ParameterSet> {
    let (hash, values) = read_checkpoint(path)?;
    if hash != cfg.hash() {
        return Err(Error::Integrity(format!(
            "checkpoint was written for config {hash}, current config is {}",
            cfg.hash()
        )));
    }
    ParameterSet::from_flat(cfg, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn plain_cfg(widths: Vec<usize>) -> NetworkConfig {
        NetworkConfig {
            input_dim: 2,
            layer_widths: widths,
            branch_widths: None,
            skip_concat: false,
            activation: Activation::Silu,
            frequency_factor: 2.0,
            output_names: vec!["u".into()],
            seed: 11,
        }
    }

    #[test]
    fn equal_seeds_give_identical_parameters() {
        let cfg = plain_cfg(vec![16, 8]);
        assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 12;
        assert_ne!(init_params(&cfg).unwrap(), init_params(&other).unwrap());
    }

    #[test]
    fn hidden_biases_start_at_zero() {
        let cfg = plain_cfg(vec![16, 8, 8]);
        let p = init_params(&cfg).unwrap();
        for block in p.unpack() {
            if let Some(b) = block.bias {
                assert!(b.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn output_layer_has_no_bias() {
        let cfg = plain_cfg(vec![4]);
        let p = init_params(&cfg).unwrap();
        let blocks = p.unpack();
        assert!(blocks.last().unwrap().bias.is_none());
        // 2*4 + 4 + 4*1
        assert_eq!(p.len(), 16);
    }

    #[test]
    fn skip_concat_width() {
        let mut cfg = plain_cfg(vec![8, 8, 8, 8]);
        cfg.skip_concat = true;
        let layout = ParamLayout::new(&cfg).unwrap();
        assert_eq!(layout.output_layer_in_dim(), Some(32));
    }

    #[test]
    fn branched_and_skip_conflict() {
        let mut cfg = plain_cfg(vec![8]);
        cfg.skip_concat = true;
        cfg.branch_widths = Some([("u".to_string(), vec![4])].into_iter().collect());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_branch_is_rejected() {
        let mut cfg = plain_cfg(vec![8]);
        cfg.output_names = vec!["u".into(), "v".into()];
        cfg.branch_widths = Some([("u".to_string(), vec![4])].into_iter().collect());
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cfg = plain_cfg(vec![8, 8]);
        let p = ParameterSet::zeros(&cfg).unwrap();
        assert_eq!(forward(&p, &cfg, &[0.3, -0.2]).unwrap(), vec![0.0]);
    }

    #[test]
    fn wrong_input_length_is_config_error() {
        let cfg = plain_cfg(vec![8]);
        let p = init_params(&cfg).unwrap();
        assert!(matches!(forward(&p, &cfg, &[0.1]), Err(Error::Config { .. })));
    }

    #[test]
    fn hand_computed_one_two_one_network() {
        // input 1 -> sin layer (width 2) -> silu layer (width 1) -> output 1
        let cfg = NetworkConfig {
            input_dim: 1,
            layer_widths: vec![2, 1],
            branch_widths: None,
            skip_concat: false,
            activation: Activation::Silu,
            frequency_factor: 1.5,
            output_names: vec!["u".into()],
            seed: 0,
        };
        let blocks = vec![
            LayerBlock {
                weights: vec![0.4, -0.9],
                bias: Some(vec![0.1, 0.25]),
            },
            LayerBlock {
                weights: vec![1.3, -0.6],
                bias: Some(vec![0.05]),
            },
            LayerBlock {
                weights: vec![2.0],
                bias: None,
            },
        ];
        let p = ParameterSet::pack(&cfg, &blocks).unwrap();
        let x = 0.37_f64;
        let fpi = 1.5 * std::f64::consts::PI;
        let h1 = ((0.4 * x + 0.1) * fpi).sin();
        let h2 = ((-0.9 * x + 0.25) * fpi).sin();
        let z = 1.3 * h1 - 0.6 * h2 + 0.05;
        let expected = 2.0 * z / (1.0 + (-z).exp());
        let got = forward(&p, &cfg, &[x]).unwrap()[0];
        assert!((got - expected).abs() <= 1e-14, "{got} vs {expected}");
    }

    #[test]
    fn pack_unpack_round_trip() {
        let mut cfg = plain_cfg(vec![6, 5]);
        cfg.output_names = vec!["u".into(), "v".into()];
        cfg.branch_widths = Some(
            [("u".to_string(), vec![3, 3]), ("v".to_string(), vec![4])]
                .into_iter()
                .collect(),
        );
        let p = init_params(&cfg).unwrap();
        let q = ParameterSet::pack(&cfg, &p.unpack()).unwrap();
        assert_eq!(p.flat(), q.flat());
    }

    #[test]
    fn config_hash_tracks_fields() {
        let cfg = plain_cfg(vec![8]);
        let mut other = cfg.clone();
        assert_eq!(cfg.hash(), other.hash());
        other.frequency_factor = 3.0;
        assert_ne!(cfg.hash(), other.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn input_map_normalises_to_unit_interval() {
        let m = InputMap::new(vec![0.0, -1.0], vec![2.0 * std::f64::consts::PI, 1.0]).unwrap();
        assert!((m.apply(0, 0.0) + 1.0).abs() < 1e-15);
        assert!((m.apply(0, 2.0 * std::f64::consts::PI) - 1.0).abs() < 1e-15);
        assert_eq!(m.apply(1, 0.5), 0.5);
        assert!(InputMap::new(vec![1.0], vec![1.0]).is_err());
    }
}
