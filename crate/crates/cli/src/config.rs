//! Run configuration: one JSON document, bundled presets, and dotted-path
//! `--set` overrides.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use scalepinn::network::NetworkConfig;
use scalepinn::problems::{make_problem, ProblemSpec};
use scalepinn::trainer::TrainConfig;
use scalepinn::{Error, Result};

/// Benchmark name plus coefficient overrides, written flat:
/// `{"name": "cavity", "Re": 400}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub name: String,
    #[serde(flatten)]
    pub coefficients: BTreeMap<String, f64>,
}

fn default_source() -> String {
    "generate".into()
}
fn default_modes() -> usize {
    256
}
fn default_dt() -> f64 {
    1e-3
}
fn default_snapshots() -> usize {
    101
}
fn default_grid() -> usize {
    129
}
fn default_tol() -> f64 {
    1e-10
}

/// Where the evaluation grid comes from and how to generate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// `generate`, `none`, or the path of a grid file.
    #[serde(default = "default_source")]
    pub source: String,
    /// Fourier modes per periodic axis.
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_snapshots")]
    pub n_snapshots: usize,
    /// Base step of the dt, dt/2, dt/4 self-convergence gate; no gate when
    /// absent.
    #[serde(default)]
    pub ladder_dt: Option<f64>,
    /// Cavity grid nodes per side.
    #[serde(default = "default_grid")]
    pub n: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Cavity: Richardson-extrapolate with the `2n - 1` grid.
    #[serde(default)]
    pub extrapolate: bool,
}

impl Default for ReferenceConfig {
    fn default() -> ReferenceConfig {
        ReferenceConfig {
            source: default_source(),
            n_modes: default_modes(),
            dt: default_dt(),
            n_snapshots: default_snapshots(),
            ladder_dt: None,
            n: default_grid(),
            tol: default_tol(),
            extrapolate: false,
        }
    }
}

fn default_output() -> String {
    "runs/latest".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default = "default_output")]
    pub output_dir: String,
}

impl RunConfig {
    /// Builds the problem and checks every section against it.
    pub fn validate(&self) -> Result<ProblemSpec> {
        let spec = make_problem(&self.problem.name, &self.problem.coefficients)?;
        spec.check_network(&self.network)?;
        self.train.validate()?;
        if self.train.iterations == 0 {
            return Err(Error::config("train.iterations", "must be positive"));
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Sets both the network initialisation seed and the batch seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.network.seed = seed;
        self.train.seed = seed;
    }
}

/// Bundled presets: the full benchmark settings, plus `*_desk` variants used
/// by the acceptance runs.
pub const PRESETS: [(&str, &str); 12] = [
    ("allen_cahn", include_str!("../presets/allen_cahn.json")),
    ("allen_cahn_desk", include_str!("../presets/allen_cahn_desk.json")),
    ("kdv", include_str!("../presets/kdv.json")),
    ("kdv_desk", include_str!("../presets/kdv_desk.json")),
    ("kuramoto_sivashinsky", include_str!("../presets/kuramoto_sivashinsky.json")),
    ("kuramoto_sivashinsky_desk", include_str!("../presets/kuramoto_sivashinsky_desk.json")),
    ("gray_scott", include_str!("../presets/gray_scott.json")),
    ("gray_scott_desk", include_str!("../presets/gray_scott_desk.json")),
    ("cavity", include_str!("../presets/cavity.json")),
    ("cavity_re400", include_str!("../presets/cavity_re400.json")),
    ("cavity_re400_desk", include_str!("../presets/cavity_re400_desk.json")),
    ("cavity_re3200", include_str!("../presets/cavity_re3200.json")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Reads `arg` as a file when it exists, otherwise as a preset name.
pub fn config_source(arg: &str) -> Result<Value> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        std::fs::read_to_string(path)?
    } else if let Some(text) = preset(arg) {
        text.to_string()
    } else {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        return Err(Error::config(
            "--config",
            format!("`{arg}` is neither a file nor a preset (presets: {})", names.join(", ")),
        ));
    };
    serde_json::from_str(&text).map_err(|e| Error::config("config", e.to_string()))
}

/// Applies one `dotted.path=value` override. The value is parsed as JSON
/// when possible and taken as a string otherwise. Missing object keys are
/// created; typos are caught when the document is decoded.
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config("--set", format!("`{assignment}` is not of the form key=value")))?;
    let path = path.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::config("--set", format!("bad key `{path}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let here = keys[..=i].join(".");
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(keys[..i].join("."), "is not an object"))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if !node.is_object() {
            return Err(Error::config(here, "is not an object"));
        }
    }
    unreachable!("loop returns on the last key")
}

/// Decodes a config document; errors carry the dotted path of the field.
pub fn decode(doc: Value) -> Result<RunConfig> {
    let text = doc.to_string();
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "config".to_string() } else { path };
        Error::config(field, e.into_inner().to_string())
    })
}

/// Loads a config, applies overrides and the seed, and validates it.
pub fn resolve(
    source: &str,
    sets: &[String],
    seed: Option<u64>,
) -> Result<(RunConfig, ProblemSpec)> {
    let mut doc = config_source(source)?;
    for s in sets {
        apply_set(&mut doc, s)?;
    }
    let mut cfg = decode(doc)?;
    if let Some(seed) = seed {
        cfg.set_seed(seed);
    }
    let spec = cfg.validate()?;
    Ok((cfg, spec))
}
