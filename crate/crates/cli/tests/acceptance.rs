//! Acceptance runner. Prints one PASS/FAIL/SKIP line per criterion and
//! exits nonzero if any criterion fails.
//!
//! The long training criteria (5-9, 12) run only with `--heavy` or
//! `SCALEPINN_HEAVY=1`. Without it, criteria 8, 9 and 12 are judged from
//! finished run directories under `SCALEPINN_RUNS` when that is set, and
//! skipped otherwise.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use scalepinn::autodiff::Tape;
use scalepinn::network::load_checkpoint;
use scalepinn::problems::{make_problem, ProblemSpec};
use scalepinn::reference::{etdrk4_solve_from, load_field, self_convergence, Etdrk4Options};
use scalepinn::scale_loss::{assemble_scale_loss, linear_iterate, linear_sc_equivalence, LinearMethod};
use scalepinn::trainer::{evaluate, EvalMetrics};
use scalepinn_cli::config::{decode, resolve};
use scalepinn_cli::run::{cmd_ablate, cmd_train, scale_wins, RunOptions, CHECKPOINT_FILE, CONFIG_FILE, REFERENCE_FILE};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

type Criterion = dyn Fn(&Ctx) -> Outcome;

struct Ctx {
    heavy: bool,
    runs: Option<PathBuf>,
    scratch: tempfile::TempDir,
}

fn derivatives(_: &Ctx) -> Outcome {
    let (low, high) = common::jet_fd_sweep(100, 11, 1e-3);
    check(
        low <= 1e-6 && high <= 1e-4,
        format!("orders 1-2 worst {low:.2e} (<= 1e-6), orders 3-4 worst {high:.2e} (<= 1e-4)"),
    )
}

fn gradients(_: &Ctx) -> Outcome {
    let worst = common::gradient_sweep(50, 5);
    check(worst <= 1e-5, format!("worst relative error {worst:.2e} (<= 1e-5)"))
}

/// Parts (a) and (b) over `specs`: disabled correction is the baseline
/// bitwise, and an equal snapshot gives a zero correction.
fn identities(specs: &[ProblemSpec], cases: usize, seed: u64) -> Result<(), String> {
    let mut r = common::rng(seed);
    for i in 0..cases {
        let spec = &specs[i % specs.len()];
        let cfg = common::net_for(spec, &mut r);
        let pk = common::random_params(&cfg, &mut r, 0.3);
        let pkm1 = common::perturb(&pk, &mut r, 0.1);
        let batch = common::small_batch(spec, &mut r);
        let w = common::random_weights(&mut r);
        let corr = common::random_corr(&mut r);
        let mut off = corr;
        off.enabled = false;
        let (v_sc, g_sc) = common::scale_loss(spec, &cfg, &pk, &pkm1, &batch, &w, &off);
        let (v_b, g_b) = common::baseline_loss(spec, &cfg, &pk, &batch, &w);
        if v_sc.to_bits() != v_b.to_bits() || g_sc.iter().zip(&g_b).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(format!("{}: disabled correction differs from baseline", spec.name));
        }
        let mut tape = Tape::new(pk.len());
        let (_, rep) = assemble_scale_loss(&mut tape, spec, &cfg, &pk, &pk, &batch, &w, &corr).map_err(|e| e.to_string())?;
        if rep.correction.iter().any(|&s| s != 0.0) || rep.total.to_bits() != v_b.to_bits() {
            return Err(format!("{}: nonzero correction for an equal snapshot", spec.name));
        }
    }
    Ok(())
}

fn random_spd(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = common::rng(seed);
    let g: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| g[k][i] * g[k][j]).sum::<f64>() + if i == j { n as f64 } else { 0.0 })
                .collect()
        })
        .collect()
}

fn correction_identities(_: &Ctx) -> Outcome {
    if let Err(e) = identities(&common::all_problems(), 100, 21) {
        return Outcome::Fail(e);
    }
    let mut worst = 0.0f64;
    for case in 0..32u64 {
        let n = 1 + (case as usize * 7) % 64;
        let a = random_spd(n, case);
        let mut r = common::rng(case ^ 1);
        let h: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let bound = a.iter().map(|row| row.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
        match linear_sc_equivalence(&a, &h, 1.0 / bound, 1 + case as usize) {
            Ok(gap) => worst = worst.max(gap),
            Err(e) => return Outcome::Fail(e.to_string()),
        }
    }
    check(
        worst <= 1e-10,
        format!("(a) bitwise, (b) S = 0, (c) worst gap {worst:.2e} (<= 1e-10)"),
    )
}

fn iterative_solvers(_: &Ctx) -> Outcome {
    let mut worst = 0.0f64;
    for n in [32usize, 64, 128] {
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| [2.0, -1.0].get(i.abs_diff(j)).copied().unwrap_or(0.0)).collect())
            .collect();
        let hh = std::f64::consts::PI / (n + 1) as f64;
        let h: Vec<f64> = (1..=n).map(|i| hh * hh * (i as f64 * hh).sin()).collect();
        // Thomas algorithm for the direct solve
        let (mut c, mut d) = (vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let m = 2.0 + if i > 0 { c[i - 1] } else { 0.0 };
            c[i] = -1.0 / m;
            d[i] = (h[i] + if i > 0 { d[i - 1] } else { 0.0 }) / m;
        }
        let mut exact = vec![0.0; n];
        for i in (0..n).rev() {
            exact[i] = d[i] - c[i] * if i + 1 < n { exact[i + 1] } else { 0.0 };
        }
        let lambda_min = 2.0 - 2.0 * hh.cos();
        let rho_j = 1.0 - lambda_min / 2.0;
        let floor = 64.0 * f64::EPSILON * 4.0 * exact.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (m, rho) in [
            (LinearMethod::Richardson(0.45), 1.0 - 0.45 * lambda_min),
            (LinearMethod::Jacobi, rho_j),
            (LinearMethod::GaussSeidel, rho_j * rho_j),
        ] {
            let iters = ((1e-11f64).ln() / rho.ln()).ceil() as usize;
            let run = match linear_iterate(m, &a, &h, &vec![0.0; n], iters) {
                Ok(r) => r,
                Err(e) => return Outcome::Fail(e.to_string()),
            };
            if run.residual_norms.windows(2).any(|w| w[0] > floor && w[1] >= w[0]) {
                return Outcome::Fail(format!("{m:?} n={n}: residual not monotone"));
            }
            let last = run.iterates.last().unwrap();
            worst = last.iter().zip(&exact).fold(worst, |e, (x, y)| e.max((x - y).abs()));
        }
    }
    check(worst <= 1e-8, format!("residuals monotone, worst error vs direct {worst:.2e} (<= 1e-8)"))
}

fn ablation(ctx: &Ctx, preset: &str, bound: Option<f64>) -> Outcome {
    if !ctx.heavy {
        return Outcome::Skip("needs --heavy (ten full training runs)".into());
    }
    let (cfg, spec) = match resolve(preset, &[], None) {
        Ok(x) => x,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let dir = ctx.scratch.path().join(preset);
    let records = match cmd_ablate(&cfg, &spec, &dir, RunOptions::default(), true, &mut std::io::sink()) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("{preset}: {e}")),
    };
    let wins = scale_wins(&records);
    let scale: Vec<f64> = records.iter().filter(|r| r.arm == "scale").map(|r| r.summary.final_error()).collect();
    let mean = scale.iter().sum::<f64>() / scale.len() as f64;
    let within = bound.is_none_or(|b| scale.iter().all(|&e| e <= b));
    check(
        wins >= 4 && within,
        format!(
            "{preset}: scale wins {wins}/5 (>= 4), mean scale rel L2 {mean:.3e}{}",
            bound.map(|b| format!(" (each <= {b:e})")).unwrap_or_default()
        ),
    )
}

/// Final metrics of a cavity run, either trained now or read back from a
/// finished run directory.
fn cavity_metrics(ctx: &Ctx, preset: &str, artifact: &str) -> Result<Option<EvalMetrics>, String> {
    if ctx.heavy {
        let (cfg, spec) = resolve(preset, &[], None).map_err(|e| e.to_string())?;
        let dir = ctx.scratch.path().join(preset);
        let s = cmd_train(&cfg, &spec, &dir, RunOptions::default(), &mut std::io::sink()).map_err(|e| e.to_string())?;
        return Ok(s.final_eval);
    }
    let Some(dir) = ctx.runs.as_ref().map(|r| r.join(artifact)) else {
        return Ok(None);
    };
    if !dir.join(CHECKPOINT_FILE).is_file() {
        return Ok(None);
    }
    let eval = || -> scalepinn::Result<EvalMetrics> {
        let doc = serde_json::from_str(&std::fs::read_to_string(dir.join(CONFIG_FILE))?)
            .map_err(|e| scalepinn::Error::config("config", e.to_string()))?;
        let cfg = decode(doc)?;
        let spec = cfg.validate()?;
        let params = load_checkpoint(&dir.join(CHECKPOINT_FILE), &cfg.network)?;
        evaluate(&params, &cfg.network, &spec, &load_field(&dir.join(REFERENCE_FILE))?)
    };
    eval().map(Some).map_err(|e| format!("{}: {e}", dir.display()))
}

fn cavity_re100(ctx: &Ctx) -> Outcome {
    match cavity_metrics(ctx, "cavity", "cavity_re100") {
        Ok(Some(m)) => {
            let (rel, div) = (m.velocity_rel_l2.unwrap_or(f64::NAN), m.div_mse.unwrap_or(f64::NAN));
            check(
                rel <= 5e-2 && div <= 1e-4,
                format!("velocity rel L2 {rel:.3e} (<= 5e-2), divergence MSE {div:.3e} (<= 1e-4)"),
            )
        }
        Ok(None) => Outcome::Skip("no finished run; set SCALEPINN_RUNS or use --heavy".into()),
        Err(e) => Outcome::Fail(e),
    }
}

fn cavity_re400(ctx: &Ctx) -> Outcome {
    match cavity_metrics(ctx, "cavity_re400", "cavity_re400") {
        Ok(Some(m)) => {
            let mse = m.velocity_mse.unwrap_or(f64::NAN);
            let rel = m.velocity_rel_l2.unwrap_or(f64::NAN);
            check(
                mse <= 1e-4,
                format!("velocity MSE {mse:.3e} (<= 1e-4); velocity rel L2 {rel:.3e} (reported, not gated)"),
            )
        }
        Ok(None) => Outcome::Skip("no finished run; set SCALEPINN_RUNS or use --heavy".into()),
        Err(e) => Outcome::Fail(e),
    }
}

fn spectral_oracle(_: &Ctx) -> Outcome {
    let mut orders = Vec::new();
    for (name, modes, dt) in [
        ("allen_cahn", 256, 0.01),
        ("kdv", 256, 1e-3),
        ("kuramoto_sivashinsky", 256, 2e-3),
        ("gray_scott", 128, 2e-3),
    ] {
        let spec = make_problem(name, &Default::default()).unwrap();
        let o = Etdrk4Options {
            n_modes: modes,
            dt,
            t_final: spec.horizon().unwrap(),
            n_snapshots: 2,
        };
        match self_convergence(&spec, &o) {
            Ok(l) => orders.push((name, l.order)),
            Err(e) => return Outcome::Fail(format!("{name}: {e}")),
        }
    }
    let alpha = 1e-4;
    let spec = make_problem("allen_cahn", &[("delta".to_string(), 0.0)].into_iter().collect()).unwrap();
    let n = 128;
    let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
    let pi = std::f64::consts::PI;
    let u0 = xs.iter().map(|&x| (pi * x).sin() + 0.5 * (3.0 * pi * x).cos()).collect();
    let o = Etdrk4Options {
        n_modes: n,
        dt: 1e-3,
        t_final: 1.0,
        n_snapshots: 11,
    };
    let grid = match etdrk4_solve_from(&spec, &o, vec![u0]) {
        Ok(g) => g,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut worst = 0.0f64;
    for t in 0..11 {
        let time = grid.axes[1].node(t);
        for (s, &x) in xs.iter().enumerate() {
            let exact = (-alpha * pi * pi * time).exp() * (pi * x).sin()
                + 0.5 * (-9.0 * alpha * pi * pi * time).exp() * (3.0 * pi * x).cos();
            worst = worst.max((grid.values[0][s * 11 + t] - exact).abs());
        }
    }
    let in_band = orders.iter().all(|(_, p)| (3.5..=4.5).contains(p));
    let listed: Vec<String> = orders.iter().map(|(n, p)| format!("{n} {p:.2}")).collect();
    check(
        in_band && worst <= 1e-8,
        format!("orders [{}] in [3.5, 4.5]; heat-limit error {worst:.2e} (<= 1e-8)", listed.join(", ")),
    )
}

fn reproducibility(ctx: &Ctx) -> Outcome {
    let run = |name: &str| {
        let dir = ctx.scratch.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_scalepinn"))
            .args(["train", "--config", "allen_cahn_desk", "--seed", "7", "--out"])
            .arg(&dir)
            .args(["--set", "train.iterations=200", "--set", "train.eval_every=50"])
            .args(["--set", "reference.n_snapshots=11", "--set", "reference.ladder_dt=null"])
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        std::fs::read_to_string(dir.join("metrics.csv")).map_err(|e| e.to_string())
    };
    match (run("repro_a"), run("repro_b")) {
        (Ok(a), Ok(b)) => {
            let strip = |s: &str| -> Vec<String> {
                s.lines().map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 1).map(|(_, c)| c).collect::<Vec<_>>().join(",")).collect()
            };
            check(
                strip(&a) == strip(&b),
                format!(
                    "two 200-iteration runs agree on every metrics.csv column but wall_time_s; whole file bitwise equal: {}",
                    a == b
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => Outcome::Fail(e),
    }
}

fn gray_scott(ctx: &Ctx) -> Outcome {
    let spec = make_problem("gray_scott", &Default::default()).unwrap();
    if let Err(e) = identities(std::slice::from_ref(&spec), 20, 31) {
        return Outcome::Fail(e);
    }
    let smoke = if ctx.heavy {
        let (cfg, spec) = resolve("gray_scott_desk", &[], None).unwrap();
        let dir = ctx.scratch.path().join("gray_scott");
        cmd_train(&cfg, &spec, &dir, RunOptions::default(), &mut std::io::sink())
            .map(|s| s.rows.last().map(|r| (r.iter, if s.final_error().is_finite() { r.loss.total } else { f64::NAN })))
            .map_err(|e| e.to_string())
    } else {
        match &ctx.runs {
            Some(r) => finished_rows(&r.join("gray_scott_smoke")),
            None => Ok(None),
        }
    };
    match smoke {
        Ok(Some((iter, loss))) => check(
            iter >= 20_000 && loss.is_finite(),
            format!("identities hold on gray_scott; smoke run reached iter {iter}, final loss {loss:.3e}, all metrics finite"),
        ),
        Ok(None) => Outcome::Skip("identities hold; no finished 20k smoke run; set SCALEPINN_RUNS or use --heavy".into()),
        Err(e) => Outcome::Fail(e),
    }
}

/// Last iteration and total loss recorded in a finished run directory;
/// the loss is NaN if any metric in that row is not finite.
fn finished_rows(dir: &Path) -> Result<Option<(usize, f64)>, String> {
    if !dir.join(CHECKPOINT_FILE).is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(dir.join("metrics.csv")).map_err(|e| e.to_string())?;
    let last = text.lines().last().unwrap_or_default();
    let cols: Vec<&str> = last.split(',').collect();
    let iter = cols[0].parse().map_err(|_| format!("bad metrics row `{last}`"))?;
    let finite = cols.iter().skip(1).all(|c| c.is_empty() || c.parse::<f64>().is_ok_and(f64::is_finite));
    Ok(Some((iter, if finite { cols[2].parse().unwrap_or(f64::NAN) } else { f64::NAN })))
}

fn main() {
    let heavy = std::env::args().any(|a| a == "--heavy") || std::env::var_os("SCALEPINN_HEAVY").is_some();
    // cargo runs tests from the package directory; resolve relative paths
    // against the workspace root instead
    let runs = std::env::var_os("SCALEPINN_RUNS")
        .map(|r| Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(r));
    let ctx = Ctx {
        heavy,
        runs,
        scratch: tempfile::tempdir().expect("scratch directory"),
    };
    let criteria: [(&str, &Criterion); 12] = [
        ("derivative correctness", &derivatives),
        ("gradient correctness", &gradients),
        ("correction identities", &correction_identities),
        ("iterative solvers", &iterative_solvers),
        ("allen-cahn ablation", &|c| ablation(c, "allen_cahn_desk", Some(5e-2))),
        ("kdv ablation", &|c| ablation(c, "kdv_desk", Some(1e-1))),
        ("kuramoto-sivashinsky ablation", &|c| ablation(c, "kuramoto_sivashinsky_desk", None)),
        ("cavity re=100", &cavity_re100),
        ("cavity re=400", &cavity_re400),
        ("spectral oracle", &spectral_oracle),
        ("reproducibility", &reproducibility),
        ("gray-scott", &gray_scott),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f(&ctx);
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
