//! Command implementations. Each returns a library `Result`; `main` maps
//! errors to exit codes with [`exit_code`].

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use scalepinn::network::{forward_values, load_checkpoint, save_checkpoint, ParameterSet};
use scalepinn::problems::{BcKind, ProblemKind, ProblemSpec};
use scalepinn::reference::{
    cavity_extrapolated, cavity_solve, etdrk4_solve, load_field, save_field, self_convergence,
    CavityOptions, Etdrk4Options, FieldGrid,
};
use scalepinn::trainer::{evaluate, metric_outputs, metrics_header, metrics_line, train, EvalMetrics, MetricsRow};
use scalepinn::{Error, Result};

use crate::config::RunConfig;

/// Accepted band for the observed ETDRK4 order.
pub const ORDER_BAND: (f64, f64) = (3.5, 4.5);

pub const CONFIG_FILE: &str = "config.json";
pub const SEED_FILE: &str = "seed";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const REFERENCE_FILE: &str = "reference.grid";
pub const PLOT_FILE: &str = "error_vs_time.dat";

/// 0 ok, 2 configuration, 3 integrity, 4 numeric failure, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Io(_) => 2,
        Error::Integrity(_) | Error::Parse { .. } => 3,
        Error::Numeric(_) | Error::NonFinite { .. } | Error::Diverged { .. } => 4,
        Error::Internal(_) => 1,
    }
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Error::config(
                "--out",
                format!("{} already exists and is not empty (pass --force to overwrite)", dir.display()),
            ));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Builds the reference grid the config asks for, if any. `log` receives
/// solver diagnostics.
pub fn reference_grid(
    cfg: &RunConfig,
    spec: &ProblemSpec,
    log: &mut dyn Write,
) -> Result<Option<FieldGrid>> {
    match cfg.reference.source.as_str() {
        "none" => Ok(None),
        "generate" => generate_reference(cfg, spec, log).map(Some),
        path => {
            let grid = load_field(Path::new(path))?;
            if grid.problem != spec.name {
                return Err(Error::config(
                    "reference.source",
                    format!("grid is for `{}`, run is `{}`", grid.problem, spec.name),
                ));
            }
            Ok(Some(grid))
        }
    }
}

pub fn generate_reference(cfg: &RunConfig, spec: &ProblemSpec, log: &mut dyn Write) -> Result<FieldGrid> {
    let r = &cfg.reference;
    match spec.kind {
        ProblemKind::Cavity => {
            let mut opts = CavityOptions::new(spec.coefficient("Re"), r.n);
            opts.u_lid = spec.coefficient("u_lid");
            opts.tol = r.tol;
            let grid = if r.extrapolate {
                writeln!(log, "cavity: Re={} n={} and n={} with extrapolation", opts.re, r.n, 2 * r.n - 1)?;
                cavity_extrapolated(&opts)?
            } else {
                let report = cavity_solve(&opts)?;
                writeln!(
                    log,
                    "cavity: Re={} n={} converged in {} sweeps (update {:e})",
                    opts.re, r.n, report.iterations, report.final_update
                )?;
                report.grid
            };
            Ok(grid)
        }
        _ if spec.bc_kind == BcKind::Periodic => {
            let t_final = spec
                .horizon()
                .ok_or_else(|| Error::internal("periodic benchmark without a time horizon"))?;
            let opts = Etdrk4Options {
                n_modes: r.n_modes,
                dt: r.dt,
                t_final,
                n_snapshots: r.n_snapshots,
            };
            if let Some(ladder_dt) = r.ladder_dt {
                let ladder = self_convergence(spec, &Etdrk4Options { dt: ladder_dt, ..opts.clone() })?;
                writeln!(
                    log,
                    "etdrk4 ladder: dt {:?} differences {:e} {:e} observed order {:.3}",
                    ladder.dt, ladder.differences[0], ladder.differences[1], ladder.order
                )?;
                if !(ladder.order >= ORDER_BAND.0 && ladder.order <= ORDER_BAND.1) {
                    return Err(Error::Numeric(format!(
                        "ETDRK4 self-convergence gate failed: observed order {:.3} outside [{}, {}] (ladder dt {:?})",
                        ladder.order, ORDER_BAND.0, ORDER_BAND.1, ladder.dt
                    )));
                }
            }
            let (steps, h) = opts.schedule();
            writeln!(
                log,
                "etdrk4: {} modes, step {h:e} ({steps} per snapshot), {} snapshots to t={t_final}",
                r.n_modes, r.n_snapshots
            )?;
            etdrk4_solve(spec, &opts)
        }
        _ => Err(Error::config(
            "problem.name",
            format!("no reference solver for `{}`", spec.name),
        )),
    }
}

/// Outcome of one training run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub final_eval: Option<EvalMetrics>,
}

impl RunSummary {
    pub fn final_error(&self) -> f64 {
        self.final_eval.as_ref().map_or(f64::NAN, |e| e.overall_rel_l2)
    }

    pub fn wall_time(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.wall_time_s)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub force: bool,
    pub plot_export: bool,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    File::create(path)?.write_all(text.as_bytes())?;
    Ok(())
}

/// Trains one configuration into `dir`. The config, seed and metrics are
/// written before training starts so a failed run keeps its partial
/// metrics; the checkpoint is written at the end.
pub fn train_run(
    cfg: &RunConfig,
    spec: &ProblemSpec,
    dir: &Path,
    reference: Option<&FieldGrid>,
    opts: RunOptions,
    log: &mut dyn Write,
) -> Result<RunSummary> {
    prepare_dir(dir, opts.force)?;
    for stale in [METRICS_FILE, CHECKPOINT_FILE, PLOT_FILE] {
        let p = dir.join(stale);
        if p.exists() {
            fs::remove_file(p)?;
        }
    }
    write_file(&dir.join(CONFIG_FILE), &(cfg.to_json() + "\n"))?;
    write_file(
        &dir.join(SEED_FILE),
        &format!("network {}\ntrain {}\n", cfg.network.seed, cfg.train.seed),
    )?;
    let mut metrics = OpenOptions::new().create(true).append(true).open(dir.join(METRICS_FILE))?;
    writeln!(metrics, "{}", metrics_header(spec))?;
    let mut plot = if opts.plot_export && reference.is_some() {
        let mut f = File::create(dir.join(PLOT_FILE))?;
        writeln!(f, "# wall_time_s rel_l2")?;
        Some(f)
    } else {
        None
    };
    let names = metric_outputs(spec);
    let mut sink = |row: &MetricsRow| -> Result<()> {
        writeln!(metrics, "{}", metrics_line(spec, row))?;
        metrics.flush()?;
        if let (Some(f), Some(e)) = (plot.as_mut(), row.eval.as_ref()) {
            writeln!(f, "{} {}", row.wall_time_s, e.overall_rel_l2)?;
        }
        let err = row
            .eval
            .as_ref()
            .map(|e| format!(" rel_l2[{}]={:.3e}", names.join(","), e.overall_rel_l2))
            .unwrap_or_default();
        writeln!(log, "iter {} t={:.1}s loss={:.4e}{err}", row.iter, row.wall_time_s, row.loss.total)?;
        Ok(())
    };
    let (params, rows) = train(spec, &cfg.network, &cfg.train, None, reference, &mut sink)?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &params, &cfg.network)?;
    let final_eval = rows.last().and_then(|r| r.eval.clone());
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        rows,
        final_eval,
    })
}

/// `train`: resolve the reference, then run.
pub fn cmd_train(cfg: &RunConfig, spec: &ProblemSpec, dir: &Path, opts: RunOptions, log: &mut dyn Write) -> Result<RunSummary> {
    prepare_dir(dir, opts.force)?;
    let reference = reference_grid(cfg, spec, log)?;
    if let (Some(grid), "generate") = (&reference, cfg.reference.source.as_str()) {
        save_field(&dir.join(REFERENCE_FILE), grid)?;
    }
    let opts = RunOptions { force: true, ..opts };
    train_run(cfg, spec, dir, reference.as_ref(), opts, log)
}

/// One run of an ablation.
#[derive(Clone, Debug)]
pub struct AblationRecord {
    pub arm: &'static str,
    pub seed: u64,
    pub summary: RunSummary,
}

pub const ABLATION_SEEDS: usize = 5;
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TABLE_FILE: &str = "summary.txt";

/// `ablate`: seeds `s₀..s₀+5`, each trained with the correction on
/// (`scale`) and off (`baseline`), everything else identical.
pub fn cmd_ablate(
    cfg: &RunConfig,
    spec: &ProblemSpec,
    dir: &Path,
    opts: RunOptions,
    parallel: bool,
    log: &mut dyn Write,
) -> Result<Vec<AblationRecord>> {
    prepare_dir(dir, opts.force)?;
    let reference = reference_grid(cfg, spec, log)?;
    if let (Some(grid), "generate") = (&reference, cfg.reference.source.as_str()) {
        save_field(&dir.join(REFERENCE_FILE), grid)?;
    }
    let base = cfg.train.seed;
    let mut jobs = Vec::new();
    for i in 0..ABLATION_SEEDS as u64 {
        for (arm, enabled) in [("scale", true), ("baseline", false)] {
            let mut c = cfg.clone();
            c.set_seed(base + i);
            c.train.correction.enabled = enabled;
            c.output_dir = dir.join(format!("{arm}_seed{}", base + i)).display().to_string();
            jobs.push((arm, base + i, c));
        }
    }
    let run_opts = RunOptions { force: true, ..opts };
    let run = |(arm, seed, c): &(&'static str, u64, RunConfig), log: &mut dyn Write| -> Result<AblationRecord> {
        writeln!(log, "== {arm} seed {seed}")?;
        let summary = train_run(c, spec, Path::new(&c.output_dir), reference.as_ref(), run_opts, log)?;
        Ok(AblationRecord { arm, seed: *seed, summary })
    };
    let records: Vec<AblationRecord> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|job| s.spawn(|| run(job, &mut std::io::sink())))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().map_err(|_| Error::internal("ablation worker panicked"))?)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        jobs.iter().map(|job| run(job, log)).collect::<Result<Vec<_>>>()?
    };
    write_file(&dir.join(SUMMARY_FILE), &summary_csv(&records))?;
    let table = summary_table(&records);
    write_file(&dir.join(TABLE_FILE), &table)?;
    write!(log, "{table}")?;
    Ok(records)
}

pub fn summary_csv(records: &[AblationRecord]) -> String {
    let mut out = String::from("arm,seed,final_iter,final_rel_l2,wall_time_s\n");
    for r in records {
        let iter = r.summary.rows.last().map_or(0, |x| x.iter);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.arm,
            r.seed,
            iter,
            r.summary.final_error(),
            r.summary.wall_time()
        ));
    }
    out
}

/// Best and average final relative L2 and mean wall time per arm, plus
/// the number of seed pairs the scale arm wins.
pub fn summary_table(records: &[AblationRecord]) -> String {
    let mut out = format!("{:<10} {:>12} {:>12} {:>12}\n", "arm", "best_rel_l2", "mean_rel_l2", "mean_time_s");
    for arm in ["scale", "baseline"] {
        let errs: Vec<f64> = records.iter().filter(|r| r.arm == arm).map(|r| r.summary.final_error()).collect();
        let times: Vec<f64> = records.iter().filter(|r| r.arm == arm).map(|r| r.summary.wall_time()).collect();
        let n = errs.len().max(1) as f64;
        let best = errs.iter().copied().fold(f64::INFINITY, f64::min);
        out.push_str(&format!(
            "{arm:<10} {best:>12.4e} {:>12.4e} {:>12.1}\n",
            errs.iter().sum::<f64>() / n,
            times.iter().sum::<f64>() / n
        ));
    }
    out.push_str(&format!("scale wins {} of {} seed pairs\n", scale_wins(records), records.len() / 2));
    out
}

/// Seed pairs where the scale arm ends strictly below the baseline.
pub fn scale_wins(records: &[AblationRecord]) -> usize {
    records
        .iter()
        .filter(|r| r.arm == "scale")
        .filter(|s| {
            records
                .iter()
                .find(|b| b.arm == "baseline" && b.seed == s.seed)
                .is_some_and(|b| s.summary.final_error() < b.summary.final_error())
        })
        .count()
}

/// `reference`: writes the grid for the configured problem to `out`.
pub fn cmd_reference(cfg: &RunConfig, spec: &ProblemSpec, out: &Path, force: bool, log: &mut dyn Write) -> Result<FieldGrid> {
    if out.exists() && !force {
        return Err(Error::config(
            "--out",
            format!("{} exists (pass --force to overwrite)", out.display()),
        ));
    }
    let grid = generate_reference(cfg, spec, log)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_field(out, &grid)?;
    let shape: Vec<String> = grid.axes.iter().map(|a| format!("{}={}", a.name, a.n)).collect();
    writeln!(log, "wrote {} ({})", out.display(), shape.join(" "))?;
    Ok(grid)
}

pub const EVAL_FILE: &str = "eval.csv";
pub const PREDICTION_FILE: &str = "prediction.grid";

pub fn eval_header(spec: &ProblemSpec) -> String {
    let outs = metric_outputs(spec);
    let mut cols: Vec<String> = outs.iter().map(|o| format!("rel_l2_{o}")).collect();
    cols.extend(outs.iter().map(|o| format!("mse_{o}")));
    if spec.kind == ProblemKind::Cavity {
        cols.push("div_mse".into());
    }
    cols.push("rel_l2_all".into());
    cols.join(",")
}

pub fn eval_line(m: &EvalMetrics) -> String {
    let mut cols: Vec<String> = m.rel_l2.iter().map(f64::to_string).collect();
    cols.extend(m.mse.iter().map(f64::to_string));
    if let Some(d) = m.div_mse {
        cols.push(d.to_string());
    }
    cols.push(m.overall_rel_l2.to_string());
    cols.join(",")
}

/// Network outputs on the nodes of `grid`, as a grid of the same shape.
pub fn predict_on(params: &ParameterSet, cfg: &RunConfig, spec: &ProblemSpec, grid: &FieldGrid) -> Result<FieldGrid> {
    let values = forward_values(params, &cfg.network, &grid.points(), &spec.input_map())?;
    FieldGrid::new(&spec.name, grid.axes.clone(), values)
}

/// `eval`: loads a checkpoint (refusing one written for a different
/// network), evaluates it on `reference`, prints the metrics row and, with
/// `out`, writes it and optionally the predicted fields.
#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    cfg: &RunConfig,
    spec: &ProblemSpec,
    checkpoint: &Path,
    reference: &FieldGrid,
    out: Option<&Path>,
    export: bool,
    force: bool,
    log: &mut dyn Write,
) -> Result<EvalMetrics> {
    let params = load_checkpoint(checkpoint, &cfg.network)?;
    let metrics = evaluate(&params, &cfg.network, spec, reference)?;
    let (header, line) = (eval_header(spec), eval_line(&metrics));
    writeln!(log, "{header}\n{line}")?;
    if let Some(dir) = out {
        prepare_dir(dir, force)?;
        write_file(&dir.join(EVAL_FILE), &format!("{header}\n{line}\n"))?;
        if export {
            save_field(&dir.join(PREDICTION_FILE), &predict_on(&params, cfg, spec, reference)?)?;
        }
    } else if export {
        return Err(Error::config("--out", "exporting a prediction needs an output directory"));
    }
    Ok(metrics)
}
