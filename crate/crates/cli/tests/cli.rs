use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;

use scalepinn_cli::config::{apply_set, config_source, decode, resolve, PRESETS};

const TINY: [&str; 12] = [
    "--set",
    "train.iterations=20",
    "--set",
    "train.batch_size=16",
    "--set",
    "train.eval_every=10",
    "--set",
    "network.layer_widths=[8,8]",
    "--set",
    "reference.n_modes=32",
    "--set",
    "reference.ladder_dt=null",
];

fn scalepinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scalepinn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny(sub: &str, config: &str, out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec![sub, "--config", config, "--out", out];
    args.extend(TINY);
    args.extend(["--set", "reference.dt=0.01", "--set", "reference.n_snapshots=5"]);
    args.extend(extra);
    scalepinn(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// metrics.csv without the wall-clock column.
fn metrics_without_time(dir: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let t = header.iter().position(|c| *c == "wall_time_s").unwrap();
    text.lines()
        .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != t).map(|(_, c)| c).collect::<Vec<_>>().join(","))
        .collect()
}

#[test]
fn repeated_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = tiny("train", "kdv", d, &["--seed", "3"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ma = metrics_without_time(&a);
    assert_eq!(ma.len(), 3);
    assert_eq!(ma, metrics_without_time(&b));
    let ck = |d: &Path| std::fs::read(d.join("checkpoint.bin")).unwrap();
    assert_eq!(ck(&a), ck(&b));
    assert_eq!(std::fs::read_to_string(a.join("seed")).unwrap(), "network 3\ntrain 3\n");
    for f in ["config.json", "reference.grid"] {
        assert!(a.join(f).is_file(), "{f}");
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(tiny("train", "kdv", &a, &["--seed", "1"]).status.success());
    assert!(tiny("train", "kdv", &b, &["--seed", "2"]).status.success());
    assert_ne!(metrics_without_time(&a), metrics_without_time(&b));
}

#[test]
fn configuration_errors_exit_with_two_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tiny("train", "kdv", &tmp.path().join("x"), &["--set", "problem.name=burgers"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("problem.name"), "{}", stderr(&o));

    let o = tiny("train", "kdv", &tmp.path().join("x"), &["--set", "train.iteratons=5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.iteratons"), "{}", stderr(&o));

    let o = tiny("train", "kdv", &tmp.path().join("x"), &["--set", "train.iterations=0"]);
    assert_eq!(o.status.code(), Some(2));

    let o = tiny("train", "no_such_preset", &tmp.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("run");
    assert!(tiny("train", "kdv", &d, &[]).status.success());
    let o = tiny("train", "kdv", &d, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(tiny("train", "kdv", &d, &["--force"]).status.success());
}

#[test]
fn overrides_reach_the_saved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("run");
    let o = tiny("train", "kdv", &d, &["--set", "train.learning_rate=0.005", "--set", "problem.nu=0.001"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved["train"]["learning_rate"], 0.005);
    assert_eq!(saved["train"]["iterations"], 20);
    assert_eq!(saved["problem"]["nu"], 0.001);
}

#[test]
fn plot_export_writes_time_and_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("run");
    assert!(tiny("train", "kdv", &d, &["--plot-export"]).status.success());
    let text = std::fs::read_to_string(d.join("error_vs_time.dat")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# wall_time_s rel_l2"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.len() == 2 && r[0] >= 0.0 && r[1] > 0.0));
}

#[test]
fn failed_convergence_gate_exits_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("kdv.grid");
    let o = scalepinn(&["reference", "--problem", "kdv", "--out", out.to_str().unwrap(), "--set", "reference.ladder_dt=0.008"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("order"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn reference_command_writes_a_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("kdv.grid");
    let o = scalepinn(&["reference", "--problem", "kdv", "--out", out.to_str().unwrap(), "--set", "reference.n_snapshots=11"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let g = scalepinn::reference::load_field(&out).unwrap();
    assert_eq!(g.problem, "kdv");
    assert_eq!(g.shape(), vec![256, 11]);
    let o = scalepinn(&["reference", "--problem", "kdv", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluating_against_its_own_prediction_gives_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert!(tiny("train", "kdv", &run, &["--seed", "5"]).status.success());
    let ck = run.join("checkpoint.bin");
    let ck = ck.to_str().unwrap();
    let reference = run.join("reference.grid");
    let ev = tmp.path().join("eval");
    let o = tiny(
        "eval",
        "kdv",
        &ev,
        &["--seed", "5", "--checkpoint", ck, "--reference", reference.to_str().unwrap(), "--export-prediction"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let pred = ev.join("prediction.grid");
    let ev2 = tmp.path().join("eval2");
    let o = tiny("eval", "kdv", &ev2, &["--seed", "5", "--checkpoint", ck, "--reference", pred.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(ev2.join("eval.csv")).unwrap();
    let values: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(values.iter().all(|&v| v == 0.0), "{text}");

    let o = tiny("eval", "kdv", &tmp.path().join("eval3"), &["--seed", "8", "--checkpoint", ck]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn ablation_trains_five_seed_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("ablate");
    let o = tiny("ablate", "kdv", &d, &["--set", "train.iterations=10", "--parallel"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.join("summary.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows.iter().filter(|r| r.starts_with("scale,")).count(), 5);
    assert_eq!(rows.iter().filter(|r| r.starts_with("baseline,")).count(), 5);
    let table = std::fs::read_to_string(d.join("summary.txt")).unwrap();
    assert!(table.contains("scale wins"), "{table}");
    for s in 0..5 {
        for arm in ["scale", "baseline"] {
            assert!(d.join(format!("{arm}_seed{s}")).join("metrics.csv").is_file());
        }
    }
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("baseline_seed0/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["train"]["correction"]["enabled"], false);
}

#[test]
fn every_preset_is_valid() {
    for (name, _) in PRESETS {
        let (cfg, spec) = resolve(name, &[], None).unwrap();
        assert_eq!(cfg.problem.name, spec.name, "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn configs_survive_a_json_round_trip(
        p in 0usize..PRESETS.len(),
        iters in 1usize..1_000_000,
        lr in 1e-6f64..1e-1,
        tau in 1e-3f64..10.0,
        seed in any::<u64>(),
        enabled in any::<bool>(),
    ) {
        let mut doc = config_source(PRESETS[p].0).unwrap();
        for s in [
            format!("train.iterations={iters}"),
            format!("train.learning_rate={lr:e}"),
            format!("train.correction.tau_sc={tau:e}"),
            format!("train.correction.enabled={enabled}"),
        ] {
            apply_set(&mut doc, &s).unwrap();
        }
        let mut cfg = decode(doc).unwrap();
        cfg.set_seed(seed);
        let again = decode(serde_json::from_str(&cfg.to_json()).unwrap()).unwrap();
        prop_assert_eq!(again, cfg);
    }
}
