use std::path::Path;
use std::process::Command;

use hopgate::report::{read_json, RunReport};
use serde_json::Value;

fn hopgate(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hopgate")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hopgate(args);
    assert!(
        out.status.success(),
        "hopgate {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Drops every field whose name starts with `wall_ns`.
fn strip_wall(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.retain(|k, _| !k.starts_with("wall_ns"));
            m.values_mut().for_each(strip_wall);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_wall),
        _ => {}
    }
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("model.json");
    let d = p(&data);
    let c = p(&ckpt);
    let common = ["--data", d, "--tasks", "1,6", "--seed", "4"];
    let with = |cmd: &str, extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = vec![cmd.into()];
        v.extend(common.iter().map(|s| s.to_string()));
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let run = |args: Vec<String>| ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

    ok(&["generate-data", "--out", d, "--tasks", "1,6", "--seed", "4", "--questions", "60"]);
    let log = dir.path().join("train.jsonl");
    run(with("train", &["--out", c, "--epochs", "4", "--log", p(&log)]));
    let lines = std::fs::read_to_string(&log).unwrap();
    assert_eq!(lines.lines().count(), 8);
    for l in lines.lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        for k in ["epoch", "split", "loss", "accuracy"] {
            assert!(v.get(k).is_some());
        }
    }

    // Gated evaluation before an ICN exists is a configuration error.
    let prefix = dir.path().join("early");
    let out = hopgate(&with("eval", &["--checkpoint", c, "--scenario", "global", "--out", p(&prefix)])
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));

    run(with("fce", &["--checkpoint", c, "--epochs", "2"]));
    let labels = dir.path().join("labels.json");
    run(with("label", &["--checkpoint", c, "--out", p(&labels)]));
    let lv: Value = read_json(&labels).unwrap();
    assert_eq!(lv["labels"].as_array().unwrap().len(), 108);
    run(with("icn", &["--checkpoint", c, "--epochs", "3", "--l1", "8"]));
    let pruned = dir.path().join("pruned.json");
    run(with("prune", &["--checkpoint", c, "--out", p(&pruned)]));
    let gate = dir.path().join("gate.json");
    run(with("calibrate", &["--checkpoint", p(&pruned), "--out", p(&gate), "--scenario", "global"]));

    let hard = dir.path().join("hard");
    run(with("eval", &["--checkpoint", p(&pruned), "--scenario", "nc", "--force-route", "hard", "--out", p(&hard)]));
    let r: RunReport = read_json(&hard.with_extension("json")).unwrap();
    for t in r.rows() {
        assert_eq!(t.accuracy_baseline, t.accuracy_adaptive);
        assert_eq!(t.zeta_e, 0.0);
    }

    let global = dir.path().join("global");
    let stdout = run(with(
        "eval",
        &["--checkpoint", p(&pruned), "--gate", p(&gate), "--pruned", "--theta-zs", "0.01", "--out", p(&global)],
    ));
    let csv = std::fs::read_to_string(global.with_extension("csv")).unwrap();
    assert_eq!(stdout, csv);
    let r: RunReport = read_json(&global.with_extension("json")).unwrap();
    assert_eq!(r.tasks.len(), 2);
    assert_eq!(r.pooled.queries, 120);
    for t in r.rows() {
        for x in [t.accuracy_baseline, t.accuracy_adaptive, t.zeta_e, t.fp, t.fn_, t.p_r, t.psi_e, t.psi_h] {
            assert!((0.0..=1.0).contains(&x));
        }
        assert!(t.flops_baseline_mean >= 0.0 && t.flops_adaptive_mean >= 0.0);
        assert!((t.cr_measured - (t.flops_baseline_mean - t.flops_adaptive_mean)).abs() < 1e-6);
    }

    let bench_args = |out: &Path| {
        with(
            "bench",
            &["--checkpoint", p(&pruned), "--gate", p(&gate), "--repeat", "3", "--limit", "10", "--out", p(out)],
        )
    };
    let b1 = dir.path().join("b1.json");
    let b2 = dir.path().join("b2.json");
    run(bench_args(&b1));
    run(bench_args(&b2));
    let mut v1: Value = read_json(&b1).unwrap();
    let mut v2: Value = read_json(&b2).unwrap();
    assert_eq!(v1["repeat"], 3);
    strip_wall(&mut v1);
    strip_wall(&mut v2);
    assert_eq!(v1, v2);

    let g2 = dir.path().join("global2");
    run(with(
        "eval",
        &["--checkpoint", p(&pruned), "--gate", p(&gate), "--pruned", "--theta-zs", "0.01", "--out", p(&g2)],
    ));
    let mut e1: Value = read_json(&global.with_extension("json")).unwrap();
    let mut e2: Value = read_json(&g2.with_extension("json")).unwrap();
    strip_wall(&mut e1);
    strip_wall(&mut e2);
    assert_eq!(e1, e2);

    let table = dir.path().join("table.csv");
    ok(&["report", p(&hard.with_extension("json")), p(&global.with_extension("json")), "--out", p(&table)]);
    let t = std::fs::read_to_string(&table).unwrap();
    assert_eq!(t.lines().count(), 1 + 3 + 3);
    assert!(t.starts_with("task,mode,scenario,"));
}

#[test]
fn key_value_data_round_trips_through_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("kv.json");
    let ckpt = dir.path().join("kv_model.json");
    ok(&["synth-kv", "--out", p(&data), "--pairs", "60", "--vocab", "80", "--n-w", "3", "--seed", "2"]);
    ok(&["train", "--data", p(&data), "--out", p(&ckpt), "--d", "8", "--epochs", "2", "--seed", "2"]);
    let v: Value = read_json(&ckpt).unwrap();
    assert_eq!(v["hyper"]["variant"], "key_value");
    assert!(v["tensors"]["R2"].is_object());
    let out = hopgate(&["train", "--data", p(&data), "--out", p(&ckpt), "--variant", "conventional"]);
    assert!(!out.status.success());
}

#[test]
fn bad_arguments_fail_cleanly() {
    assert!(!hopgate(&["eval"]).status.success());
    assert!(!hopgate(&["train", "--data", "/nonexistent/dir", "--out", "/tmp/x.json"]).status.success());
    let out = hopgate(&["--help"]);
    let help = String::from_utf8_lossy(&out.stdout);
    for cmd in ["train", "fce", "label", "icn", "calibrate", "prune", "eval", "bench", "report"] {
        assert!(help.contains(cmd), "{cmd}");
    }
}
