use std::path::Path;
use std::process::{Command, Output};

fn ttr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn ttr")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ttr(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn generated() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--out-dir", "data", "generate"]);
    dir
}

#[test]
fn generate_train_ttt_eval_chain() {
    let dir = generated();
    let p = dir.path();
    for split in ["train", "id_test", "connectivity", "heldout", "force_norm", "unseen_element"] {
        assert!(p.join(format!("data/{split}.extxyz")).exists(), "{split}");
    }
    ok(p, &["--out-dir", "model", "train", "data/train.extxyz", "--epochs", "2"]);
    assert!(p.join("model/model.json").exists());
    assert!(p.join("model/profile.txt").exists());
    let log = std::fs::read_to_string(p.join("model/loss_log.csv")).unwrap();
    assert!(log.starts_with("step,epoch,loss_main,loss_prior,force_mae"));

    ok(p, &["--out-dir", "adapted", "ttt", "model/model.json", "data/heldout.extxyz", "--steps", "5"]);
    let metrics = std::fs::read_to_string(p.join("adapted/ttt_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 61);
    let losses = std::fs::read_to_string(p.join("adapted/ttt_loss.csv")).unwrap();
    assert_eq!(losses.lines().next(), Some("step,prior_loss"));

    let eval = ok(p, &["eval", "adapted/adapted.json", "data/id_test.extxyz"]);
    let mut lines = eval.lines();
    assert_eq!(lines.next(), Some("structure_id,atom,energy,fx,fy,fz"));
    assert!(lines.all(|l| l.split(',').count() == 6));
}

#[test]
fn spectra_rows_cover_every_atom() {
    let dir = generated();
    let out = ok(dir.path(), &["spectra", "data/id_test.extxyz"]);
    let mut expected = std::collections::BTreeMap::new();
    for r in out.lines().skip(1) {
        let f: Vec<&str> = r.split(',').collect();
        let next = expected.entry(f[0].to_string()).or_insert(0usize);
        assert_eq!(f[1].parse::<usize>().unwrap(), *next);
        *next += 1;
        let v: f64 = f[2].parse().unwrap();
        assert!((-1e-8..=2.0 + 1e-8).contains(&v));
    }
    assert_eq!(expected.len(), 36);
}

#[test]
fn rr_marks_one_choice_per_structure() {
    let dir = generated();
    let out = ok(dir.path(), &["rr", "data/profile.txt", "data/connectivity.extxyz", "--candidates", "2.0,2.5,3.0"]);
    let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 60 * 3);
    for chunk in rows.chunks(3) {
        assert_eq!(chunk.iter().filter(|r| r[3] == "true").count(), 1);
    }
}

#[test]
fn diagnose_flags_the_unseen_element() {
    let dir = generated();
    let out = ok(dir.path(), &["diagnose", "data/profile.txt", "data/unseen_element.extxyz"]);
    let header: Vec<&str> = out.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "unseen_element").unwrap();
    assert!(out.lines().skip(1).all(|l| l.split(',').nth(col) == Some("true")));
}

#[test]
fn theorem_demo_ends_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["theorem-demo", "--trials", "40"]);
    let last = out.lines().last().unwrap();
    assert!(last.starts_with("trials=40 "), "{last}");
    assert_eq!(out.lines().count(), 40 + 2);
}

#[test]
fn simulate_writes_a_trajectory() {
    let dir = generated();
    let p = dir.path();
    std::fs::write(p.join("short.toml"), "seed = 3\n").unwrap();
    let out = ok(p, &["--config", "short.toml", "--out-dir", "md", "simulate", "data/connectivity.extxyz", "--preset", "desk"]);
    assert!(out.starts_with("label,frames,stability_ps,aborted_at_fs\nreference,"));
    assert!(p.join("md/trajectory.extxyz").exists());
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let missing = ttr(p, &["spectra", "missing.extxyz"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.extxyz"));

    assert!(!ttr(p, &["experiment", "no-such-pipeline"]).status.success());

    std::fs::write(p.join("bad.toml"), "version = 1\nbogus = 2\n").unwrap();
    assert!(!ttr(p, &["--config", "bad.toml", "theorem-demo", "--trials", "1"]).status.success());

    std::fs::write(p.join("bad.extxyz"), "3\ncomment\nC 0 0 0\n").unwrap();
    let parse = ttr(p, &["spectra", "bad.extxyz"]);
    assert!(!parse.status.success());
}

#[test]
fn experiment_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("tiny.toml"),
        "pipeline = \"rr-sweep\"\nseed = 1\n[train]\nepochs = 1\n[rr]\nsplits = [\"connectivity\"]\n",
    )
    .unwrap();
    ok(p, &["--config", "tiny.toml", "--out-dir", "exp", "experiment"]);
    for f in ["config.toml", "summary.json", "rr_choices.csv", "rr_distances.csv"] {
        assert!(p.join("exp").join(f).exists(), "{f}");
    }
}
