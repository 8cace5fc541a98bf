use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ttr_core::benchmark::{generate_benchmark, BenchmarkConfig};
use ttr_core::config::{ExperimentConfig, Pipeline};
use ttr_core::experiments::run_experiment;
use ttr_core::io::*;
use ttr_core::potentials::mean_force_norm;
use ttr_core::species::Species;
use ttr_core::structure::{LabelSource, LabeledStructure, Labels, Structure};
use ttr_core::Error;

fn sp(s: &str) -> Species {
    s.parse().unwrap()
}

fn random_record(rng: &mut ChaCha8Rng, k: usize) -> LabeledStructure<f64> {
    let n = rng.random_range(1..=8);
    let names = ["C", "N", "O", "H"];
    let species = (0..n).map(|_| sp(names[rng.random_range(0..4)])).collect();
    let mut v = || [0, 1, 2].map(|_| rng.random_range(-10.0..10.0) * 1.000_000_1f64.powi(rng.random_range(0..50)));
    let positions: Vec<_> = (0..n).map(|_| v()).collect();
    let forces: Vec<_> = (0..n).map(|_| v()).collect();
    let s = Structure::new(species, positions, format!("s{k}"), format!("sys {}", k % 7)).unwrap();
    let source = if k % 2 == 0 { LabelSource::Reference } else { LabelSource::Prior };
    LabeledStructure::new(s, Labels { energy: -3.25 + k as f64 / 3.0, forces }, source).unwrap()
}

#[test]
fn three_atom_record_round_trips() {
    let s = Structure::new(vec![sp("C"), sp("O"), sp("H")], vec![[0.1, 0.2, 0.3], [1.1, -0.7, 1e-9], [2.0 / 3.0, 5.0, 1e5]], "a", "b")
        .unwrap();
    let r = LabeledStructure::new(s, Labels { energy: -1.0 / 7.0, forces: vec![[1.0, 2.0, 3.0], [0.1; 3], [-4.4, 0.0, 1e-12]] }, LabelSource::Prior)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.extxyz");
    write_extxyz(std::slice::from_ref(&r), &path).unwrap();
    let back = parse_extxyz(&path).unwrap();
    assert_eq!(back.len(), 1);
    let b = &back[0];
    assert_eq!((&b.structure.species, &b.structure.structure_id, b.label_source), (&r.structure.species, &r.structure.structure_id, r.label_source));
    assert!((b.energy - r.energy).abs() < 1e-12);
    for (x, y) in b.structure.positions.iter().chain(&b.forces).zip(r.structure.positions.iter().chain(&r.forces)) {
        for k in 0..3 {
            assert!((x[k] - y[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn mismatched_atom_count_names_the_line() {
    let good = format_extxyz(&[random_record(&mut ChaCha8Rng::seed_from_u64(1), 0)]);
    let bad = format!("{good}4\nenergy=0 label_source=reference Properties=species:S:1:pos:R:3\nC 0 0 0\nC 1 0 0\n");
    let first_frame_lines = good.lines().count();
    match parse_extxyz_str(&bad, Path::new("bad.extxyz")) {
        Err(Error::Parse { line, .. }) => assert!(line > first_frame_lines, "line {line}"),
        other => panic!("expected a parse error, got {other:?}"),
    }
    let err = parse_extxyz_str("2\nx\nC 0 0 zero\nC 1 0 0\n", Path::new("f.extxyz")).unwrap_err();
    assert!(err.to_string().contains('3'), "{err}");
}

#[test]
fn thousand_structure_corpus_round_trips_stably() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let records: Vec<_> = (0..1000).map(|k| random_record(&mut rng, k)).collect();
    let text = format_extxyz(&records);
    let frames = parse_extxyz_str(&text, Path::new("corpus")).unwrap();
    let back: Vec<LabeledStructure<f64>> = frames
        .into_iter()
        .map(|f| LabeledStructure::new(f.structure, f.labels.unwrap(), f.label_source.unwrap()).unwrap())
        .collect();
    assert_eq!(back, records);
    let checksum = |t: &str| {
        let mut h = DefaultHasher::new();
        t.hash(&mut h);
        h.finish()
    };
    assert_eq!(checksum(&format_extxyz(&back)), checksum(&text));
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let mut cfg = ExperimentConfig::for_pipeline(Pipeline::RrSweep);
    cfg.apply_seed(42);
    cfg.rr.candidates = Some(vec![2.0, 2.5, 3.0]);
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    assert!(ExperimentConfig::from_toml_str("[train]\nepochs = 2\nlearning_rat = 0.1\n").is_err());
    assert!(ExperimentConfig::from_toml_str("pipeline = \"nope\"\n").is_err());
    assert!(ExperimentConfig::from_toml_str("version = 999\n").is_err());
}

#[test]
fn benchmark_is_deterministic_and_shifted_by_construction() {
    let cfg = BenchmarkConfig::default();
    let a = generate_benchmark(&cfg).unwrap();
    let b = generate_benchmark(&cfg).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.profile, b.profile);
    for name in a.split_names() {
        assert_eq!(a.split(&name), b.split(&name));
    }

    let p = &a.profile;
    let forces = a.split("force_norm").unwrap();
    let norms: Vec<f64> = forces.iter().flat_map(|s| s.reference.as_ref().unwrap().force_norms().collect::<Vec<_>>()).collect();
    let mean_norm = norms.iter().sum::<f64>() / norms.len() as f64;
    assert!(mean_norm > p.force_norm_mean + p.force_norm_std, "{mean_norm} vs {} + {}", p.force_norm_mean, p.force_norm_std);
    let prior_mean = forces.iter().map(|s| mean_force_norm(&cfg.potentials.prior, &s.structure).unwrap()).sum::<f64>()
        / forces.len() as f64;
    assert!(prior_mean > p.force_norm_mean);

    let ring = a.split("connectivity").unwrap();
    let dist = ring.iter().map(|s| p.structure_distance(&s.structure, p.train_cutoff).unwrap()).sum::<f64>() / ring.len() as f64;
    assert!(dist > p.spectral_distance_mean + p.spectral_distance_std, "{dist}");
}

fn small(pipeline: Pipeline) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_pipeline(pipeline);
    cfg.apply_seed(3);
    cfg.train.epochs = 2;
    cfg.ttt.steps = 10;
    cfg.finetune.train.epochs = 2;
    cfg
}

fn csv_files(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn repeated_runs_write_identical_tables() {
    let cfg = small(Pipeline::ShiftBenchmark);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    let files = csv_files(a.path());
    assert!(files.len() >= 4);
    assert_eq!(files, csv_files(b.path()));
    for (name, text) in &files {
        assert!(text.lines().next().is_some_and(|h| h.contains(',')), "{name} has no header");
    }
}

#[test]
fn untrained_pipeline_reports_the_baseline() {
    let mut cfg = small(Pipeline::ShiftBenchmark);
    cfg.train.epochs = 0;
    cfg.ttt.steps = 0;
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&cfg, dir.path()).unwrap();
    for split in ["id_test", "connectivity", "heldout", "force_norm", "unseen_element"] {
        assert_eq!(report.metrics[&format!("{split}.ttt_mae")], report.metrics[&format!("{split}.baseline_mae")]);
    }
    let log = std::fs::read_to_string(dir.path().join("loss_log.csv")).unwrap();
    assert!(log.lines().count() <= 1);
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn ttt_versus_finetune_curve_has_both_methods_per_fraction() {
    let mut cfg = small(Pipeline::TttVsFinetune);
    cfg.finetune.fractions = vec![0.05, 0.5, 1.0];
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, dir.path()).unwrap();
    let (_, curve) = csv_files(dir.path()).into_iter().find(|(n, _)| n.contains("finetune")).expect("fine-tune csv");
    let rows: Vec<&str> = curve.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for f in [0.05, 0.5, 1.0] {
        let hits = rows.iter().filter(|r| r.split(',').nth(1).and_then(|x| x.parse::<f64>().ok()) == Some(f));
        assert_eq!(hits.count(), 2, "{curve}");
    }
}

#[test]
fn partial_sections_keep_experiment_defaults() {
    let defaults = ExperimentConfig::default();
    let cfg = ExperimentConfig::from_toml_str("[ttt]\nsteps = 5\n[md.sim]\ntotal_time_ps = 2.0\n").unwrap();
    assert_eq!(cfg.ttt.steps, 5);
    assert_eq!(cfg.ttt.learning_rate, defaults.ttt.learning_rate);
    assert_eq!(cfg.md.sim.total_time_ps, 2.0);
    assert_eq!(cfg.md.sim.temperature_k, defaults.md.sim.temperature_k);
    assert_eq!(cfg.train, defaults.train);
}
