//! End-to-end pipelines on the synthetic benchmark: train, diagnose,
//! mitigate with test-time training and radius refinement, fine-tune and
//! simulate. Each pipeline writes CSV tables and a `summary.json` into its
//! output directory as stages finish.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::info;
use serde::Serialize;

use crate::benchmark::{generate_benchmark, group_by_system, Benchmark};
use crate::config::{ExperimentConfig, Pipeline};
use crate::diagnostics::{error_vs_shift_table, AxisComparison, ShiftAxis, ShiftTable};
use crate::error::{Error, Result};
use crate::io::{table_string, write_csv, write_trajectory, OutputSet};
use crate::md::{h_of_r, h_of_r_mae, reference_bonds, run_nvt, stability_time, Histogram, Trajectory};
use crate::metrics::structure_error;
use crate::model::{Head, ModelForceField, ModelParams};
use crate::potentials::ForceProvider;
use crate::rr::{apply_refined_cutoff, default_candidates, refine_radius, refine_radius_system, RadiusChoice};
use crate::species::Species;
use crate::structure::{Sample, Structure};
use crate::training::{calibrate_readout_bias, fine_tune, train, write_loss_log, LossRecord, Task};
use crate::ttt::{ttt_adapt, TttOutcome};

trait Stage<T> {
    fn stage(self, name: &str) -> Result<T>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, name: &str) -> Result<T> {
        self.map_err(|e| e.in_stage(name))
    }
}

fn fmt(x: f64) -> String {
    x.to_string()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() { f64::NAN } else { xs.iter().sum::<f64>() / xs.len() as f64 }
}

/// Benchmark plus a jointly trained baseline model.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub benchmark: Benchmark,
    pub params: ModelParams<f64>,
    pub history: Vec<LossRecord>,
}

/// Every species used by any benchmark template, sorted.
pub fn benchmark_species(cfg: &ExperimentConfig) -> Result<Vec<Species>> {
    let mut all = BTreeSet::new();
    for t in &cfg.benchmark.templates {
        all.extend(t.parsed_species()?);
    }
    Ok(all.into_iter().collect())
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let benchmark = generate_benchmark(&cfg.benchmark).stage("generate")?;
    let arch = cfg.model.arch(benchmark_species(cfg)?, cfg.benchmark.train_cutoff);
    let outcome = (|| {
        let mut params = ModelParams::init(&arch)?;
        calibrate_readout_bias(&mut params, &benchmark.train, Head::Main)?;
        calibrate_readout_bias(&mut params, &benchmark.train, Head::Prior)?;
        train(&params, &benchmark.train, Task::Joint, &cfg.train)
    })()
    .stage("train")?;
    info!("trained baseline for {} steps", outcome.history.len());
    Ok(Prepared { benchmark, params: outcome.params, history: outcome.history })
}

/// Per-structure main-head force MAE of `provider` against reference labels.
pub fn per_structure_mae<P: ForceProvider<f64>>(provider: &P, samples: &[Sample<f64>]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let labels = s.reference.as_ref().ok_or_else(|| {
                Error::input(format!("structure `{}` has no reference labels", s.structure.structure_id))
            })?;
            Ok(structure_error(provider, &s.structure, labels)?.force_mae)
        })
        .collect()
}

/// Test-time training run separately on each system of a split.
pub fn ttt_by_system(
    params: &ModelParams<f64>,
    samples: &[Sample<f64>],
    cfg: &ExperimentConfig,
) -> Result<Vec<(String, Vec<Sample<f64>>, TttOutcome)>> {
    group_by_system(samples)
        .into_iter()
        .map(|(system, group)| {
            let structures: Vec<Structure<f64>> = group.iter().map(|s| s.structure.clone()).collect();
            let out = ttt_adapt(params, &structures, &cfg.benchmark.potentials.prior, &cfg.ttt)?;
            info!("TTT on `{system}`: prior loss {:.4} -> {:.4} ({:?})", out.history[0], out.history[out.best_step], out.stop);
            Ok((system, group, out))
        })
        .collect()
}

/// Per-structure MAE after TTT, in the split's original order.
fn ttt_maes(params: &ModelParams<f64>, samples: &[Sample<f64>], cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let mut by_id = BTreeMap::new();
    for (_, group, out) in ttt_by_system(params, samples, cfg)? {
        let field = ModelForceField::new(&out.params, Head::Main);
        for (s, m) in group.iter().zip(per_structure_mae(&field, &group)?) {
            by_id.insert(s.structure.structure_id.clone(), m);
        }
    }
    Ok(samples.iter().map(|s| by_id[&s.structure.structure_id]).collect())
}

fn candidates(cfg: &ExperimentConfig) -> Vec<f64> {
    cfg.rr.candidates.clone().unwrap_or_else(|| default_candidates(cfg.benchmark.train_cutoff))
}

/// Radius refinement of one structure: its own candidate distances, the
/// cutoff applied to it and the resulting MAE.
#[derive(Clone, Debug)]
pub struct RrEval {
    pub choice: RadiusChoice,
    pub cutoff: f64,
    pub mae: f64,
}

/// Refines the cutoff per system (or per configuration) and evaluates each
/// structure at its refined cutoff.
pub fn rr_evaluate(
    params: &ModelParams<f64>,
    samples: &[Sample<f64>],
    benchmark: &Benchmark,
    cands: &[f64],
    per_configuration: bool,
) -> Result<Vec<RrEval>> {
    let mut system_cutoff = BTreeMap::new();
    if !per_configuration {
        for (system, group) in group_by_system(samples) {
            let structures: Vec<Structure<f64>> = group.into_iter().map(|s| s.structure).collect();
            system_cutoff.insert(system, refine_radius_system(&structures, &benchmark.profile, cands)?.best_cutoff);
        }
    }
    samples
        .iter()
        .map(|s| {
            let choice = refine_radius(&s.structure, &benchmark.profile, cands)?;
            let cutoff = system_cutoff.get(&s.structure.system_id).copied().unwrap_or(choice.best_cutoff);
            let field = apply_refined_cutoff(params, cutoff)?;
            let mae = per_structure_mae(&field, std::slice::from_ref(s))?[0];
            Ok(RrEval { choice, cutoff, mae })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitResult {
    pub split: String,
    pub n_structures: usize,
    pub baseline_mae: f64,
    pub ttt_mae: f64,
    pub rr_mae: f64,
    pub mean_spectral_distance: f64,
    pub mean_prior_force_norm: f64,
}

#[derive(Clone, Debug)]
pub struct ShiftBenchmarkResult {
    pub splits: Vec<SplitResult>,
    pub table: ShiftTable,
    pub comparisons: Vec<(bool, AxisComparison)>,
}

impl ShiftBenchmarkResult {
    pub fn split(&self, name: &str) -> Option<&SplitResult> {
        self.splits.iter().find(|s| s.split == name)
    }
}

fn test_splits(b: &Benchmark) -> Vec<String> {
    b.split_names().into_iter().filter(|n| n != "train").collect()
}

pub fn run_shift_benchmark(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<ShiftBenchmarkResult> {
    let prep = prepare(cfg)?;
    let bench = &prep.benchmark;
    write_loss_log(&prep.history, &out.dir.join("loss_log.csv")).stage("write")?;
    out.files.insert("loss_log.csv".into(), out.dir.join("loss_log.csv"));
    let field = ModelForceField::new(&prep.params, Head::Main);
    let prior = &cfg.benchmark.potentials.prior;

    let mut all_test = Vec::new();
    let mut split_of = Vec::new();
    for name in test_splits(bench) {
        for s in bench.split(&name).unwrap_or_default() {
            all_test.push(s.clone());
            split_of.push(name.clone());
        }
    }
    let table = error_vs_shift_table(&field, &all_test, &bench.profile, prior, cfg.diagnostics.n_bins).stage("diagnose")?;
    let mut rows = Vec::new();
    for ((r, m), split) in table.reports.iter().zip(&table.maes).zip(&split_of) {
        let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
        rows.push(vec![
            split.clone(),
            r.structure_id.clone(),
            r.n_atoms.to_string(),
            r.unseen_element.to_string(),
            r.size_ood.to_string(),
            r.composition_ood.to_string(),
            r.force_norm_ood.map(|b| b.to_string()).unwrap_or_default(),
            r.connectivity_ood.to_string(),
            fmt(r.spectral_distance),
            opt(r.prior_force_norm),
            fmt(*m),
        ]);
    }
    let header = [
        "split",
        "structure_id",
        "n_atoms",
        "unseen_element",
        "size_ood",
        "composition_ood",
        "force_norm_ood",
        "connectivity_ood",
        "spectral_distance",
        "prior_force_norm",
        "force_mae",
    ];
    out.write("shift_reports.csv", &table_string(&header, &rows)?).stage("write")?;
    write_csv(&table.bins, &out.dir.join("error_vs_shift.csv")).stage("write")?;
    out.files.insert("error_vs_shift.csv".into(), out.dir.join("error_vs_shift.csv"));
    let mut comparisons = Vec::new();
    let mut comp_rows = Vec::new();
    for isolate in [false, true] {
        for axis in ShiftAxis::ALL {
            let c = table.compare(axis, isolate);
            let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
            comp_rows.push(vec![
                axis.name().to_string(),
                isolate.to_string(),
                c.id_count.to_string(),
                opt(c.id_mae),
                c.ood_count.to_string(),
                opt(c.ood_mae),
            ]);
            comparisons.push((isolate, c));
        }
    }
    let comp_header = ["axis", "isolated", "id_count", "id_mae", "ood_count", "ood_mae"];
    out.write("axis_comparison.csv", &table_string(&comp_header, &comp_rows)?).stage("write")?;

    let cands = candidates(cfg);
    let mut splits = Vec::new();
    let mut offset = 0;
    for name in test_splits(bench) {
        let samples = bench.split(&name).unwrap_or_default();
        let n = samples.len();
        let reports = &table.reports[offset..offset + n];
        let baseline = &table.maes[offset..offset + n];
        offset += n;
        let ttt = ttt_maes(&prep.params, samples, cfg).stage("ttt")?;
        let rr: Vec<f64> = rr_evaluate(&prep.params, samples, bench, &cands, cfg.rr.per_configuration)
            .stage("rr")?
            .into_iter()
            .map(|r| r.mae)
            .collect();
        let norms: Vec<f64> = reports.iter().filter_map(|r| r.prior_force_norm).collect();
        let dists: Vec<f64> = reports.iter().map(|r| r.spectral_distance).collect();
        let r = SplitResult {
            split: name.clone(),
            n_structures: n,
            baseline_mae: mean(baseline),
            ttt_mae: mean(&ttt),
            rr_mae: mean(&rr),
            mean_spectral_distance: mean(&dists),
            mean_prior_force_norm: mean(&norms),
        };
        info!("{name}: baseline {:.4} TTT {:.4} RR {:.4}", r.baseline_mae, r.ttt_mae, r.rr_mae);
        splits.push(r);
        write_csv(&splits, &out.dir.join("split_summary.csv")).stage("write")?;
    }
    out.files.insert("split_summary.csv".into(), out.dir.join("split_summary.csv"));
    Ok(ShiftBenchmarkResult { splits, table, comparisons })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FineTuneRow {
    pub method: String,
    pub fraction: f64,
    pub n_structures: usize,
    pub force_mae: f64,
}

#[derive(Clone, Debug)]
pub struct FineTuneResult {
    pub baseline_mae: f64,
    pub ttt_mae: f64,
    pub rows: Vec<FineTuneRow>,
}

impl FineTuneResult {
    pub fn mae(&self, method: &str, fraction: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method && r.fraction == fraction).map(|r| r.force_mae)
    }
}

pub fn run_ttt_vs_finetune(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<FineTuneResult> {
    let prep = prepare(cfg)?;
    let samples = prep
        .benchmark
        .split(&cfg.finetune.split)
        .ok_or_else(|| Error::Config(format!("unknown split `{}`", cfg.finetune.split)))?;
    let stride = cfg.finetune.eval_stride;
    let (mut pool, mut eval) = (Vec::new(), Vec::new());
    for (k, s) in samples.iter().enumerate() {
        if k % stride == stride - 1 { eval.push(s.clone()) } else { pool.push(s.clone()) }
    }
    let structures: Vec<Structure<f64>> = samples.iter().map(|s| s.structure.clone()).collect();
    let adapted = ttt_adapt(&prep.params, &structures, &cfg.benchmark.potentials.prior, &cfg.ttt).stage("ttt")?;
    let mae = |p: &ModelParams<f64>| -> Result<f64> {
        Ok(mean(&per_structure_mae(&ModelForceField::new(p, Head::Main), &eval)?))
    };
    let baseline_mae = mae(&prep.params).stage("evaluate")?;
    let ttt_mae = mae(&adapted.params).stage("evaluate")?;
    let mut rows = Vec::new();
    for (method, start) in [("finetune", &prep.params), ("ttt_finetune", &adapted.params)] {
        let curve = fine_tune(start, &pool, &eval, &cfg.finetune.train, &cfg.finetune.fractions).stage("finetune")?;
        for p in curve {
            rows.push(FineTuneRow {
                method: method.into(),
                fraction: p.fraction,
                n_structures: p.n_structures,
                force_mae: p.force_mae,
            });
        }
    }
    write_csv(&rows, &out.dir.join("finetune_curve.csv")).stage("write")?;
    out.files.insert("finetune_curve.csv".into(), out.dir.join("finetune_curve.csv"));
    Ok(FineTuneResult { baseline_mae, ttt_mae, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RrRow {
    pub split: String,
    pub structure_id: String,
    /// This structure's own argmin over the candidates.
    pub best_cutoff: f64,
    pub distance_at_best: f64,
    /// Cutoff actually applied (the system's choice unless selecting per
    /// configuration).
    pub applied_cutoff: f64,
    pub distance_at_applied: f64,
    pub distance_at_train_cutoff: f64,
    pub mae_train_cutoff: f64,
    pub mae_refined: f64,
}

#[derive(Clone, Debug)]
pub struct RrSweepResult {
    pub rows: Vec<RrRow>,
}

impl RrSweepResult {
    pub fn split_rows<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a RrRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Mean MAE without and with refinement on one split.
    pub fn split_means(&self, split: &str) -> (f64, f64) {
        let rows: Vec<&RrRow> = self.split_rows(split).collect();
        let a: Vec<f64> = rows.iter().map(|r| r.mae_train_cutoff).collect();
        let b: Vec<f64> = rows.iter().map(|r| r.mae_refined).collect();
        (mean(&a), mean(&b))
    }
}

pub fn run_rr_sweep(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<RrSweepResult> {
    let prep = prepare(cfg)?;
    let bench = &prep.benchmark;
    let cands = candidates(cfg);
    let field = ModelForceField::new(&prep.params, Head::Main);
    let mut rows = Vec::new();
    let mut dist_rows = Vec::new();
    for split in &cfg.rr.splits {
        let samples = bench.split(split).ok_or_else(|| Error::Config(format!("unknown split `{split}`")))?;
        let base = per_structure_mae(&field, samples).stage("evaluate")?;
        let refined = rr_evaluate(&prep.params, samples, bench, &cands, cfg.rr.per_configuration).stage("rr")?;
        for ((s, b), RrEval { choice, cutoff, mae }) in samples.iter().zip(base).zip(refined) {
            for (c, d) in &choice.distances {
                dist_rows.push(vec![split.clone(), s.structure.structure_id.clone(), fmt(*c), fmt(*d)]);
            }
            rows.push(RrRow {
                split: split.clone(),
                structure_id: s.structure.structure_id.clone(),
                best_cutoff: choice.best_cutoff,
                distance_at_best: choice.best_distance(),
                applied_cutoff: cutoff,
                distance_at_applied: choice.distance_at(cutoff).expect("applied cutoff is a candidate"),
                distance_at_train_cutoff: choice.distance_at(bench.profile.train_cutoff).expect("train cutoff is a candidate"),
                mae_train_cutoff: b,
                mae_refined: mae,
            });
        }
    }
    out.write("rr_distances.csv", &table_string(&["split", "structure_id", "cutoff", "spectral_distance"], &dist_rows)?)
        .stage("write")?;
    write_csv(&rows, &out.dir.join("rr_choices.csv")).stage("write")?;
    out.files.insert("rr_choices.csv".into(), out.dir.join("rr_choices.csv"));
    Ok(RrSweepResult { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MdRow {
    pub model: String,
    pub stability_ps: f64,
    pub aborted_at_fs: Option<f64>,
    pub h_of_r_mae: f64,
    pub n_frames: usize,
}

#[derive(Clone, Debug)]
pub struct MdTransferResult {
    pub rows: Vec<MdRow>,
    pub histograms: Vec<(String, Histogram)>,
}

impl MdTransferResult {
    pub fn row(&self, model: &str) -> Option<&MdRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

pub fn run_md_transfer(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<MdTransferResult> {
    let prep = prepare(cfg)?;
    let samples = prep
        .benchmark
        .split(&cfg.md.split)
        .ok_or_else(|| Error::Config(format!("unknown split `{}`", cfg.md.split)))?;
    let start = &samples.first().ok_or_else(|| Error::input("MD split is empty"))?.structure;
    let mut structures: Vec<Structure<f64>> = Vec::new();
    for name in &cfg.md.adapt_splits {
        let split = prep.benchmark.split(name).ok_or_else(|| Error::Config(format!("unknown split `{name}`")))?;
        structures.extend(split.iter().map(|s| s.structure.clone()));
    }
    let adapted = ttt_adapt(&prep.params, &structures, &cfg.benchmark.potentials.prior, &cfg.ttt).stage("ttt")?;
    let bonds = reference_bonds(start, cfg.md.bond_cutoff).stage("simulate")?;
    let sim = &cfg.md.sim;
    let run = |label: &str| -> Result<Trajectory> {
        match label {
            "reference" => run_nvt(&cfg.benchmark.potentials.reference, start, sim, label),
            "baseline" => run_nvt(&ModelForceField::new(&prep.params, Head::Main), start, sim, label),
            _ => run_nvt(&ModelForceField::new(&adapted.params, Head::Main), start, sim, label),
        }
    };
    let mut trajs = Vec::new();
    for label in ["reference", "baseline", "ttt"] {
        let t = run(label).stage("simulate")?;
        info!("{label}: {} frames, aborted at {:?} fs", t.frames.len(), t.aborted_at_fs);
        write_trajectory(&t, &out.dir.join(format!("trajectories/{label}.extxyz"))).stage("write")?;
        trajs.push(t);
    }
    let hists = trajs
        .iter()
        .map(|t| Ok((t.label.clone(), h_of_r(t, cfg.md.r_max, cfg.md.n_bins)?)))
        .collect::<Result<Vec<_>>>()
        .stage("observables")?;
    let mut rows = Vec::new();
    for (t, (_, h)) in trajs.iter().zip(&hists) {
        rows.push(MdRow {
            model: t.label.clone(),
            stability_ps: stability_time(t, &bonds, cfg.md.stability_tolerance),
            aborted_at_fs: t.aborted_at_fs,
            h_of_r_mae: h_of_r_mae(h, &hists[0].1).stage("observables")?,
            n_frames: t.frames.len(),
        });
    }
    write_csv(&rows, &out.dir.join("md_summary.csv")).stage("write")?;
    out.files.insert("md_summary.csv".into(), out.dir.join("md_summary.csv"));
    let centers = hists[0].1.bin_centers();
    let hr_rows: Vec<Vec<String>> = (0..centers.len())
        .map(|b| std::iter::once(fmt(centers[b])).chain(hists.iter().map(|(_, h)| fmt(h.mass[b]))).collect())
        .collect();
    out.write("h_of_r.csv", &table_string(&["r", "reference", "baseline", "ttt"], &hr_rows)?).stage("write")?;
    Ok(MdTransferResult { rows, histograms: hists })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub pipeline: Pipeline,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub files: Vec<String>,
}

/// Runs the configured pipeline into `out_dir` and writes `config.toml` and
/// `summary.json` next to its tables.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut out = OutputSet::new(out_dir);
    out.write("config.toml", &cfg.to_toml_string()?).stage("write")?;
    let mut metrics = BTreeMap::new();
    match cfg.pipeline {
        Pipeline::ShiftBenchmark => {
            let r = run_shift_benchmark(cfg, &mut out)?;
            for s in &r.splits {
                metrics.insert(format!("{}.baseline_mae", s.split), s.baseline_mae);
                metrics.insert(format!("{}.ttt_mae", s.split), s.ttt_mae);
                metrics.insert(format!("{}.rr_mae", s.split), s.rr_mae);
            }
            for (isolate, c) in &r.comparisons {
                let tag = if *isolate { "isolated" } else { "all" };
                if let (Some(a), Some(b)) = (c.id_mae, c.ood_mae) {
                    metrics.insert(format!("{}.{tag}.id_mae", c.axis.name()), a);
                    metrics.insert(format!("{}.{tag}.ood_mae", c.axis.name()), b);
                }
            }
        }
        Pipeline::TttVsFinetune => {
            let r = run_ttt_vs_finetune(cfg, &mut out)?;
            metrics.insert("baseline_mae".into(), r.baseline_mae);
            metrics.insert("ttt_mae".into(), r.ttt_mae);
            for row in &r.rows {
                metrics.insert(format!("{}.{}", row.method, row.fraction), row.force_mae);
            }
        }
        Pipeline::RrSweep => {
            let r = run_rr_sweep(cfg, &mut out)?;
            for split in &cfg.rr.splits {
                let (a, b) = r.split_means(split);
                metrics.insert(format!("{split}.mae_train_cutoff"), a);
                metrics.insert(format!("{split}.mae_refined"), b);
            }
        }
        Pipeline::MdTransfer => {
            let r = run_md_transfer(cfg, &mut out)?;
            for row in &r.rows {
                metrics.insert(format!("{}.stability_ps", row.model), row.stability_ps);
                metrics.insert(format!("{}.h_of_r_mae", row.model), row.h_of_r_mae);
            }
        }
    }
    metrics.retain(|_, v| v.is_finite());
    let report = ExperimentReport {
        pipeline: cfg.pipeline,
        seed: cfg.seed,
        metrics,
        files: out.files.keys().cloned().chain(std::iter::once("summary.json".to_string())).collect(),
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?;
    out.write("summary.json", &json).stage("write")?;
    Ok(report)
}
