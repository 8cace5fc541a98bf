//! Synthetic distribution-shift benchmark.
//!
//! Template molecules (zigzag chains, branched stars, rings) are sampled with
//! Langevin dynamics on the reference potential and every frame is labeled by
//! both the reference and the Lennard-Jones prior. Frames whose bond
//! topology changed during sampling are discarded, so each template keeps its
//! connectivity.
//!
//! Splits:
//! * `train` / `id_test`: frames of the training templates.
//! * `connectivity`: frames of templates with a new bond graph (rings).
//! * `force_norm`: compressed copies of in-distribution test frames.
//! * `unseen_element`: templates containing a species absent from training.
//! * `heldout`: compressed frames of the connectivity templates, shifted
//!   both in connectivity and in force norm.

use std::collections::{BTreeMap, BTreeSet};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::build_radius_graph;
use crate::md::{run_nvt, SimConfig};
use crate::potentials::{ForceProvider, LjSpecies, MorseSpecies, PairParams, ReferenceOracleParams};
use crate::profile::{build_training_profile, TrainingProfile};
use crate::species::Species;
use crate::structure::{LabelSource, LabeledStructure, Sample, Structure, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Chain,
    Ring,
    /// Three zigzag arms around a central atom; the first symbol is the
    /// centre.
    Star,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateRole {
    Train,
    Connectivity,
    UnseenElement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    pub name: String,
    pub kind: TemplateKind,
    /// Element symbols, one per atom, e.g. `["C", "C", "O"]`.
    pub species: Vec<String>,
    pub role: TemplateRole,
}

impl TemplateSpec {
    fn new(name: &str, kind: TemplateKind, species: &str, role: TemplateRole) -> Self {
        TemplateSpec {
            name: name.into(),
            kind,
            species: species.chars().map(|c| c.to_string()).collect(),
            role,
        }
    }

    pub fn parsed_species(&self) -> Result<Vec<Species>> {
        self.species.iter().map(|s| s.parse()).collect()
    }
}

/// Reference oracle and prior used to label the benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSet {
    pub reference: ReferenceOracleParams<f64>,
    pub prior: PairParams<f64>,
}

impl Default for PotentialSet {
    /// Morse parameters for C, N, O and a Lennard-Jones prior placed on the
    /// same pair minima (`σ = r0 / 2^{1/6}`) with the same well depths.
    fn default() -> Self {
        let table = [("C", 3.0, 4.0, 1.50), ("N", 2.8, 4.2, 1.45), ("O", 2.6, 4.4, 1.42)];
        let mut morse = BTreeMap::new();
        let mut lj = BTreeMap::new();
        for (sym, depth, width, r0) in table {
            let s: Species = sym.parse().expect("known symbol");
            morse.insert(s, MorseSpecies { depth, width, r0 });
            lj.insert(s, LjSpecies { epsilon: depth, sigma: r0 / 2f64.powf(1.0 / 6.0) });
        }
        PotentialSet {
            reference: ReferenceOracleParams {
                morse,
                core_repulsion: 5.0,
                three_body_strength: 10.0,
                three_body_cos0: -0.5,
                three_body_cutoff: 2.4,
            },
            prior: PairParams { species: lj },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub templates: Vec<TemplateSpec>,
    pub frames_per_template: usize,
    /// MD steps between sampled frames.
    pub sample_interval: usize,
    /// Frames taken from each short trajectory.
    pub frames_per_run: usize,
    /// Steps discarded at the start of each trajectory.
    pub equilibration_steps: usize,
    pub dt_fs: f64,
    pub temperature_k: f64,
    pub friction_per_fs: f64,
    pub bond_length: f64,
    /// Distance below which two atoms count as bonded in the topology check.
    pub bond_cutoff: f64,
    /// Every `test_stride`-th frame of a training template goes to `id_test`.
    pub test_stride: usize,
    /// Scale factor applied about the centroid for compressed splits.
    pub compression: f64,
    /// Graph cutoff used for the training profile.
    pub train_cutoff: f64,
    pub potentials: PotentialSet,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        use TemplateKind::*;
        use TemplateRole::*;
        BenchmarkConfig {
            seed: 7,
            templates: vec![
                TemplateSpec::new("chain6", Chain, "CCOCCC", Train),
                TemplateSpec::new("chain8", Chain, "CCCOCCCO", Train),
                TemplateSpec::new("star7", Star, "CCOCCCO", Train),
                TemplateSpec::new("ring6", Ring, "CCCCCO", Connectivity),
                TemplateSpec::new("chain6n", Chain, "CNCCNC", UnseenElement),
            ],
            frames_per_template: 60,
            sample_interval: 40,
            frames_per_run: 10,
            equilibration_steps: 600,
            dt_fs: 0.5,
            temperature_k: 300.0,
            friction_per_fs: 0.01,
            bond_length: 1.5,
            bond_cutoff: 1.95,
            test_stride: 5,
            compression: 0.96,
            train_cutoff: 3.0,
            potentials: PotentialSet::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.templates.iter().any(|t| t.role == TemplateRole::Train) {
            return Err(Error::Config("benchmark needs at least one training template".into()));
        }
        if self.frames_per_template == 0 || self.sample_interval == 0 || self.frames_per_run == 0 || self.test_stride < 2 {
            return Err(Error::Config("frame counts must be positive and test_stride >= 2".into()));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::Config("compression must lie in (0, 1]".into()));
        }
        let mut names = BTreeSet::new();
        for t in &self.templates {
            if !names.insert(&t.name) {
                return Err(Error::Config(format!("duplicate template name `{}`", t.name)));
            }
            let sp = t.parsed_species()?;
            let min = match t.kind {
                TemplateKind::Chain => 2,
                TemplateKind::Ring => 3,
                TemplateKind::Star => 4,
            };
            if sp.len() < min {
                return Err(Error::Config(format!("template `{}` needs at least {min} atoms", t.name)));
            }
            if !self.potentials.prior.covers(&sp) || sp.iter().any(|s| !self.potentials.reference.morse.contains_key(s)) {
                return Err(Error::Config(format!("template `{}` uses a species without potential parameters", t.name)));
            }
        }
        self.potentials.reference.validate()?;
        self.potentials.prior.validate()
    }
}

fn rot(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Planar starting geometry with 120° angles and the given bond length.
pub fn template_geometry(kind: TemplateKind, n: usize, bond: f64) -> Vec<Vec3<f64>> {
    let third = 2.0 * std::f64::consts::PI / 3.0;
    match kind {
        TemplateKind::Chain => (0..n)
            .map(|k| [k as f64 * bond * (third / 4.0).cos(), if k % 2 == 1 { bond * 0.5 } else { 0.0 }, 0.0])
            .collect(),
        TemplateKind::Ring => {
            let radius = bond / (2.0 * (std::f64::consts::PI / n as f64).sin());
            (0..n)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    [radius * a.cos(), radius * a.sin(), 0.0]
                })
                .collect()
        }
        TemplateKind::Star => {
            let mut pos = vec![[0.0; 3]];
            let arms = n - 1;
            for k in 0..arms {
                let arm = k % 3;
                let depth = k / 3;
                let dir = rot([1.0, 0.0], third * arm as f64);
                // pinwheel: every arm turns the same way, keeping tips apart
                let mut p = [0.0, 0.0];
                for d in 0..=depth {
                    let step = if d % 2 == 0 { dir } else { rot(dir, third / 2.0) };
                    p = [p[0] + bond * step[0], p[1] + bond * step[1]];
                }
                pos.push([p[0], p[1], 0.0]);
            }
            pos
        }
    }
}

/// Bonded pairs (`r < bond_cutoff`) as a sorted edge list.
pub fn bond_topology(structure: &Structure<f64>, bond_cutoff: f64) -> Result<BTreeSet<(usize, usize)>> {
    Ok(build_radius_graph(structure, bond_cutoff)?.edges().collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub train: Vec<Sample<f64>>,
    pub id_test: Vec<Sample<f64>>,
    /// OOD splits keyed by name: `connectivity`, `force_norm`,
    /// `unseen_element`, `heldout`.
    pub ood: BTreeMap<String, Vec<Sample<f64>>>,
    pub profile: TrainingProfile,
}

impl Benchmark {
    pub fn split(&self, name: &str) -> Option<&[Sample<f64>]> {
        match name {
            "train" => Some(&self.train),
            "id_test" => Some(&self.id_test),
            other => self.ood.get(other).map(Vec::as_slice),
        }
    }

    pub fn split_names(&self) -> Vec<String> {
        let mut names = vec!["train".to_string(), "id_test".to_string()];
        names.extend(self.ood.keys().cloned());
        names
    }
}

pub fn label_sample(structure: Structure<f64>, potentials: &PotentialSet) -> Result<Sample<f64>> {
    let reference = potentials.reference.label(&structure)?;
    let prior = potentials.prior.label(&structure)?;
    Ok(Sample { structure, reference: Some(reference), prior: Some(prior) })
}

/// Samples `frames_per_template` topology-preserving frames of one template
/// from short independent trajectories started at the planar template.
pub fn sample_template(t: &TemplateSpec, cfg: &BenchmarkConfig, seed: u64) -> Result<Vec<Structure<f64>>> {
    let species = t.parsed_species()?;
    let start = Structure::new(species.clone(), template_geometry(t.kind, species.len(), cfg.bond_length), &t.name, &t.name)?;
    let topology = bond_topology(&start, cfg.bond_cutoff)?;
    let runs_needed = cfg.frames_per_template.div_ceil(cfg.frames_per_run);
    let mut temperature = cfg.temperature_k;
    let mut run_seed = seed;
    for _ in 0..6 {
        let mut out = Vec::new();
        let mut failed_runs = 0;
        while out.len() < cfg.frames_per_template && failed_runs <= runs_needed {
            let steps = cfg.equilibration_steps + cfg.frames_per_run * cfg.sample_interval;
            let sim = SimConfig {
                dt_fs: cfg.dt_fs,
                total_time_ps: steps as f64 * cfg.dt_fs / 1000.0,
                temperature_k: temperature,
                friction_per_fs: cfg.friction_per_fs,
                seed: run_seed,
                record_interval: cfg.sample_interval,
            };
            run_seed = run_seed.wrapping_add(1_000_003);
            let traj = run_nvt(&cfg.potentials.reference, &start, &sim, "reference")?;
            let skip = cfg.equilibration_steps / cfg.sample_interval;
            let mut intact = traj.is_stable();
            for f in traj.frames.iter().skip(skip + 1) {
                let s = start.with_positions(f.positions.clone());
                if bond_topology(&s, cfg.bond_cutoff)? != topology {
                    intact = false;
                    break;
                }
                out.push(s);
            }
            if !intact {
                failed_runs += 1;
            }
        }
        if out.len() >= cfg.frames_per_template {
            out.truncate(cfg.frames_per_template);
            for (k, s) in out.iter_mut().enumerate() {
                s.structure_id = format!("{}-{k}", t.name);
            }
            return Ok(out);
        }
        warn!("template `{}` keeps changing topology at {temperature:.0} K; resampling colder", t.name);
        temperature *= 0.7;
    }
    Err(Error::Numeric(format!("could not sample template `{}` without topology changes", t.name)))
}

fn compressed(sample: &Sample<f64>, factor: f64, potentials: &PotentialSet) -> Result<Sample<f64>> {
    let mut s = sample.structure.scaled(factor);
    s.structure_id.push_str("-c");
    s.system_id.push_str("-compressed");
    label_sample(s, potentials)
}

pub fn generate_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let mut train = Vec::new();
    let mut id_test = Vec::new();
    let mut ood: BTreeMap<String, Vec<Sample<f64>>> = BTreeMap::new();
    for (ti, t) in cfg.templates.iter().enumerate() {
        let frames = sample_template(t, cfg, cfg.seed.wrapping_mul(1_000_033).wrapping_add(ti as u64))?;
        info!("sampled {} frames of `{}`", frames.len(), t.name);
        for (k, s) in frames.into_iter().enumerate() {
            let sample = label_sample(s, &cfg.potentials)?;
            match t.role {
                TemplateRole::Train if k % cfg.test_stride == cfg.test_stride - 1 => id_test.push(sample),
                TemplateRole::Train => train.push(sample),
                TemplateRole::Connectivity => {
                    ood.entry("heldout".into()).or_default().push(compressed(&sample, cfg.compression, &cfg.potentials)?);
                    ood.entry("connectivity".into()).or_default().push(sample);
                }
                TemplateRole::UnseenElement => ood.entry("unseen_element".into()).or_default().push(sample),
            }
        }
    }
    let force_norm = id_test.iter().map(|s| compressed(s, cfg.compression, &cfg.potentials)).collect::<Result<Vec<_>>>()?;
    ood.insert("force_norm".into(), force_norm);
    let profile = build_training_profile(&reference_records(&train), cfg.train_cutoff)?;
    Ok(Benchmark { train, id_test, ood, profile })
}

/// Reference-labeled records of a split.
pub fn reference_records(samples: &[Sample<f64>]) -> Vec<LabeledStructure<f64>> {
    samples
        .iter()
        .flat_map(|s| s.to_labeled())
        .filter(|l| l.label_source == LabelSource::Reference)
        .collect()
}

/// Samples grouped by `system_id`, in order of first appearance.
pub fn group_by_system(samples: &[Sample<f64>]) -> Vec<(String, Vec<Sample<f64>>)> {
    let mut out: Vec<(String, Vec<Sample<f64>>)> = Vec::new();
    for s in samples {
        match out.iter_mut().find(|(id, _)| *id == s.structure.system_id) {
            Some((_, v)) => v.push(s.clone()),
            None => out.push((s.structure.system_id.clone(), vec![s.clone()])),
        }
    }
    out
}
