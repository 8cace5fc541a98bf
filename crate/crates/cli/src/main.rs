use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ttr_core::benchmark::generate_benchmark;
use ttr_core::config::{ExperimentConfig, Pipeline};
use ttr_core::diagnostics::diagnose;
use ttr_core::experiments::run_experiment;
use ttr_core::graph::structure_spectrum;
use ttr_core::io::{csv_string, parse_extxyz, read_structures, table_string, write_extxyz, write_trajectory, OutputSet};
use ttr_core::linear_ttt::{verify_theorem, DimerGenerator};
use ttr_core::md::{equilibrated_nve, reference_bonds, run_nvt, stability_time, SimConfig, Trajectory};
use ttr_core::metrics::force_mae;
use ttr_core::model::{checkpoint, Head, ModelForceField, ModelParams};
use ttr_core::potentials::ForceProvider;
use ttr_core::profile::{build_training_profile, TrainingProfile};
use ttr_core::rr::{apply_refined_cutoff, default_candidates, refine_radius};
use ttr_core::structure::{pair_labels, Structure};
use ttr_core::training::{calibrate_readout_bias, train, write_loss_log, Task};
use ttr_core::ttt::{ttt_adapt, TttConfig};

#[derive(Parser)]
#[command(name = "ttr", version, about = "Test-time refinement for machine-learned force fields")]
struct Cli {
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark: one extxyz file per split plus the
    /// training profile.
    Generate,
    /// Train a model on labeled structures.
    Train {
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Adapt a checkpoint to test structures using prior labels only.
    Ttt {
        checkpoint: PathBuf,
        data: PathBuf,
        /// Named step/learning-rate preset instead of the configured one.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Choose a cutoff per structure; prints candidate distances as CSV.
    Rr {
        profile: PathBuf,
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<f64>>,
    },
    /// Distribution-shift report per structure, as CSV.
    Diagnose { profile: PathBuf, data: PathBuf },
    /// Run MD from the first structure of a file.
    Simulate {
        start: PathBuf,
        /// Model checkpoint; the reference potential is used when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Ensemble::Nvt)]
        ensemble: Ensemble,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long)]
        temperature: Option<f64>,
        /// Refine the model cutoff against this profile first.
        #[arg(long, requires = "profile")]
        rr: bool,
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Normalized-Laplacian spectrum of every structure, as CSV.
    Spectra {
        data: PathBuf,
        #[arg(long)]
        cutoff: Option<f64>,
    },
    /// Main-head energy and per-atom forces, as CSV.
    Eval { checkpoint: PathBuf, data: PathBuf },
    /// Randomised check of the linear TTT theorem on dimer instances.
    TheoremDemo {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        eta: f64,
    },
    /// Run a named pipeline (defaults to the configured one).
    Experiment { pipeline: Option<String> },
}

#[derive(Clone, Copy, ValueEnum)]
enum Ensemble {
    Nvt,
    Nve,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn structures(path: &Path) -> Result<Vec<Structure<f64>>> {
    let s = read_structures(path)?;
    if s.is_empty() {
        bail!("{} contains no structures", path.display());
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out_dir = cli.out_dir.clone();
    match cli.command {
        Command::Generate => generate(&cfg, &out_dir),
        Command::Train { data, epochs } => train_cmd(&cfg, &data, epochs, &out_dir),
        Command::Ttt { checkpoint, data, preset, steps, lr } => {
            let mut ttt = match preset {
                Some(name) => TttConfig { seed: cfg.ttt.seed, ..TttConfig::preset(&name)? },
                None => cfg.ttt.clone(),
            };
            if let Some(s) = steps {
                ttt.steps = s;
            }
            if let Some(l) = lr {
                ttt.learning_rate = l;
            }
            ttt_cmd(&cfg, &ttt, &checkpoint, &data, &out_dir)
        }
        Command::Rr { profile, data, candidates } => rr_cmd(&profile, &data, candidates),
        Command::Diagnose { profile, data } => {
            let profile = TrainingProfile::load(&profile)?;
            let reports = structures(&data)?
                .iter()
                .map(|s| diagnose(s, &profile, &cfg.benchmark.potentials.prior))
                .collect::<ttr_core::Result<Vec<_>>>()?;
            print(&csv_string(&reports)?)
        }
        Command::Simulate { start, checkpoint, ensemble, preset, temperature, rr, profile } => {
            let mut sim = match preset {
                Preset::Desk => SimConfig::desk(),
                Preset::Full => SimConfig::default(),
            };
            sim.seed = cfg.md.sim.seed;
            if let Some(t) = temperature {
                sim.temperature_k = t;
            }
            let opts = SimulateArgs { start, checkpoint, ensemble, rr, profile };
            simulate(&cfg, &sim, &opts, &out_dir)
        }
        Command::Spectra { data, cutoff } => {
            let cutoff = cutoff.unwrap_or(cfg.benchmark.train_cutoff);
            let mut rows = Vec::new();
            for s in structures(&data)? {
                for (i, v) in structure_spectrum(&s, cutoff)?.eigenvalues.iter().enumerate() {
                    rows.push(vec![s.structure_id.clone(), i.to_string(), v.to_string()]);
                }
            }
            print(&table_string(&["structure_id", "eigenvalue_index", "value"], &rows)?)
        }
        Command::Eval { checkpoint, data } => {
            let params = checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let mut rows = Vec::new();
            for s in structures(&data)? {
                let (e, f) = params.forward_energy_forces(&s, Head::Main)?;
                for (i, fi) in f.iter().enumerate() {
                    rows.push(vec![
                        s.structure_id.clone(),
                        i.to_string(),
                        e.to_string(),
                        fi[0].to_string(),
                        fi[1].to_string(),
                        fi[2].to_string(),
                    ]);
                }
            }
            print(&table_string(&["structure_id", "atom", "energy", "fx", "fy", "fz"], &rows)?)
        }
        Command::TheoremDemo { trials, eta } => {
            let gen = DimerGenerator { seed: cfg.seed, ..DimerGenerator::default() };
            let report = verify_theorem(&gen, trials, eta)?;
            print(&csv_string(&report.records)?)?;
            println!("{}", report.summary());
            Ok(())
        }
        Command::Experiment { pipeline } => {
            let mut cfg = cfg;
            if let Some(p) = pipeline {
                cfg.pipeline = p.parse::<Pipeline>()?;
            }
            let report = run_experiment(&cfg, &out_dir)?;
            for (k, v) in &report.metrics {
                println!("{k} = {v}");
            }
            Ok(())
        }
    }
}

fn generate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let bench = generate_benchmark(&cfg.benchmark)?;
    for name in bench.split_names() {
        let records: Vec<_> = bench.split(&name).unwrap_or_default().iter().flat_map(|s| s.to_labeled()).collect();
        let path = out_dir.join(format!("{name}.extxyz"));
        write_extxyz(&records, &path)?;
        println!("{name}: {} structures -> {}", records.len() / 2, path.display());
    }
    bench.profile.save(&out_dir.join("profile.txt"))?;
    Ok(())
}

fn train_cmd(cfg: &ExperimentConfig, data: &Path, epochs: Option<usize>, out_dir: &Path) -> Result<()> {
    let records = parse_extxyz(data)?;
    let samples = pair_labels(&records);
    if samples.is_empty() {
        bail!("{} contains no labeled structures", data.display());
    }
    let species: BTreeSet<_> = samples.iter().flat_map(|s| s.structure.species.iter().copied()).collect();
    let cutoff = cfg.model.cutoff.unwrap_or(cfg.benchmark.train_cutoff);
    let arch = cfg.model.arch(species.into_iter().collect(), cutoff);
    let has_ref = samples.iter().all(|s| s.reference.is_some());
    let has_prior = samples.iter().all(|s| s.prior.is_some());
    let task = match (has_ref, has_prior) {
        (true, true) => Task::Joint,
        (true, false) => Task::Main,
        (false, true) => Task::Prior,
        (false, false) => bail!("every structure needs reference labels, prior labels or both"),
    };
    let mut params = ModelParams::init(&arch)?;
    if task != Task::Prior {
        calibrate_readout_bias(&mut params, &samples, Head::Main)?;
    }
    if task != Task::Main {
        calibrate_readout_bias(&mut params, &samples, Head::Prior)?;
    }
    let mut tc = cfg.train.clone();
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    let outcome = train(&params, &samples, task, &tc)?;
    std::fs::create_dir_all(out_dir)?;
    checkpoint::save(&outcome.params, &out_dir.join("model.json"))?;
    write_loss_log(&outcome.history, &out_dir.join("loss_log.csv"))?;
    let reference: Vec<_> = records
        .iter()
        .filter(|r| r.label_source == ttr_core::structure::LabelSource::Reference)
        .cloned()
        .collect();
    if !reference.is_empty() {
        build_training_profile(&reference, cutoff)?.save(&out_dir.join("profile.txt"))?;
    }
    if let Some(last) = outcome.history.last() {
        println!("trained {} steps, final batch force MAE {:.4} eV/Å", outcome.history.len(), last.force_mae);
    }
    Ok(())
}

#[derive(Serialize)]
struct TttMetric {
    structure_id: String,
    force_mae_before: Option<f64>,
    force_mae_after: Option<f64>,
}

fn ttt_cmd(cfg: &ExperimentConfig, ttt: &TttConfig, ckpt: &Path, data: &Path, out_dir: &Path) -> Result<()> {
    let params = checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let samples = pair_labels(&parse_extxyz(data)?);
    if samples.is_empty() {
        bail!("{} contains no structures", data.display());
    }
    let test: Vec<_> = samples.iter().map(|s| s.structure.clone()).collect();
    let outcome = ttt_adapt(&params, &test, &cfg.benchmark.potentials.prior, ttt)?;
    let mut out = OutputSet::new(out_dir);
    std::fs::create_dir_all(out_dir)?;
    checkpoint::save(&outcome.params, &out_dir.join("adapted.json"))?;
    let history: Vec<Vec<String>> =
        outcome.history.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]).collect();
    out.write("ttt_loss.csv", &table_string(&["step", "prior_loss"], &history)?)?;
    let before = ModelForceField::new(&params, Head::Main);
    let after = ModelForceField::new(&outcome.params, Head::Main);
    let mut metrics = Vec::new();
    for s in &samples {
        let mae = |p: &ModelForceField<f64>| -> Result<Option<f64>> {
            match &s.reference {
                Some(l) => Ok(Some(force_mae(&p.label(&s.structure)?.forces, &l.forces)?)),
                None => Ok(None),
            }
        };
        metrics.push(TttMetric {
            structure_id: s.structure.structure_id.clone(),
            force_mae_before: mae(&before)?,
            force_mae_after: mae(&after)?,
        });
    }
    out.write("ttt_metrics.csv", &csv_string(&metrics)?)?;
    println!(
        "prior loss {:.6} -> {:.6} (best step {}, {:?})",
        outcome.history[0],
        outcome.history[outcome.best_step],
        outcome.best_step,
        outcome.stop
    );
    Ok(())
}

fn rr_cmd(profile: &Path, data: &Path, candidates: Option<Vec<f64>>) -> Result<()> {
    let profile = TrainingProfile::load(profile)?;
    let candidates = candidates.unwrap_or_else(|| default_candidates(profile.train_cutoff));
    let mut rows = Vec::new();
    for s in structures(data)? {
        let choice = refine_radius(&s, &profile, &candidates)?;
        for (c, d) in &choice.distances {
            rows.push(vec![
                s.structure_id.clone(),
                c.to_string(),
                d.to_string(),
                (*c == choice.best_cutoff).to_string(),
            ]);
        }
        eprintln!("{}: chosen cutoff {}", s.structure_id, choice.best_cutoff);
    }
    print(&table_string(&["structure_id", "cutoff", "distance", "chosen"], &rows)?)
}

struct SimulateArgs {
    start: PathBuf,
    checkpoint: Option<PathBuf>,
    ensemble: Ensemble,
    rr: bool,
    profile: Option<PathBuf>,
}

fn integrate<P: ForceProvider<f64>>(p: &P, start: &Structure<f64>, sim: &SimConfig, ens: Ensemble, label: &str) -> Result<Trajectory> {
    Ok(match ens {
        Ensemble::Nvt => run_nvt(p, start, sim, label)?,
        Ensemble::Nve => {
            let eq = SimConfig { total_time_ps: sim.total_time_ps.min(1.0), ..sim.clone() };
            equilibrated_nve(p, start, &eq, sim, label)?
        }
    })
}

fn simulate(cfg: &ExperimentConfig, sim: &SimConfig, args: &SimulateArgs, out_dir: &Path) -> Result<()> {
    let start = structures(&args.start)?.swap_remove(0);
    let traj = match &args.checkpoint {
        None => integrate(&cfg.benchmark.potentials.reference, &start, sim, args.ensemble, "reference")?,
        Some(path) => {
            let params = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let mut cutoff = params.cutoff();
            if args.rr {
                let profile = TrainingProfile::load(args.profile.as_deref().expect("clap enforces --profile"))?;
                cutoff = refine_radius(&start, &profile, &default_candidates(profile.train_cutoff))?.best_cutoff;
            }
            let ff = apply_refined_cutoff(&params, cutoff)?;
            integrate(&ff, &start, sim, args.ensemble, &format!("model@{cutoff}"))?
        }
    };
    let path = out_dir.join("trajectory.extxyz");
    write_trajectory(&traj, &path)?;
    let bonds = reference_bonds(&start, cfg.md.bond_cutoff)?;
    let stable = stability_time(&traj, &bonds, cfg.md.stability_tolerance);
    print(&table_string(
        &["label", "frames", "stability_ps", "aborted_at_fs"],
        &[vec![
            traj.label.clone(),
            traj.frames.len().to_string(),
            stable.to_string(),
            traj.aborted_at_fs.map(|t| t.to_string()).unwrap_or_default(),
        ]],
    )?)?;
    if traj.aborted_at_fs.is_some() {
        bail!("simulation aborted; partial trajectory written to {}", path.display());
    }
    Ok(())
}
