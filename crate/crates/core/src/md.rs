//! Velocity-Verlet and Langevin (BAOAB) dynamics, plus trajectory metrics:
//! stability time, interatomic distance distributions and NVE drift.
//!
//! Units: Å, fs, amu, eV. A force in eV/Å acting on a mass in amu gives an
//! acceleration of `F / m · ACCEL_UNIT` Å/fs².

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::build_radius_graph;
use crate::potentials::ForceProvider;
use crate::species::Species;
use crate::structure::{distance, Structure, Vec3};

/// (eV/Å)/amu in Å/fs².
pub const ACCEL_UNIT: f64 = 0.009_648_533_212;
/// Boltzmann constant in eV/K.
pub const BOLTZMANN_EV: f64 = 8.617_333_262e-5;
/// Any pair closer than this aborts a run as unstable.
pub const MIN_PAIR_DISTANCE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt_fs: f64,
    pub total_time_ps: f64,
    pub temperature_k: f64,
    /// Langevin friction in 1/fs; ignored by NVE.
    pub friction_per_fs: f64,
    pub seed: u64,
    pub record_interval: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_fs: 0.5,
            total_time_ps: 100.0,
            temperature_k: 500.0,
            friction_per_fs: 0.01,
            seed: 0,
            record_interval: 20,
        }
    }
}

impl SimConfig {
    /// The 10 ps preset used for quick runs.
    pub fn desk() -> Self {
        SimConfig { total_time_ps: 10.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_fs > 0.0) || !(self.total_time_ps > 0.0) {
            return Err(Error::Config("dt and total_time must be positive".into()));
        }
        if self.temperature_k < 0.0 || self.friction_per_fs < 0.0 {
            return Err(Error::Config("temperature and friction must be non-negative".into()));
        }
        if self.record_interval == 0 {
            return Err(Error::Config("record_interval must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.total_time_ps * 1000.0 / self.dt_fs).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub time_fs: f64,
    pub positions: Vec<Vec3<f64>>,
    pub velocities: Vec<Vec3<f64>>,
    pub potential_energy: f64,
    pub total_energy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub species: Vec<Species>,
    pub frames: Vec<Frame>,
    pub config: SimConfig,
    /// Free-form identifier of the force provider (model, cutoff).
    pub label: String,
    /// Time at which the run was aborted, if it was.
    pub aborted_at_fs: Option<f64>,
}

impl Trajectory {
    pub fn is_stable(&self) -> bool {
        self.aborted_at_fs.is_none()
    }

    pub fn duration_ps(&self) -> f64 {
        self.config.total_time_ps
    }
}

pub fn kinetic_energy(species: &[Species], velocities: &[Vec3<f64>]) -> f64 {
    species
        .iter()
        .zip(velocities)
        .map(|(s, v)| 0.5 * s.mass() * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
        .sum::<f64>()
        / ACCEL_UNIT
}

/// Seeded Maxwell-Boltzmann velocities with zero net momentum.
pub fn maxwell_boltzmann(species: &[Species], temperature_k: f64, seed: u64) -> Vec<Vec3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<Vec3<f64>> = species
        .iter()
        .map(|s| {
            let sd = (BOLTZMANN_EV * temperature_k / s.mass() * ACCEL_UNIT).sqrt();
            [0, 1, 2].map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
        })
        .collect();
    let total_mass: f64 = species.iter().map(|s| s.mass()).sum();
    for k in 0..3 {
        let p: f64 = species.iter().zip(&v).map(|(s, x)| s.mass() * x[k]).sum();
        for x in &mut v {
            x[k] -= p / total_mass;
        }
    }
    v
}

struct State {
    x: Vec<Vec3<f64>>,
    v: Vec<Vec3<f64>>,
    f: Vec<Vec3<f64>>,
    epot: f64,
}

fn too_close(x: &[Vec3<f64>]) -> bool {
    (0..x.len()).any(|i| (i + 1..x.len()).any(|j| distance(&x[i], &x[j]) < MIN_PAIR_DISTANCE))
}

enum Ensemble {
    Nve,
    Nvt,
}

fn run<P: ForceProvider<f64>>(
    provider: &P,
    structure: &Structure<f64>,
    velocities: Option<Vec<Vec3<f64>>>,
    cfg: &SimConfig,
    ensemble: Ensemble,
    label: &str,
) -> Result<Trajectory> {
    cfg.validate()?;
    structure.validate()?;
    let species = structure.species.clone();
    let n = species.len();
    let v = match velocities {
        Some(v) if v.len() == n => v,
        Some(v) => return Err(Error::input(format!("{} velocities for {n} atoms", v.len()))),
        None => maxwell_boltzmann(&species, cfg.temperature_k, cfg.seed),
    };
    let (epot, f) = provider.energy_forces(&species, &structure.positions)?;
    let mut st = State { x: structure.positions.clone(), v, f, epot };
    let inv_m: Vec<f64> = species.iter().map(|s| ACCEL_UNIT / s.mass()).collect();
    let dt = cfg.dt_fs;
    let c1 = (-cfg.friction_per_fs * dt).exp();
    let c2 = (1.0 - c1 * c1).sqrt();
    let noise_sd: Vec<f64> =
        species.iter().map(|s| (BOLTZMANN_EV * cfg.temperature_k / s.mass() * ACCEL_UNIT).sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);

    let frame = |st: &State, t: f64| Frame {
        time_fs: t,
        positions: st.x.clone(),
        velocities: st.v.clone(),
        potential_energy: st.epot,
        total_energy: st.epot + kinetic_energy(&species, &st.v),
    };
    let mut frames = vec![frame(&st, 0.0)];
    let mut aborted_at_fs = None;
    for step in 1..=cfg.n_steps() {
        for i in 0..n {
            for k in 0..3 {
                st.v[i][k] += 0.5 * dt * st.f[i][k] * inv_m[i];
            }
        }
        match ensemble {
            Ensemble::Nve => {
                for i in 0..n {
                    for k in 0..3 {
                        st.x[i][k] += dt * st.v[i][k];
                    }
                }
            }
            Ensemble::Nvt => {
                for i in 0..n {
                    for k in 0..3 {
                        st.x[i][k] += 0.5 * dt * st.v[i][k];
                    }
                }
                for i in 0..n {
                    for k in 0..3 {
                        let xi: f64 = StandardNormal.sample(&mut rng);
                        st.v[i][k] = c1 * st.v[i][k] + c2 * noise_sd[i] * xi;
                    }
                }
                for i in 0..n {
                    for k in 0..3 {
                        st.x[i][k] += 0.5 * dt * st.v[i][k];
                    }
                }
            }
        }
        let t = step as f64 * dt;
        let evaluated = if st.x.iter().flatten().all(|c| c.is_finite()) && !too_close(&st.x) {
            provider.energy_forces(&species, &st.x).ok()
        } else {
            None
        };
        match evaluated {
            Some((e, f)) if e.is_finite() && f.iter().flatten().all(|c| c.is_finite()) => {
                st.epot = e;
                st.f = f;
            }
            _ => {
                aborted_at_fs = Some(t);
                frames.push(frame(&st, t));
                break;
            }
        }
        for i in 0..n {
            for k in 0..3 {
                st.v[i][k] += 0.5 * dt * st.f[i][k] * inv_m[i];
            }
        }
        if step % cfg.record_interval == 0 {
            frames.push(frame(&st, t));
        }
    }
    Ok(Trajectory { species, frames, config: cfg.clone(), label: label.to_string(), aborted_at_fs })
}

/// Langevin dynamics with the BAOAB splitting.
pub fn run_nvt<P: ForceProvider<f64>>(
    provider: &P,
    structure: &Structure<f64>,
    cfg: &SimConfig,
    label: &str,
) -> Result<Trajectory> {
    run(provider, structure, None, cfg, Ensemble::Nvt, label)
}

/// Velocity-Verlet from given velocities, or Maxwell-Boltzmann ones at
/// `cfg.temperature_k` when `None`.
pub fn run_nve<P: ForceProvider<f64>>(
    provider: &P,
    structure: &Structure<f64>,
    velocities: Option<Vec<Vec3<f64>>>,
    cfg: &SimConfig,
    label: &str,
) -> Result<Trajectory> {
    run(provider, structure, velocities, cfg, Ensemble::Nve, label)
}

/// Short NVT segment followed by NVE from its last frame.
pub fn equilibrated_nve<P: ForceProvider<f64>>(
    provider: &P,
    structure: &Structure<f64>,
    equilibration: &SimConfig,
    cfg: &SimConfig,
    label: &str,
) -> Result<Trajectory> {
    let eq = run_nvt(provider, structure, equilibration, label)?;
    if !eq.is_stable() {
        return Err(Error::Numeric("equilibration segment became unstable".into()));
    }
    let last = eq.frames.last().expect("frame 0 is always recorded");
    run_nve(provider, &structure.with_positions(last.positions.clone()), Some(last.velocities.clone()), cfg, label)
}

/// Edges of the structure's radius graph: the bonds watched by
/// [`stability_time`].
pub fn reference_bonds(structure: &Structure<f64>, cutoff: f64) -> Result<Vec<(usize, usize)>> {
    Ok(build_radius_graph(structure, cutoff)?.edges().collect())
}

/// Time (ps) of the first frame where some bond length differs from its
/// value in the first frame by more than `tolerance`. Aborted runs are
/// unstable at the abort time at the latest; otherwise the full duration.
pub fn stability_time(traj: &Trajectory, bonds: &[(usize, usize)], tolerance: f64) -> f64 {
    let Some(first) = traj.frames.first() else { return 0.0 };
    let initial: Vec<f64> = bonds.iter().map(|&(i, j)| distance(&first.positions[i], &first.positions[j])).collect();
    for fr in &traj.frames {
        let broken = bonds
            .iter()
            .zip(&initial)
            .any(|(&(i, j), d0)| (distance(&fr.positions[i], &fr.positions[j]) - d0).abs() > tolerance);
        if broken {
            return fr.time_fs / 1000.0;
        }
    }
    match traj.aborted_at_fs {
        Some(t) => t / 1000.0,
        None => traj.duration_ps(),
    }
}

/// Binned distribution of interatomic distances. `mass[b]` is the
/// probability of bin `b`, so the density is `mass / bin_width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub r_max: f64,
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.mass.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.r_max / self.mass.len() as f64
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..self.n_bins()).map(|b| (b as f64 + 0.5) * w).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }
}

fn frame_histogram(positions: &[Vec3<f64>], r_max: f64, n_bins: usize) -> Vec<f64> {
    let n = positions.len();
    let w = 1.0 / (n * (n - 1)) as f64;
    let width = r_max / n_bins as f64;
    let mut mass = vec![0.0; n_bins];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = distance(&positions[i], &positions[j]);
                let b = ((d / width) as usize).min(n_bins - 1);
                mass[b] += w;
            }
        }
    }
    mass
}

/// Time-averaged distance distribution over all ordered pairs. Distances
/// beyond `r_max` are counted in the last bin so each frame carries mass 1.
pub fn h_of_r(traj: &Trajectory, r_max: f64, n_bins: usize) -> Result<Histogram> {
    if traj.species.len() < 2 {
        return Err(Error::input("h(r) needs at least two atoms"));
    }
    if !(r_max > 0.0) || n_bins == 0 || traj.frames.is_empty() {
        return Err(Error::input("h(r) needs r_max > 0, n_bins >= 1 and at least one frame"));
    }
    let mut mass = vec![0.0; n_bins];
    for f in &traj.frames {
        for (m, x) in mass.iter_mut().zip(frame_histogram(&f.positions, r_max, n_bins)) {
            *m += x;
        }
    }
    let nf = traj.frames.len() as f64;
    mass.iter_mut().for_each(|m| *m /= nf);
    Ok(Histogram { r_max, mass })
}

/// `∫ |h(r) − ĥ(r)| dr`, discretised on the shared bins.
pub fn h_of_r_mae(predicted: &Histogram, reference: &Histogram) -> Result<f64> {
    if predicted.n_bins() != reference.n_bins() || predicted.r_max != reference.r_max {
        return Err(Error::input("h(r) histograms use different binning"));
    }
    Ok(predicted.mass.iter().zip(&reference.mass).map(|(a, b)| (a - b).abs()).sum())
}

/// `max_t |E_total(t) − E_total(0)|`.
pub fn nve_energy_deviation(traj: &Trajectory) -> f64 {
    let Some(e0) = traj.frames.first().map(|f| f.total_energy) else { return 0.0 };
    traj.frames.iter().map(|f| (f.total_energy - e0).abs()).fold(0.0, f64::max)
}
