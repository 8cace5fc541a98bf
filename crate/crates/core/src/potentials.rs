//! Analytic potentials: the Lennard-Jones prior and the synthetic reference.
//!
//! The reference is a Morse pair potential with a short-range hard core plus
//! a cosine-harmonic three-body term. It plays the role of the expensive
//! ground truth; the Lennard-Jones prior is the cheap, imperfect surrogate.
//!
//! Species-pair parameters come from per-species values via Lorentz-Berthelot
//! style mixing: arithmetic mean for lengths and widths, geometric mean for
//! well depths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::envelope::envelope_with_derivative;
use crate::scalar::Real;
use crate::species::Species;
use crate::stats::mean_std;
use crate::structure::{dot, norm, sub, LabeledStructure, Labels, Structure, Vec3};

/// Anything that maps a configuration to a total energy and forces.
pub trait ForceProvider<T> {
    fn energy_forces(&self, species: &[Species], positions: &[Vec3<T>]) -> Result<(T, Vec<Vec3<T>>)>;

    fn label(&self, structure: &Structure<T>) -> Result<Labels<T>> {
        let (energy, forces) = self.energy_forces(&structure.species, &structure.positions)?;
        Ok(Labels { energy, forces })
    }
}

impl<T, P: ForceProvider<T> + ?Sized> ForceProvider<T> for &P {
    fn energy_forces(&self, species: &[Species], positions: &[Vec3<T>]) -> Result<(T, Vec<Vec3<T>>)> {
        (**self).energy_forces(species, positions)
    }
}

/// Per-species Lennard-Jones parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LjSpecies<T> {
    /// Well depth (eV).
    pub epsilon: T,
    /// Zero crossing (Å).
    pub sigma: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairParams<T> {
    pub species: BTreeMap<Species, LjSpecies<T>>,
}

impl<T: Real> PairParams<T> {
    pub fn uniform(species: &[Species], epsilon: T, sigma: T) -> Self {
        PairParams { species: species.iter().map(|s| (*s, LjSpecies { epsilon, sigma })).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        for (s, p) in &self.species {
            if !(p.epsilon > T::zero() && p.sigma > T::zero()) {
                return Err(Error::input(format!("Lennard-Jones parameters for {s} must be positive")));
            }
        }
        Ok(())
    }

    pub fn covers(&self, species: &[Species]) -> bool {
        species.iter().all(|s| self.species.contains_key(s))
    }

    /// Mixed `(epsilon, sigma)` for a species pair.
    pub fn pair(&self, a: Species, b: Species) -> Result<(T, T)> {
        let pa = self.get(a)?;
        let pb = self.get(b)?;
        Ok(((pa.epsilon * pb.epsilon).sqrt(), (pa.sigma + pb.sigma) * T::lit(0.5)))
    }

    fn get(&self, s: Species) -> Result<&LjSpecies<T>> {
        self.species.get(&s).ok_or_else(|| Error::input(format!("no Lennard-Jones parameters for {s}")))
    }
}

/// Per-species Morse parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseSpecies<T> {
    /// Well depth (eV).
    pub depth: T,
    /// Inverse width (1/Å).
    pub width: T,
    /// Equilibrium distance (Å).
    pub r0: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOracleParams<T> {
    pub morse: BTreeMap<Species, MorseSpecies<T>>,
    /// Strength (eV) of the `(r0/r − 1)³` core inside `r0`; makes the pair
    /// energy diverge as `r → 0` while leaving the Morse minimum untouched.
    pub core_repulsion: T,
    /// Three-body prefactor (eV).
    pub three_body_strength: T,
    /// Preferred bond-angle cosine.
    pub three_body_cos0: T,
    /// Bond length (Å) beyond which an arm no longer enters an angle term.
    pub three_body_cutoff: T,
}

impl<T: Real> ReferenceOracleParams<T> {
    pub fn validate(&self) -> Result<()> {
        for (s, m) in &self.morse {
            if !(m.depth > T::zero() && m.width > T::zero() && m.r0 > T::zero()) {
                return Err(Error::input(format!("Morse parameters for {s} must be positive")));
            }
        }
        if !(self.core_repulsion > T::zero()
            && self.three_body_strength > T::zero()
            && self.three_body_cutoff > T::zero())
        {
            return Err(Error::input("reference strengths and cutoff must be positive"));
        }
        if self.three_body_cos0.abs() > T::one() {
            return Err(Error::input("three_body_cos0 must lie in [-1, 1]"));
        }
        Ok(())
    }

    pub fn pair(&self, a: Species, b: Species) -> Result<MorseSpecies<T>> {
        let get = |s: Species| {
            self.morse.get(&s).ok_or_else(|| Error::input(format!("no Morse parameters for {s}")))
        };
        let (pa, pb) = (get(a)?, get(b)?);
        let half = T::lit(0.5);
        Ok(MorseSpecies {
            depth: (pa.depth * pb.depth).sqrt(),
            width: (pa.width + pb.width) * half,
            r0: (pa.r0 + pb.r0) * half,
        })
    }
}

/// Lennard-Jones dimer energy and `dE/dr`.
pub fn lj_pair<T: Real>(r: T, epsilon: T, sigma: T) -> (T, T) {
    let sr = sigma / r;
    let sr6 = sr.powi(6);
    let sr12 = sr6 * sr6;
    let four = T::lit(4.0);
    let e = four * epsilon * (sr12 - sr6);
    let de = four * epsilon * (T::lit(-12.0) * sr12 + T::lit(6.0) * sr6) / r;
    (e, de)
}

/// Morse plus hard-core pair energy and `dE/dr`.
pub fn reference_pair<T: Real>(r: T, m: &MorseSpecies<T>, core: T) -> (T, T) {
    let one = T::one();
    let two = T::lit(2.0);
    let x = (-(m.width * (r - m.r0))).exp();
    let mut e = m.depth * ((one - x) * (one - x) - one);
    let mut de = two * m.depth * m.width * (one - x) * x;
    if r < m.r0 {
        let q = m.r0 / r - one;
        e += core * q * q * q;
        de += -T::lit(3.0) * core * q * q * m.r0 / (r * r);
    }
    (e, de)
}

fn check_inputs<T: Real>(species: &[Species], positions: &[Vec3<T>]) -> Result<()> {
    if species.len() != positions.len() {
        return Err(Error::input("species and positions differ in length"));
    }
    Ok(())
}

fn pair_distance<T: Real>(positions: &[Vec3<T>], i: usize, j: usize) -> Result<(Vec3<T>, T)> {
    let d = sub(&positions[i], &positions[j]);
    let r = norm(&d);
    if !(r > T::lit(1e-12)) {
        return Err(Error::input(format!("atoms {i} and {j} coincide")));
    }
    Ok((d, r))
}

/// Adds the pair force `−dE/dr · r̂` to both atoms.
#[inline]
fn apply_pair<T: Real>(forces: &mut [Vec3<T>], i: usize, j: usize, d: &Vec3<T>, r: T, de: T) {
    for k in 0..3 {
        let f = -de * d[k] / r;
        forces[i][k] += f;
        forces[j][k] -= f;
    }
}

pub fn lj_energy_forces<T: Real>(
    species: &[Species],
    positions: &[Vec3<T>],
    params: &PairParams<T>,
) -> Result<(T, Vec<Vec3<T>>)> {
    check_inputs(species, positions)?;
    let n = positions.len();
    let mut energy = T::zero();
    let mut forces = vec![[T::zero(); 3]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (d, r) = pair_distance(positions, i, j)?;
            let (eps, sigma) = params.pair(species[i], species[j])?;
            let (e, de) = lj_pair(r, eps, sigma);
            energy += e;
            apply_pair(&mut forces, i, j, &d, r, de);
        }
    }
    Ok((energy, forces))
}

pub fn reference_energy_forces<T: Real>(
    species: &[Species],
    positions: &[Vec3<T>],
    params: &ReferenceOracleParams<T>,
) -> Result<(T, Vec<Vec3<T>>)> {
    check_inputs(species, positions)?;
    let n = positions.len();
    let mut energy = T::zero();
    let mut forces = vec![[T::zero(); 3]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (d, r) = pair_distance(positions, i, j)?;
            let m = params.pair(species[i], species[j])?;
            let (e, de) = reference_pair(r, &m, params.core_repulsion);
            energy += e;
            apply_pair(&mut forces, i, j, &d, r, de);
        }
    }

    // k3 (cosθ − cos0)² u(|a|) u(|b|) over angles a-j-b centred on j
    let rc = params.three_body_cutoff;
    let k3 = params.three_body_strength;
    let two = T::lit(2.0);
    for j in 0..n {
        let arms: Vec<(usize, Vec3<T>, T)> = (0..n)
            .filter(|&i| i != j)
            .filter_map(|i| {
                let a = sub(&positions[i], &positions[j]);
                let r = norm(&a);
                (r < rc).then_some((i, a, r))
            })
            .collect();
        for x in 0..arms.len() {
            for y in x + 1..arms.len() {
                let (i, a, ra) = arms[x];
                let (k, b, rb) = arms[y];
                let (ua, dua) = envelope_with_derivative(ra, rc);
                let (ub, dub) = envelope_with_derivative(rb, rc);
                let cos = dot(&a, &b) / (ra * rb);
                let dc = cos - params.three_body_cos0;
                energy += k3 * dc * dc * ua * ub;
                let de_dcos = two * k3 * dc * ua * ub;
                let de_dra = k3 * dc * dc * dua * ub;
                let de_drb = k3 * dc * dc * ua * dub;
                for c in 0..3 {
                    let dcos_da = b[c] / (ra * rb) - cos * a[c] / (ra * ra);
                    let dcos_db = a[c] / (ra * rb) - cos * b[c] / (rb * rb);
                    let ga = de_dcos * dcos_da + de_dra * a[c] / ra;
                    let gb = de_dcos * dcos_db + de_drb * b[c] / rb;
                    forces[i][c] -= ga;
                    forces[k][c] -= gb;
                    forces[j][c] += ga + gb;
                }
            }
        }
    }
    Ok((energy, forces))
}

impl<T: Real> ForceProvider<T> for PairParams<T> {
    fn energy_forces(&self, species: &[Species], positions: &[Vec3<T>]) -> Result<(T, Vec<Vec3<T>>)> {
        lj_energy_forces(species, positions, self)
    }
}

impl<T: Real> ForceProvider<T> for ReferenceOracleParams<T> {
    fn energy_forces(&self, species: &[Species], positions: &[Vec3<T>]) -> Result<(T, Vec<Vec3<T>>)> {
        reference_energy_forces(species, positions, self)
    }
}

/// Population mean and std of all per-atom force norms.
pub fn force_norm_stats(labeled: &[LabeledStructure<f64>]) -> Result<(f64, f64)> {
    if labeled.is_empty() {
        return Err(Error::input("force norm statistics need at least one structure"));
    }
    let norms: Vec<f64> = labeled.iter().flat_map(|l| l.forces.iter().map(norm)).collect();
    Ok(mean_std(&norms))
}

/// Mean per-atom force norm of one configuration under `provider`.
pub fn mean_force_norm<P: ForceProvider<f64>>(provider: &P, structure: &Structure<f64>) -> Result<f64> {
    let (_, f) = provider.energy_forces(&structure.species, &structure.positions)?;
    Ok(f.iter().map(norm).sum::<f64>() / f.len() as f64)
}
