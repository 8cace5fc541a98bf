//! Molecular configurations and their energy/force labels.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::species::Species;

pub type Vec3<T> = [T; 3];

#[inline]
pub fn sub<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm<T: Real>(a: &Vec3<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn distance<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    norm(&sub(a, b))
}

/// One non-periodic molecular configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Structure<T> {
    pub species: Vec<Species>,
    /// Cartesian positions in Å.
    pub positions: Vec<Vec3<T>>,
    pub structure_id: String,
    /// Molecule identity shared by all configurations of one system.
    pub system_id: String,
}

impl<T: Real> Structure<T> {
    pub fn new(
        species: Vec<Species>,
        positions: Vec<Vec3<T>>,
        structure_id: impl Into<String>,
        system_id: impl Into<String>,
    ) -> Result<Self> {
        let s = Structure {
            species,
            positions,
            structure_id: structure_id.into(),
            system_id: system_id.into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.species.is_empty() {
            return Err(Error::input(format!("structure `{}` has no atoms", self.structure_id)));
        }
        if self.species.len() != self.positions.len() {
            return Err(Error::input(format!(
                "structure `{}`: {} species but {} positions",
                self.structure_id,
                self.species.len(),
                self.positions.len()
            )));
        }
        if let Some(i) = self.positions.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::input(format!(
                "structure `{}`: non-finite coordinate on atom {i}",
                self.structure_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }

    /// Same atoms at new positions.
    pub fn with_positions(&self, positions: Vec<Vec3<T>>) -> Self {
        Structure { positions, ..self.clone() }
    }

    pub fn centroid(&self) -> Vec3<T> {
        let n = T::lit(self.len() as f64);
        let mut c = [T::zero(); 3];
        for p in &self.positions {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|x| x / n)
    }

    /// Scales all positions about the centroid.
    pub fn scaled(&self, factor: T) -> Self {
        let c = self.centroid();
        let positions = self
            .positions
            .iter()
            .map(|p| [0, 1, 2].map(|k| c[k] + (p[k] - c[k]) * factor))
            .collect();
        self.with_positions(positions)
    }

    /// Fraction of atoms per species.
    pub fn composition(&self) -> BTreeMap<Species, f64> {
        let mut counts = BTreeMap::new();
        for s in &self.species {
            *counts.entry(*s).or_insert(0.0) += 1.0;
        }
        let n = self.len() as f64;
        counts.values_mut().for_each(|c| *c /= n);
        counts
    }

    pub fn min_pair_distance(&self) -> Option<T> {
        let mut best: Option<T> = None;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let d = distance(&self.positions[i], &self.positions[j]);
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best
    }

    pub fn cast<U: Real>(&self) -> Structure<U> {
        Structure {
            species: self.species.clone(),
            positions: self.positions.iter().map(|p| p.map(|x| U::lit(x.value()))).collect(),
            structure_id: self.structure_id.clone(),
            system_id: self.system_id.clone(),
        }
    }
}

/// Where a set of labels came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelSource {
    /// Expensive ground truth (main task).
    Reference,
    /// Cheap surrogate potential (prior task).
    Prior,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::Reference => "reference",
            LabelSource::Prior => "prior",
        })
    }
}

impl FromStr for LabelSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(LabelSource::Reference),
            "prior" => Ok(LabelSource::Prior),
            other => Err(Error::input(format!("unknown label source `{other}`"))),
        }
    }
}

/// Total energy (eV) and per-atom forces (eV/Å).
#[derive(Clone, Debug, PartialEq)]
pub struct Labels<T> {
    pub energy: T,
    pub forces: Vec<Vec3<T>>,
}

impl<T: Real> Labels<T> {
    pub fn force_norms(&self) -> impl Iterator<Item = T> + '_ {
        self.forces.iter().map(norm)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledStructure<T> {
    pub structure: Structure<T>,
    pub energy: T,
    pub forces: Vec<Vec3<T>>,
    pub label_source: LabelSource,
}

impl<T: Real> LabeledStructure<T> {
    pub fn new(structure: Structure<T>, labels: Labels<T>, label_source: LabelSource) -> Result<Self> {
        if labels.forces.len() != structure.len() {
            return Err(Error::input(format!(
                "structure `{}`: {} force rows for {} atoms",
                structure.structure_id,
                labels.forces.len(),
                structure.len()
            )));
        }
        Ok(LabeledStructure { structure, energy: labels.energy, forces: labels.forces, label_source })
    }

    pub fn labels(&self) -> Labels<T> {
        Labels { energy: self.energy, forces: self.forces.clone() }
    }
}

/// A structure with the reference and/or prior labels side by side.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub structure: Structure<T>,
    pub reference: Option<Labels<T>>,
    pub prior: Option<Labels<T>>,
}

impl<T: Real> Sample<T> {
    pub fn labels(&self, source: LabelSource) -> Option<&Labels<T>> {
        match source {
            LabelSource::Reference => self.reference.as_ref(),
            LabelSource::Prior => self.prior.as_ref(),
        }
    }

    /// Flattens into one labeled record per available label source.
    pub fn to_labeled(&self) -> Vec<LabeledStructure<T>> {
        [LabelSource::Reference, LabelSource::Prior]
            .into_iter()
            .filter_map(|src| {
                self.labels(src).map(|l| LabeledStructure {
                    structure: self.structure.clone(),
                    energy: l.energy,
                    forces: l.forces.clone(),
                    label_source: src,
                })
            })
            .collect()
    }
}

/// Groups labeled records by `structure_id` so that reference and prior
/// labels of the same configuration end up in one [`Sample`]. Order follows
/// first appearance.
pub fn pair_labels<T: Real>(records: &[LabeledStructure<T>]) -> Vec<Sample<T>> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out: Vec<Sample<T>> = Vec::new();
    for r in records {
        let slot = *index.entry(r.structure.structure_id.as_str()).or_insert_with(|| {
            out.push(Sample { structure: r.structure.clone(), reference: None, prior: None });
            out.len() - 1
        });
        let labels = Some(r.labels());
        match r.label_source {
            LabelSource::Reference => out[slot].reference = labels,
            LabelSource::Prior => out[slot].prior = labels,
        }
    }
    out
}
