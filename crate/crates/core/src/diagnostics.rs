//! Shift diagnosis along atomic features, force norm and connectivity, and
//! binned error-versus-shift tables.
//!
//! A structure is out of distribution on an axis when its measure lies more
//! than one standard deviation from the training mean (spectral distance:
//! above `mean + std`). Force norms are taken from the prior, never from
//! reference labels.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{force_mae, structure_error};
use crate::potentials::{mean_force_norm, ForceProvider, PairParams};
use crate::profile::TrainingProfile;
use crate::structure::{Sample, Structure};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShiftReport {
    pub structure_id: String,
    pub n_atoms: usize,
    pub unseen_element: bool,
    pub size_ood: bool,
    /// Some seen species' atom fraction is more than 1 σ off its training
    /// mean.
    pub composition_ood: bool,
    /// `None` when the prior cannot evaluate the structure.
    pub force_norm_ood: Option<bool>,
    pub connectivity_ood: bool,
    pub spectral_distance: f64,
    pub prior_force_norm: Option<f64>,
}

impl ShiftReport {
    pub fn atomic_feature_ood(&self) -> bool {
        self.unseen_element || self.size_ood || self.composition_ood
    }

    pub fn is_ood(&self, axis: ShiftAxis) -> bool {
        match axis {
            ShiftAxis::ForceNorm => self.force_norm_ood.unwrap_or(false),
            ShiftAxis::Connectivity => self.connectivity_ood,
            ShiftAxis::Size => self.atomic_feature_ood(),
        }
    }

    pub fn measure(&self, axis: ShiftAxis) -> Option<f64> {
        match axis {
            ShiftAxis::ForceNorm => self.prior_force_norm,
            ShiftAxis::Connectivity => Some(self.spectral_distance),
            ShiftAxis::Size => Some(self.n_atoms as f64),
        }
    }
}

pub fn diagnose(structure: &Structure<f64>, profile: &TrainingProfile, prior: &PairParams<f64>) -> Result<ShiftReport> {
    let n = structure.len();
    let unseen_element = structure.species.iter().any(|s| !profile.seen_elements.contains(s));
    let size_ood = (n as f64 - profile.size_mean).abs() > profile.size_std;
    let fractions = structure.composition();
    let composition_ood = profile.composition.iter().any(|(s, (mean, std))| {
        let f = fractions.get(s).copied().unwrap_or(0.0);
        (f - mean).abs() > *std
    });
    let prior_force_norm =
        if prior.covers(&structure.species) { Some(mean_force_norm(prior, structure)?) } else { None };
    let force_norm_ood = prior_force_norm.map(|f| (f - profile.force_norm_mean).abs() > profile.force_norm_std);
    let spectral_distance = profile.structure_distance(structure, profile.train_cutoff)?;
    Ok(ShiftReport {
        structure_id: structure.structure_id.clone(),
        n_atoms: n,
        unseen_element,
        size_ood,
        composition_ood,
        force_norm_ood,
        connectivity_ood: spectral_distance > profile.spectral_distance_mean + profile.spectral_distance_std,
        spectral_distance,
        prior_force_norm,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftAxis {
    ForceNorm,
    Connectivity,
    /// Atom count; its OOD flag covers all atomic-feature shifts.
    Size,
}

impl ShiftAxis {
    pub const ALL: [ShiftAxis; 3] = [ShiftAxis::ForceNorm, ShiftAxis::Connectivity, ShiftAxis::Size];

    pub fn name(self) -> &'static str {
        match self {
            ShiftAxis::ForceNorm => "force_norm",
            ShiftAxis::Connectivity => "connectivity",
            ShiftAxis::Size => "size",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShiftBin {
    pub axis: ShiftAxis,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean per-structure force MAE, 0 for an empty bin.
    pub mean_force_mae: f64,
}

/// Mean force MAE of in- and out-of-distribution structures on one axis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxisComparison {
    pub axis: ShiftAxis,
    pub id_count: usize,
    pub id_mae: Option<f64>,
    pub ood_count: usize,
    pub ood_mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftTable {
    pub reports: Vec<ShiftReport>,
    pub maes: Vec<f64>,
    pub bins: Vec<ShiftBin>,
}

impl ShiftTable {
    /// In/out comparison on `axis`. With `isolate`, structures that are OOD
    /// on another axis are left out.
    pub fn compare(&self, axis: ShiftAxis, isolate: bool) -> AxisComparison {
        let (mut id, mut ood) = (Vec::new(), Vec::new());
        for (r, &m) in self.reports.iter().zip(&self.maes) {
            let other = ShiftAxis::ALL.iter().any(|&a| a != axis && r.is_ood(a));
            if isolate && other {
                continue;
            }
            if r.is_ood(axis) { ood.push(m) } else { id.push(m) }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        AxisComparison { axis, id_count: id.len(), id_mae: mean(&id), ood_count: ood.len(), ood_mae: mean(&ood) }
    }
}

/// Diagnoses every structure, evaluates `model` against reference labels and
/// bins the per-structure force MAE along each shift axis into `n_bins`
/// equal-width bins spanning the observed range.
pub fn error_vs_shift_table<P: ForceProvider<f64>>(
    model: &P,
    test: &[Sample<f64>],
    profile: &TrainingProfile,
    prior: &PairParams<f64>,
    n_bins: usize,
) -> Result<ShiftTable> {
    if n_bins == 0 {
        return Err(Error::input("n_bins must be at least 1"));
    }
    let mut reports = Vec::with_capacity(test.len());
    let mut maes = Vec::with_capacity(test.len());
    for s in test {
        let labels = s.reference.as_ref().ok_or_else(|| {
            Error::input(format!("structure `{}` has no reference labels", s.structure.structure_id))
        })?;
        reports.push(diagnose(&s.structure, profile, prior)?);
        maes.push(structure_error(model, &s.structure, labels)?.force_mae);
    }
    let mut bins = Vec::new();
    for axis in ShiftAxis::ALL {
        let values: Vec<(f64, f64)> =
            reports.iter().zip(&maes).filter_map(|(r, &m)| r.measure(axis).map(|x| (x, m))).collect();
        let lo = values.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
        let hi = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if values.is_empty() { (0.0, 0.0) } else { (lo, hi) };
        let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 0.0 };
        let mut sums = vec![(0usize, 0.0); n_bins];
        for (x, m) in &values {
            let b = if width > 0.0 { (((x - lo) / width) as usize).min(n_bins - 1) } else { 0 };
            sums[b].0 += 1;
            sums[b].1 += m;
        }
        for (b, (count, total)) in sums.into_iter().enumerate() {
            bins.push(ShiftBin {
                axis,
                bin: b,
                lo: lo + b as f64 * width,
                hi: if width > 0.0 { lo + (b + 1) as f64 * width } else { hi },
                count,
                mean_force_mae: if count > 0 { total / count as f64 } else { 0.0 },
            });
        }
    }
    Ok(ShiftTable { reports, maes, bins })
}

/// Force MAE of a prediction against the sample's reference labels.
pub fn sample_force_mae(predicted: &[[f64; 3]], sample: &Sample<f64>) -> Result<f64> {
    let labels = sample.reference.as_ref().ok_or_else(|| Error::input("sample has no reference labels"))?;
    force_mae(predicted, &labels.forces)
}
