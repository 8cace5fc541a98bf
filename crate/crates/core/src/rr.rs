//! Test-time radius refinement: pick the graph cutoff whose Laplacian
//! spectrum is closest to the training profile.

use crate::error::{Error, Result};
use crate::graph::structure_spectrum;
use crate::model::{Head, ModelForceField, ModelParams};
use crate::profile::TrainingProfile;
use crate::structure::Structure;

#[derive(Clone, Debug, PartialEq)]
pub struct RadiusChoice {
    pub best_cutoff: f64,
    /// `(cutoff, spectral distance)` per candidate, in candidate order.
    pub distances: Vec<(f64, f64)>,
}

impl RadiusChoice {
    pub fn best_distance(&self) -> f64 {
        self.distance_at(self.best_cutoff).expect("best cutoff is a candidate")
    }

    pub fn distance_at(&self, cutoff: f64) -> Option<f64> {
        self.distances.iter().find(|(c, _)| *c == cutoff).map(|(_, d)| *d)
    }
}

/// Ten cutoffs spread uniformly over `[0.7, 1.6] × train_cutoff` plus the
/// training cutoff itself, ascending and deduplicated.
pub fn default_candidates(train_cutoff: f64) -> Vec<f64> {
    let mut c: Vec<f64> = (0..10)
        .map(|k| train_cutoff * (7 + k) as f64 / 10.0)
        .filter(|c| (c - train_cutoff).abs() > 1e-12 * train_cutoff)
        .collect();
    c.push(train_cutoff);
    c.sort_by(f64::total_cmp);
    c
}

fn check_candidates(profile: &TrainingProfile, candidates: &[f64]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::input("radius refinement needs at least one candidate"));
    }
    if !candidates.contains(&profile.train_cutoff) {
        return Err(Error::input(format!(
            "candidates must include the training cutoff {}",
            profile.train_cutoff
        )));
    }
    Ok(())
}

/// Argmin over candidates; ties go to the candidate nearest the training
/// cutoff, then to the smaller radius.
fn argmin(distances: &[(f64, f64)], train_cutoff: f64) -> f64 {
    let key = |&(c, d): &(f64, f64)| (d, (c - train_cutoff).abs(), c);
    distances
        .iter()
        .min_by(|a, b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.total_cmp(&kb.2))
        })
        .expect("non-empty")
        .0
}

pub fn refine_radius(structure: &Structure<f64>, profile: &TrainingProfile, candidates: &[f64]) -> Result<RadiusChoice> {
    refine_radius_system(std::slice::from_ref(structure), profile, candidates)
}

/// One cutoff for a whole system: minimises the mean spectral distance of
/// its configurations.
pub fn refine_radius_system(
    structures: &[Structure<f64>],
    profile: &TrainingProfile,
    candidates: &[f64],
) -> Result<RadiusChoice> {
    check_candidates(profile, candidates)?;
    if structures.is_empty() {
        return Err(Error::input("radius refinement needs at least one structure"));
    }
    let distances = candidates
        .iter()
        .map(|&c| {
            let mut total = 0.0;
            for s in structures {
                total += profile.distance_to_mean(&structure_spectrum(s, c)?);
            }
            Ok((c, total / structures.len() as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RadiusChoice { best_cutoff: argmin(&distances, profile.train_cutoff), distances })
}

/// Main-head predictions on graphs and envelopes built at `best_cutoff`.
pub fn apply_refined_cutoff(params: &ModelParams<f64>, best_cutoff: f64) -> Result<ModelForceField<'_, f64>> {
    if !(best_cutoff > 0.0 && best_cutoff.is_finite()) {
        return Err(Error::input(format!("refined cutoff must be positive, got {best_cutoff}")));
    }
    Ok(ModelForceField::new(params, Head::Main).with_cutoff(best_cutoff))
}
