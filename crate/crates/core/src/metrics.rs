//! Prediction error metrics.

use crate::error::{Error, Result};
use crate::potentials::ForceProvider;
use crate::structure::{Labels, Structure, Vec3};

/// Mean absolute error over all force components.
pub fn force_mae(predicted: &[Vec3<f64>], reference: &[Vec3<f64>]) -> Result<f64> {
    if predicted.len() != reference.len() || predicted.is_empty() {
        return Err(Error::input(format!(
            "force MAE needs equal non-empty arrays, got {} and {}",
            predicted.len(),
            reference.len()
        )));
    }
    let total: f64 = predicted
        .iter()
        .zip(reference)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).sum::<f64>())
        .sum();
    Ok(total / (3 * predicted.len()) as f64)
}

/// Errors of one provider on one labeled structure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureError {
    pub force_mae: f64,
    pub energy_abs: f64,
}

pub fn structure_error<P: ForceProvider<f64>>(
    provider: &P,
    structure: &Structure<f64>,
    labels: &Labels<f64>,
) -> Result<StructureError> {
    let (e, f) = provider.energy_forces(&structure.species, &structure.positions)?;
    Ok(StructureError { force_mae: force_mae(&f, &labels.forces)?, energy_abs: (e - labels.energy).abs() })
}

/// Force MAE pooled over all atoms of a set (each component weighs the same).
pub fn dataset_force_mae<'a, P, I>(provider: &P, items: I) -> Result<f64>
where
    P: ForceProvider<f64>,
    I: IntoIterator<Item = (&'a Structure<f64>, &'a Labels<f64>)>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for (s, l) in items {
        let (_, f) = provider.energy_forces(&s.species, &s.positions)?;
        total += force_mae(&f, &l.forces)? * (3 * s.len()) as f64;
        count += 3 * s.len();
    }
    if count == 0 {
        return Err(Error::input("force MAE of an empty set"));
    }
    Ok(total / count as f64)
}
