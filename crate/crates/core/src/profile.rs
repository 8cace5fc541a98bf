//! Summary statistics of a training set used for shift detection and
//! radius refinement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{pad_spectrum, spectral_distance, structure_spectrum, Spectrum};
use crate::species::Species;
use crate::stats::mean_std;
use crate::structure::{norm, LabeledStructure, Structure};

pub const PROFILE_FORMAT: &str = "ttr-training-profile";
pub const PROFILE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingProfile {
    /// Element-wise mean of the zero-padded training spectra; the length is
    /// the largest training graph.
    pub mean_spectrum: Vec<f64>,
    pub spectral_distance_mean: f64,
    pub spectral_distance_std: f64,
    /// Per-atom force norm statistics (eV/Å).
    pub force_norm_mean: f64,
    pub force_norm_std: f64,
    pub size_mean: f64,
    pub size_std: f64,
    pub seen_elements: BTreeSet<Species>,
    /// Mean and std of each seen species' atom fraction per structure.
    pub composition: BTreeMap<Species, (f64, f64)>,
    pub train_cutoff: f64,
}

impl TrainingProfile {
    pub fn max_size(&self) -> usize {
        self.mean_spectrum.len()
    }

    /// Squared spectral distance of `spectrum` to the mean training spectrum,
    /// padding whichever side is shorter.
    pub fn distance_to_mean(&self, spectrum: &Spectrum<f64>) -> f64 {
        let len = self.mean_spectrum.len().max(spectrum.len());
        let mut mean = self.mean_spectrum.clone();
        mean.resize(len, 0.0);
        let padded = pad_spectrum(spectrum, len).expect("len is the max");
        spectral_distance(&mean, &padded).expect("equal lengths")
    }

    pub fn structure_distance(&self, structure: &Structure<f64>, cutoff: f64) -> Result<f64> {
        Ok(self.distance_to_mean(&structure_spectrum(structure, cutoff)?))
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        writeln!(s, "format={PROFILE_FORMAT}").unwrap();
        writeln!(s, "version={PROFILE_VERSION}").unwrap();
        writeln!(s, "train_cutoff={}", self.train_cutoff).unwrap();
        writeln!(s, "mean_spectrum={}", join(&self.mean_spectrum)).unwrap();
        writeln!(s, "spectral_distance_mean={}", self.spectral_distance_mean).unwrap();
        writeln!(s, "spectral_distance_std={}", self.spectral_distance_std).unwrap();
        writeln!(s, "force_norm_mean={}", self.force_norm_mean).unwrap();
        writeln!(s, "force_norm_std={}", self.force_norm_std).unwrap();
        writeln!(s, "size_mean={}", self.size_mean).unwrap();
        writeln!(s, "size_std={}", self.size_std).unwrap();
        let seen: Vec<&str> = self.seen_elements.iter().map(|e| e.symbol()).collect();
        writeln!(s, "seen_elements={}", seen.join(",")).unwrap();
        let comp: Vec<String> =
            self.composition.iter().map(|(e, (m, sd))| format!("{e}:{m}:{sd}")).collect();
        writeln!(s, "composition={}", comp.join(",")).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::input(format!("profile line {}: expected key=value", i + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::input(format!("profile is missing `{k}`")));
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::input(format!("profile field `{k}` is not a number")))
        };
        if get("format")? != PROFILE_FORMAT {
            return Err(Error::input("not a training profile file"));
        }
        let version: u32 = get("version")?.parse().map_err(|_| Error::input("bad profile version"))?;
        if version != PROFILE_VERSION {
            return Err(Error::input(format!("unsupported profile version {version}")));
        }
        let mean_spectrum = split_list(get("mean_spectrum")?)
            .map(|x| x.parse::<f64>().map_err(|_| Error::input("bad mean_spectrum entry")))
            .collect::<Result<Vec<_>>>()?;
        let seen_elements = split_list(get("seen_elements")?)
            .map(str::parse)
            .collect::<Result<BTreeSet<Species>>>()?;
        let mut composition = BTreeMap::new();
        for item in split_list(get("composition")?) {
            let parts: Vec<&str> = item.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::input(format!("bad composition entry `{item}`")));
            }
            let m = parts[1].parse().map_err(|_| Error::input("bad composition mean"))?;
            let sd = parts[2].parse().map_err(|_| Error::input("bad composition std"))?;
            composition.insert(parts[0].parse()?, (m, sd));
        }
        let p = TrainingProfile {
            mean_spectrum,
            spectral_distance_mean: num("spectral_distance_mean")?,
            spectral_distance_std: num("spectral_distance_std")?,
            force_norm_mean: num("force_norm_mean")?,
            force_norm_std: num("force_norm_std")?,
            size_mean: num("size_mean")?,
            size_std: num("size_std")?,
            seen_elements,
            composition,
            train_cutoff: num("train_cutoff")?,
        };
        if p.seen_elements.is_empty() {
            return Err(Error::input("profile has no seen elements"));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&crate::io::read_text(path)?)
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

/// Builds the profile from labeled training structures; spectra are padded
/// to the largest training graph before averaging.
pub fn build_training_profile(dataset: &[LabeledStructure<f64>], cutoff: f64) -> Result<TrainingProfile> {
    if dataset.is_empty() {
        return Err(Error::input("cannot build a training profile from an empty dataset"));
    }
    let spectra = dataset
        .iter()
        .map(|d| structure_spectrum(&d.structure, cutoff))
        .collect::<Result<Vec<_>>>()?;
    let max_len = spectra.iter().map(Spectrum::len).max().unwrap_or(0);
    let padded: Vec<Vec<f64>> =
        spectra.iter().map(|s| pad_spectrum(s, max_len)).collect::<Result<_>>()?;
    let mut mean_spectrum = vec![0.0; max_len];
    for p in &padded {
        for (m, x) in mean_spectrum.iter_mut().zip(p) {
            *m += x;
        }
    }
    let count = padded.len() as f64;
    mean_spectrum.iter_mut().for_each(|m| *m /= count);

    let dists: Vec<f64> =
        padded.iter().map(|p| spectral_distance(p, &mean_spectrum)).collect::<Result<_>>()?;
    let (spectral_distance_mean, spectral_distance_std) = mean_std(&dists);

    let norms: Vec<f64> = dataset.iter().flat_map(|d| d.forces.iter().map(norm)).collect();
    let (force_norm_mean, force_norm_std) = mean_std(&norms);

    let sizes: Vec<f64> = dataset.iter().map(|d| d.structure.len() as f64).collect();
    let (size_mean, size_std) = mean_std(&sizes);

    let seen_elements: BTreeSet<Species> =
        dataset.iter().flat_map(|d| d.structure.species.iter().copied()).collect();
    let fractions: Vec<BTreeMap<Species, f64>> =
        dataset.iter().map(|d| d.structure.composition()).collect();
    let composition = seen_elements
        .iter()
        .map(|e| {
            let xs: Vec<f64> = fractions.iter().map(|f| f.get(e).copied().unwrap_or(0.0)).collect();
            (*e, mean_std(&xs))
        })
        .collect();

    Ok(TrainingProfile {
        mean_spectrum,
        spectral_distance_mean,
        spectral_distance_std,
        force_norm_mean,
        force_norm_std,
        size_mean,
        size_std,
        seen_elements,
        composition,
        train_cutoff: cutoff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{LabelSource, Labels};

    fn labeled(pos: Vec<[f64; 3]>, id: &str) -> LabeledStructure<f64> {
        let c: Species = "C".parse().unwrap();
        let n = pos.len();
        let s = Structure::new(vec![c; n], pos, id, "sys").unwrap();
        LabeledStructure::new(s, Labels { energy: 0.0, forces: vec![[1.0, 0.0, 0.0]; n] }, LabelSource::Reference)
            .unwrap()
    }

    #[test]
    fn single_structure_has_zero_spread() {
        let d = vec![labeled(vec![[0.0; 3], [1.0, 0.0, 0.0]], "a")];
        let p = build_training_profile(&d, 1.5).unwrap();
        assert_eq!(p.spectral_distance_mean, 0.0);
        assert_eq!(p.spectral_distance_std, 0.0);
        assert_eq!(p.mean_spectrum.len(), 2);
    }

    #[test]
    fn identical_structures_give_their_spectrum() {
        let pos = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.5, 0.8, 0.0]];
        let d = vec![labeled(pos.clone(), "a"), labeled(pos.clone(), "b")];
        let p = build_training_profile(&d, 1.2).unwrap();
        let s = structure_spectrum(&d[0].structure, 1.2).unwrap();
        assert_eq!(p.mean_spectrum, s.eigenvalues);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(build_training_profile(&[], 1.0).is_err());
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let d = vec![
            labeled(vec![[0.0; 3], [1.0, 0.0, 0.0]], "a"),
            labeled(vec![[0.0; 3], [1.1, 0.0, 0.0], [0.3, 0.9, 0.1]], "b"),
        ];
        let p = build_training_profile(&d, 1.2).unwrap();
        let q = TrainingProfile::from_text(&p.to_text()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_wrong_version() {
        let d = vec![labeled(vec![[0.0; 3]], "a")];
        let text = build_training_profile(&d, 1.0).unwrap().to_text().replace("version=1", "version=9");
        assert!(TrainingProfile::from_text(&text).is_err());
    }
}
