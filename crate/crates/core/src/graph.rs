//! Radius graphs, normalized Laplacian spectra and spectral distances.
//!
//! Spectra are kept sorted in descending order so that zero padding at the
//! tail never breaks sortedness. Isolated atoms get a zero diagonal entry in
//! the Laplacian, which makes every connected component (including a single
//! isolated atom) contribute exactly one zero eigenvalue.

use crate::eigen::jacobi_eigenvalues;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::structure::{distance, Structure};

/// Eigenvalues below this count as zero when counting components.
pub const ZERO_EIGENVALUE_THRESHOLD: f64 = 1e-8;

/// Cutoff-induced adjacency of one structure, as ascending neighbor lists.
#[derive(Clone, Debug, PartialEq)]
pub struct RadiusGraph<T> {
    pub cutoff: T,
    pub neighbors: Vec<Vec<usize>>,
}

impl<T: Real> RadiusGraph<T> {
    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.n() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                for &j in &self.neighbors[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }
}

pub fn build_radius_graph<T: Real>(structure: &Structure<T>, cutoff: T) -> Result<RadiusGraph<T>> {
    if !(cutoff > T::zero()) || !cutoff.is_finite() {
        return Err(Error::input(format!("cutoff must be positive and finite, got {cutoff}")));
    }
    structure.validate()?;
    let n = structure.len();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if distance(&structure.positions[i], &structure.positions[j]) <= cutoff {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    neighbors.iter_mut().for_each(|nb| nb.sort_unstable());
    Ok(RadiusGraph { cutoff, neighbors })
}

/// Eigenvalues of a normalized Laplacian, sorted descending.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    pub eigenvalues: Vec<T>,
    /// Size of the source graph.
    pub n: usize,
}

impl<T: Real> Spectrum<T> {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn zero_multiplicity(&self) -> usize {
        let thr = T::lit(ZERO_EIGENVALUE_THRESHOLD);
        self.eigenvalues.iter().filter(|&&l| l < thr).count()
    }

    pub fn padded(&self, target_len: usize) -> Result<Vec<T>> {
        pad_spectrum(self, target_len)
    }
}

/// Dense `I − D^{-1/2} A D^{-1/2}` with zero rows for isolated nodes.
pub fn normalized_laplacian<T: Real>(graph: &RadiusGraph<T>) -> Vec<T> {
    let n = graph.n();
    let deg: Vec<T> = graph.degrees().into_iter().map(|d| T::lit(d as f64)).collect();
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        if graph.neighbors[i].is_empty() {
            continue;
        }
        l[i * n + i] = T::one();
        for &j in &graph.neighbors[i] {
            l[i * n + j] = -T::one() / (deg[i] * deg[j]).sqrt();
        }
    }
    l
}

pub fn laplacian_spectrum<T: Real>(graph: &RadiusGraph<T>) -> Result<Spectrum<T>> {
    let n = graph.n();
    let mut eigenvalues = jacobi_eigenvalues(&normalized_laplacian(graph), n)?;
    // The matrix is positive semidefinite; negatives are roundoff and would
    // sort below the zero padding.
    for l in eigenvalues.iter_mut() {
        if *l < T::zero() {
            *l = T::zero();
        }
    }
    eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(Spectrum { eigenvalues, n })
}

/// Spectrum of `structure`'s radius graph at `cutoff`.
pub fn structure_spectrum<T: Real>(structure: &Structure<T>, cutoff: T) -> Result<Spectrum<T>> {
    laplacian_spectrum(&build_radius_graph(structure, cutoff)?)
}

/// Descending eigenvalues followed by trailing zeros up to `target_len`.
pub fn pad_spectrum<T: Real>(spectrum: &Spectrum<T>, target_len: usize) -> Result<Vec<T>> {
    if target_len < spectrum.len() {
        return Err(Error::input(format!(
            "cannot pad a spectrum of length {} to {target_len}",
            spectrum.len()
        )));
    }
    let mut v = spectrum.eigenvalues.clone();
    v.resize(target_len, T::zero());
    Ok(v)
}

/// Squared spectral distance `Σ_k (a_k − b_k)²` between padded spectra.
pub fn spectral_distance<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "spectral distance needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum())
}

/// Spectral distance after padding both spectra to the longer length.
pub fn pairwise_spectral_distance<T: Real>(a: &Spectrum<T>, b: &Spectrum<T>) -> T {
    let len = a.len().max(b.len());
    let pa = pad_spectrum(a, len).expect("len is the max");
    let pb = pad_spectrum(b, len).expect("len is the max");
    spectral_distance(&pa, &pb).expect("equal lengths")
}

/// Number of training spectra within `epsilon` (squared spectral distance)
/// of `test`.
pub fn count_within_cutoff<T: Real>(test: &Spectrum<T>, training: &[Spectrum<T>], epsilon: T) -> Result<usize> {
    if epsilon < T::zero() || !epsilon.is_finite() {
        return Err(Error::input(format!("epsilon must be non-negative, got {epsilon}")));
    }
    Ok(training.iter().filter(|s| pairwise_spectral_distance(test, s) <= epsilon).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::species::Species;

    fn structure(pos: Vec<[f64; 3]>) -> Structure<f64> {
        let c: Species = "C".parse().unwrap();
        Structure::new(vec![c; pos.len()], pos, "t", "t").unwrap()
    }

    fn triangle() -> Structure<f64> {
        structure(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 3f64.sqrt() / 2.0, 0.0]])
    }

    #[test]
    fn dimer_edges_follow_cutoff() {
        let s = structure(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let g = build_radius_graph(&s, 1.5).unwrap();
        assert_eq!(g.degrees(), vec![1, 1]);
        let g = build_radius_graph(&s, 0.5).unwrap();
        assert_eq!(g.degrees(), vec![0, 0]);
    }

    #[test]
    fn triangle_is_complete() {
        let g = build_radius_graph(&triangle(), 1.2).unwrap();
        assert_eq!(g.degrees(), vec![2, 2, 2]);
        assert_eq!(g.neighbors[0], vec![1, 2]);
    }

    #[test]
    fn bad_cutoff_and_coordinates() {
        let s = structure(vec![[0.0; 3]]);
        assert!(build_radius_graph(&s, 0.0).is_err());
        let mut bad = s.clone();
        bad.positions[0][1] = f64::INFINITY;
        assert!(build_radius_graph(&bad, 1.0).is_err());
    }

    #[test]
    fn small_spectra() {
        let iso = structure(vec![[0.0; 3], [5.0, 0.0, 0.0]]);
        let s = structure_spectrum(&iso, 1.0).unwrap();
        assert_eq!(s.eigenvalues, vec![0.0, 0.0]);

        let k2 = structure(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let s = structure_spectrum(&k2, 1.5).unwrap();
        assert!((s.eigenvalues[0] - 2.0).abs() < 1e-14 && s.eigenvalues[1].abs() < 1e-14);

        // K3: I - A/2 has eigenvalues {1.5, 1.5, 0}
        let s = structure_spectrum(&triangle(), 1.2).unwrap();
        for (got, want) in s.eigenvalues.iter().zip([1.5, 1.5, 0.0]) {
            assert!((got - want).abs() < 1e-12, "{:?}", s.eigenvalues);
        }
    }

    #[test]
    fn padding() {
        let s = Spectrum { eigenvalues: vec![2.0, 0.0], n: 2 };
        assert_eq!(pad_spectrum(&s, 3).unwrap(), vec![2.0, 0.0, 0.0]);
        assert_eq!(pad_spectrum(&s, 4).unwrap(), vec![2.0, 0.0, 0.0, 0.0]);
        assert!(pad_spectrum(&s, 1).is_err());
        let k3 = Spectrum { eigenvalues: vec![1.5, 1.5, 0.0], n: 3 };
        assert_eq!(pad_spectrum(&k3, 3).unwrap(), vec![1.5, 1.5, 0.0]);
    }

    #[test]
    fn distances() {
        assert_eq!(spectral_distance(&[1.0, 0.5], &[1.0, 0.5]).unwrap(), 0.0);
        assert_eq!(spectral_distance(&[2.0, 0.0], &[0.0, 0.0]).unwrap(), 4.0);
        assert!((spectral_distance::<f64>(&[1.5, 1.5, 0.0], &[2.0, 0.0, 0.0]).unwrap() - 2.5).abs() < 1e-15);
        assert!(spectral_distance(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn counting() {
        let a = Spectrum { eigenvalues: vec![2.0, 0.0], n: 2 };
        let b = Spectrum { eigenvalues: vec![1.5, 1.5, 0.0], n: 3 };
        let train = vec![a.clone(), b.clone()];
        assert!(count_within_cutoff(&a, &train, 1e-9).unwrap() >= 1);
        let c = Spectrum { eigenvalues: vec![1.0, 0.0], n: 2 };
        assert_eq!(count_within_cutoff(&c, &train, 0.0).unwrap(), 0);
        assert!(count_within_cutoff(&c, &train, -1.0).is_err());
    }
}
