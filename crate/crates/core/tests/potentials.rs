use proptest::prelude::*;

use ttr_core::benchmark::{generate_benchmark, BenchmarkConfig, PotentialSet};
use ttr_core::potentials::*;
use ttr_core::species::Species;
use ttr_core::stats::pearson;
use ttr_core::structure::{distance, norm, LabelSource, LabeledStructure, Structure, Vec3};

fn sp(s: &str) -> Species {
    s.parse().unwrap()
}

/// Rotation from a unit quaternion built out of three angles.
fn rotation(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
    let (w, x, y, z) = {
        let q = [a.cos(), a.sin() * b.cos(), a.sin() * b.sin() * c.cos(), a.sin() * b.sin() * c.sin()];
        (q[0], q[1], q[2], q[3])
    };
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn apply(m: &[[f64; 3]; 3], v: &Vec3<f64>) -> Vec3<f64> {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

/// Clusters of C/N/O atoms with a minimum separation so neither potential
/// is deep in its repulsive wall.
fn cluster() -> impl Strategy<Value = (Vec<Species>, Vec<Vec3<f64>>)> {
    prop::collection::vec((0usize..3, prop::array::uniform3(-2.0f64..2.0)), 2..8)
        .prop_filter("separated atoms", |atoms| {
            atoms.iter().enumerate().all(|(i, a)| atoms[i + 1..].iter().all(|b| distance(&a.1, &b.1) > 0.8))
        })
        .prop_map(|atoms| {
            let names = ["C", "N", "O"];
            (atoms.iter().map(|a| sp(names[a.0])).collect(), atoms.iter().map(|a| a.1).collect())
        })
}

fn providers() -> PotentialSet {
    PotentialSet::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn energy_invariant_and_forces_covariant((species, pos) in cluster(), a in 0.0f64..3.1, b in 0.0f64..3.1, c in 0.0f64..6.2, t in prop::array::uniform3(-5.0f64..5.0)) {
        let set = providers();
        let rot = rotation(a, b, c);
        let moved: Vec<Vec3<f64>> = pos.iter().map(|p| {
            let r = apply(&rot, p);
            [r[0] + t[0], r[1] + t[1], r[2] + t[2]]
        }).collect();
        let check = |p: &dyn ForceProvider<f64>| -> Result<(), TestCaseError> {
            let (e0, f0) = p.energy_forces(&species, &pos).unwrap();
            let (e1, f1) = p.energy_forces(&species, &moved).unwrap();
            prop_assert!((e0 - e1).abs() < 1e-9 * e0.abs().max(1.0), "{} vs {}", e0, e1);
            for (fa, fb) in f0.iter().zip(&f1) {
                let rf = apply(&rot, fa);
                for k in 0..3 {
                    prop_assert!((rf[k] - fb[k]).abs() < 1e-8 * norm(fa).max(1.0));
                }
            }
            Ok(())
        };
        check(&set.prior)?;
        check(&set.reference)?;
    }

    #[test]
    fn net_force_is_zero((species, pos) in cluster()) {
        let set = providers();
        for p in [&set.prior as &dyn ForceProvider<f64>, &set.reference] {
            let (_, f) = p.energy_forces(&species, &pos).unwrap();
            let scale: f64 = f.iter().map(norm).sum::<f64>().max(1.0);
            for k in 0..3 {
                prop_assert!(f.iter().map(|x| x[k]).sum::<f64>().abs() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn pair_terms_match_hand_formulas(r in 0.6f64..4.0) {
        let (e, de) = lj_pair(r, 0.7, 1.1);
        let lj = 4.0 * 0.7 * ((1.1 / r).powi(12) - (1.1 / r).powi(6));
        prop_assert!((e - lj).abs() < 1e-12 * lj.abs().max(1.0));
        let h = 1e-6;
        let fd = (lj_pair(r + h, 0.7, 1.1).0 - lj_pair(r - h, 0.7, 1.1).0) / (2.0 * h);
        prop_assert!((de - fd).abs() < 1e-5 * de.abs().max(1.0));

        let m = MorseSpecies { depth: 2.0, width: 3.0, r0: 1.4 };
        let (e, _) = reference_pair(r, &m, 4.0);
        let core = if r < 1.4 { 4.0 * (1.4 / r - 1.0).powi(3) } else { 0.0 };
        let morse = 2.0 * ((1.0 - (-3.0 * (r - 1.4)).exp()).powi(2) - 1.0);
        prop_assert!((e - morse - core).abs() < 1e-12 * (morse + core).abs().max(1.0));
    }
}

#[test]
fn lj_and_reference_force_norms_correlate_over_corpus() {
    let bench = generate_benchmark(&BenchmarkConfig::default()).unwrap();
    let mut lj = Vec::new();
    let mut reference = Vec::new();
    for name in bench.split_names() {
        for s in bench.split(&name).unwrap() {
            lj.extend(s.prior.as_ref().unwrap().force_norms());
            reference.extend(s.reference.as_ref().unwrap().force_norms());
        }
    }
    let r = pearson(&lj, &reference);
    assert!(r > 0.8, "pearson {r}");
}

#[test]
fn force_norm_stats_by_hand() {
    let c = sp("C");
    let one = |forces: Vec<Vec3<f64>>| {
        let n = forces.len();
        let s = Structure::new(vec![c; n], (0..n).map(|i| [i as f64, 0.0, 0.0]).collect(), "x", "x").unwrap();
        LabeledStructure { structure: s, energy: 0.0, forces, label_source: LabelSource::Reference }
    };
    assert_eq!(force_norm_stats(&[one(vec![[3.0, 4.0, 0.0]])]).unwrap(), (5.0, 0.0));
    let (m, s) = force_norm_stats(&[one(vec![[1.0, 0.0, 0.0], [0.0, 3.0, 0.0]])]).unwrap();
    assert!((m - 2.0).abs() < 1e-15 && (s - 1.0).abs() < 1e-15);
    assert!(force_norm_stats(&[]).is_err());
}

#[test]
fn single_precision_agrees_with_double() {
    let set = providers();
    let species = vec![sp("C"), sp("N"), sp("O"), sp("C")];
    let pos = vec![[0.0, 0.0, 0.0], [1.4, 0.1, 0.0], [2.1, 1.2, 0.2], [-0.7, 1.1, -0.3]];
    let (e64, f64_) = reference_energy_forces(&species, &pos, &set.reference).unwrap();
    let ref32: ReferenceOracleParams<f32> = ReferenceOracleParams {
        morse: set
            .reference
            .morse
            .iter()
            .map(|(k, m)| (*k, MorseSpecies { depth: m.depth as f32, width: m.width as f32, r0: m.r0 as f32 }))
            .collect(),
        core_repulsion: set.reference.core_repulsion as f32,
        three_body_strength: set.reference.three_body_strength as f32,
        three_body_cos0: set.reference.three_body_cos0 as f32,
        three_body_cutoff: set.reference.three_body_cutoff as f32,
    };
    let pos32: Vec<[f32; 3]> = pos.iter().map(|p| p.map(|x| x as f32)).collect();
    let (e32, f32_) = reference_energy_forces(&species, &pos32, &ref32).unwrap();
    assert!((e32 as f64 - e64).abs() < 1e-4 * e64.abs().max(1.0));
    for (a, b) in f32_.iter().zip(&f64_) {
        for k in 0..3 {
            assert!((a[k] as f64 - b[k]).abs() < 1e-3 * norm(b).max(1.0));
        }
    }
}
