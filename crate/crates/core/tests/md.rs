use ttr_core::md::*;
use ttr_core::potentials::PairParams;
use ttr_core::species::Species;
use ttr_core::structure::{distance, Structure, Vec3};

fn carbon() -> Species {
    "C".parse().unwrap()
}

fn lj() -> PairParams<f64> {
    PairParams::uniform(&[carbon()], 0.2, 1.2)
}

fn dimer(r: f64) -> Structure<f64> {
    Structure::new(vec![carbon(); 2], vec![[0.0; 3], [r, 0.0, 0.0]], "d", "d").unwrap()
}

fn r_min() -> f64 {
    2f64.powf(1.0 / 6.0) * 1.2
}

fn trimer() -> Structure<f64> {
    let r = r_min();
    let pos = vec![[0.0; 3], [r * 1.05, 0.0, 0.0], [0.5 * r, 0.9 * r, 0.1]];
    Structure::new(vec![carbon(); 3], pos, "t", "t").unwrap()
}

fn nve_cfg(dt: f64, ps: f64) -> SimConfig {
    SimConfig { dt_fs: dt, total_time_ps: ps, temperature_k: 0.0, friction_per_fs: 0.0, seed: 1, record_interval: 1 }
}

#[test]
fn langevin_dimer_obeys_equipartition() {
    let cfg = SimConfig {
        dt_fs: 1.0,
        total_time_ps: 400.0,
        temperature_k: 300.0,
        friction_per_fs: 0.05,
        seed: 11,
        record_interval: 5,
    };
    let traj = run_nvt(&lj(), &dimer(r_min()), &cfg, "lj").unwrap();
    assert!(traj.is_stable());
    let burn = traj.frames.len() / 10;
    let mean_ke = traj.frames[burn..].iter().map(|f| kinetic_energy(&traj.species, &f.velocities)).sum::<f64>()
        / (traj.frames.len() - burn) as f64;
    let expected = 0.5 * 6.0 * BOLTZMANN_EV * 300.0;
    assert!((mean_ke - expected).abs() < 0.05 * expected, "{mean_ke} vs {expected}");
}

#[test]
fn velocity_verlet_conserves_energy() {
    let s = trimer();
    let v = maxwell_boltzmann(&s.species, 200.0, 4);
    let traj = run_nve(&lj(), &s, Some(v), &nve_cfg(0.5, 10.0), "lj").unwrap();
    let dev = nve_energy_deviation(&traj);
    assert!(dev < 1e-4, "deviation {dev}");
}

#[test]
fn energy_error_scales_with_dt_squared() {
    let s = trimer();
    let v = maxwell_boltzmann(&s.species, 200.0, 4);
    let coarse = nve_energy_deviation(&run_nve(&lj(), &s, Some(v.clone()), &nve_cfg(1.0, 2.0), "lj").unwrap());
    let fine = nve_energy_deviation(&run_nve(&lj(), &s, Some(v), &nve_cfg(0.5, 2.0), "lj").unwrap());
    let ratio = coarse / fine;
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn cold_frictionless_langevin_is_velocity_verlet() {
    let cfg = nve_cfg(0.5, 1.0);
    let a = run_nvt(&lj(), &trimer(), &cfg, "lj").unwrap();
    let b = run_nve(&lj(), &trimer(), None, &cfg, "lj").unwrap();
    assert_eq!(a.frames.len(), b.frames.len());
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        for (x, y) in fa.positions.iter().zip(&fb.positions) {
            assert!(distance(x, y) < 1e-10);
        }
    }
}

#[test]
fn resting_dimer_at_its_minimum_stays_put() {
    let traj = run_nve(&lj(), &dimer(r_min()), Some(vec![[0.0; 3]; 2]), &nve_cfg(0.5, 1.0), "lj").unwrap();
    for f in &traj.frames {
        assert!((distance(&f.positions[0], &f.positions[1]) - r_min()).abs() < 1e-10);
    }
}

fn handmade(distances: &[f64], aborted_at_fs: Option<f64>) -> Trajectory {
    let frames = distances
        .iter()
        .enumerate()
        .map(|(i, &d)| Frame {
            time_fs: 100.0 * i as f64,
            positions: vec![[0.0; 3], [d, 0.0, 0.0]],
            velocities: vec![[0.0; 3]; 2],
            potential_energy: 0.0,
            total_energy: i as f64 * 0.01,
        })
        .collect();
    Trajectory {
        species: vec![carbon(); 2],
        frames,
        config: SimConfig { total_time_ps: 1.0, ..SimConfig::default() },
        label: "hand".into(),
        aborted_at_fs,
    }
}

#[test]
fn stability_time_on_fixed_trajectories() {
    let bond = [(0, 1)];
    assert_eq!(stability_time(&handmade(&[1.0, 1.1, 1.2, 1.1], None), &bond, 0.5), 1.0);
    assert_eq!(stability_time(&handmade(&[1.0, 1.1, 1.7, 1.1], None), &bond, 0.5), 0.2);
    assert_eq!(stability_time(&handmade(&[1.0, 1.1], Some(150.0)), &bond, 0.5), 0.15);
    assert_eq!(stability_time(&handmade(&[1.0, 3.0], None), &[], 0.5), 1.0);

    let t = handmade(&[1.0, 1.2, 1.45, 1.8, 2.6], None);
    let times: Vec<f64> = [0.1, 0.3, 0.5, 1.0, 2.0].iter().map(|&tol| stability_time(&t, &bond, tol)).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]), "{times:?}");
}

#[test]
fn reference_bonds_are_graph_edges() {
    let bonds = reference_bonds(&trimer(), 1.5).unwrap();
    assert_eq!(bonds.len(), 3);
    assert!(reference_bonds(&dimer(2.0), 1.5).unwrap().is_empty());
}

#[test]
fn histogram_cases() {
    let h = h_of_r(&handmade(&[1.25], None), 6.0, 60).unwrap();
    assert_eq!(h.mass[12], 1.0);
    assert_eq!(h.total_mass(), 1.0);

    let tri = |a: Vec3<f64>, b: Vec3<f64>, c: Vec3<f64>| Trajectory {
        species: vec![carbon(); 3],
        frames: vec![Frame {
            time_fs: 0.0,
            positions: vec![a, b, c],
            velocities: vec![[0.0; 3]; 3],
            potential_energy: 0.0,
            total_energy: 0.0,
        }],
        ..handmade(&[1.0], None)
    };
    let isosceles = h_of_r(&tri([0.0; 3], [1.05, 0.0, 0.0], [0.0, 1.05, 0.0]), 6.0, 60).unwrap();
    assert!((isosceles.mass[10] - 2.0 / 3.0).abs() < 1e-15);
    assert!((isosceles.mass[14] - 1.0 / 3.0).abs() < 1e-15);

    let spread = h_of_r(&handmade(&[0.5, 1.0, 2.0, 9.0], None), 6.0, 60).unwrap();
    assert!((spread.total_mass() - 1.0).abs() < 1e-14);
    assert_eq!(spread.mass[59], 0.25);

    let near = h_of_r(&handmade(&[1.0], None), 6.0, 60).unwrap();
    let far = h_of_r(&handmade(&[3.0], None), 6.0, 60).unwrap();
    assert!((h_of_r_mae(&near, &far).unwrap() - 2.0).abs() < 1e-14);
    assert_eq!(h_of_r_mae(&spread, &spread).unwrap(), 0.0);
    assert!(h_of_r_mae(&near, &h_of_r(&handmade(&[1.0], None), 6.0, 30).unwrap()).is_err());
    assert!(h_of_r(&handmade(&[1.0], None), 0.0, 10).is_err());
}

#[test]
fn energy_deviation_is_the_largest_excursion() {
    let mut t = handmade(&[1.0, 1.0, 1.0, 1.0], None);
    for (f, e) in t.frames.iter_mut().zip([1.0, 1.5, 0.2, 1.1]) {
        f.total_energy = e;
    }
    assert!((nve_energy_deviation(&t) - 0.8).abs() < 1e-15);
}

#[test]
fn sampled_velocities_carry_no_momentum() {
    let species = vec![carbon(), "O".parse().unwrap(), "H".parse().unwrap()];
    let v = maxwell_boltzmann(&species, 500.0, 3);
    for k in 0..3 {
        let p: f64 = species.iter().zip(&v).map(|(s, x)| s.mass() * x[k]).sum();
        assert!(p.abs() < 1e-12);
    }
    assert_eq!(v, maxwell_boltzmann(&species, 500.0, 3));
}
