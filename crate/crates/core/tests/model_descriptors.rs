use ttr_core::graph::build_radius_graph;
use ttr_core::model::{ArchConfig, Head, ModelParams};
use ttr_core::species::Species;
use ttr_core::structure::Structure;

fn sp(s: &str) -> Species {
    s.parse().unwrap()
}

fn arch() -> ArchConfig {
    ArchConfig {
        species: vec![sp("C"), sp("O")],
        n_radial_basis: 5,
        hidden_width: 4,
        repr_blocks: 1,
        head_blocks: 1,
        cutoff: 2.5,
        seed: 3,
    }
}

fn descriptors(p: &ModelParams<f64>, s: &Structure<f64>) -> Vec<Vec<f64>> {
    let g = build_radius_graph(s, p.cutoff()).unwrap();
    p.featurize(s, &g).unwrap()
}

#[test]
fn isolated_atom_is_its_embedding() {
    let p = ModelParams::init(&arch()).unwrap();
    let s = Structure::new(vec![sp("O")], vec![[0.3, -1.0, 2.0]], "o", "o").unwrap();
    let h = 4;
    // The embedding table leads the flat vector, one row per species.
    assert_eq!(descriptors(&p, &s)[0], p.values[h..2 * h].to_vec());
}

#[test]
fn dimer_descriptor_by_hand() {
    let p = ModelParams::init(&arch()).unwrap();
    let (h, k, rc) = (4usize, 5usize, 2.5f64);
    let r = 1.3;
    let s = Structure::new(vec![sp("C"), sp("O")], vec![[0.0; 3], [r, 0.0, 0.0]], "d", "d").unwrap();
    let x = descriptors(&p, &s);

    let emb_c = &p.values[0..h];
    let emb_o = &p.values[h..2 * h];
    let wf = &p.values[2 * h..2 * h + h * k];
    let spacing = rc / (k - 1) as f64;
    let gamma = 0.5 / (spacing * spacing);
    let d = r / rc;
    let env = 1.0 - 28.0 * d.powi(6) + 48.0 * d.powi(7) - 21.0 * d.powi(8);
    let basis: Vec<f64> = (0..k).map(|c| (-gamma * (r - c as f64 * spacing).powi(2)).exp() * env).collect();
    for a in 0..h {
        let filter: f64 = (0..k).map(|c| wf[a * k + c] * basis[c]).sum();
        assert!((x[0][a] - (emb_c[a] + filter * emb_o[a])).abs() < 1e-14);
        assert!((x[1][a] - (emb_o[a] + filter * emb_c[a])).abs() < 1e-14);
    }
}

#[test]
fn rotated_structure_gives_identical_descriptors() {
    let p = ModelParams::init(&arch()).unwrap();
    let pos = vec![[0.0, 0.0, 0.0], [1.2, 0.3, 0.0], [0.4, 1.1, 0.5], [-0.8, 0.2, 0.9]];
    let s = Structure::new(vec![sp("C"), sp("O"), sp("C"), sp("C")], pos.clone(), "r", "r").unwrap();
    let (c, si) = (0.7f64.cos(), 0.7f64.sin());
    let rotated = s.with_positions(pos.iter().map(|v| [c * v[0] - si * v[1], si * v[0] + c * v[1], v[2]]).collect());
    let (a, b) = (descriptors(&p, &s), descriptors(&p, &rotated));
    for (xa, xb) in a.iter().zip(&b) {
        for (u, v) in xa.iter().zip(xb) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}

#[test]
fn work_around_a_closed_loop_vanishes() {
    let p = ModelParams::init(&arch()).unwrap();
    let base = vec![[0.0, 0.0, 0.0], [1.3, 0.0, 0.0], [0.5, 1.2, 0.0]];
    let species = vec![sp("C"), sp("O"), sp("C")];
    let steps = 4000;
    let path = |t: f64| {
        let a = 2.0 * std::f64::consts::PI * t;
        [0.5 + 0.4 * a.cos(), 1.2 + 0.3 * a.sin(), 0.2 * (2.0 * a).sin()]
    };
    let force_at = |t: f64| {
        let mut pos = base.clone();
        pos[2] = path(t);
        p.energy_forces_at(&species, &pos, Head::Main, p.cutoff()).unwrap().1[2]
    };
    let mut work = 0.0;
    let mut scale = 0.0;
    for i in 0..steps {
        let (t0, t1) = (i as f64 / steps as f64, (i + 1) as f64 / steps as f64);
        let (f0, f1) = (force_at(t0), force_at(t1));
        let (x0, x1) = (path(t0), path(t1));
        for c in 0..3 {
            let dw = 0.5 * (f0[c] + f1[c]) * (x1[c] - x0[c]);
            work += dw;
            scale += dw.abs();
        }
    }
    assert!(work.abs() < 1e-5 * scale.max(1.0), "work {work} over path {scale}");
}
