//! Linear-model check that one test-time gradient step on a Lennard-Jones
//! prior loss lowers the main-task loss.
//!
//! Predictions are `x^T R p` (prior) and `x^T R m` (main). Losses are
//! `½ (ŷ − y)²`, so the prior gradient in `R` is `(x^T R p − E_P) x p^T`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::potentials::{lj_pair, reference_pair, MorseSpecies};

const MIN_SINGULAR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearTttModel {
    /// Representation, `f × d`.
    pub r: DMatrix<f64>,
    pub m: DVector<f64>,
    pub p: DVector<f64>,
    pub eta: f64,
}

impl LinearTttModel {
    pub fn predict_prior(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.r * &self.p))
    }

    pub fn predict_main(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.r * &self.m))
    }

    pub fn main_loss(&self, x: &DVector<f64>, e_main: f64) -> f64 {
        0.5 * (self.predict_main(x) - e_main).powi(2)
    }

    pub fn prior_loss(&self, x: &DVector<f64>, e_prior: f64) -> f64 {
        0.5 * (self.predict_prior(x) - e_prior).powi(2)
    }
}

/// Least-squares heads on the frozen activations `A = X R`.
pub fn fit_heads_least_squares(
    r: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y_prior: &DVector<f64>,
    y_main: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if x.ncols() != r.nrows() || y_prior.len() != x.nrows() || y_main.len() != x.nrows() {
        return Err(Error::input("design, representation and targets have inconsistent shapes"));
    }
    let a = x * r;
    if a.nrows() < a.ncols() {
        return Err(Error::Numeric(format!("activations are {}×{}; need at least as many rows as columns", a.nrows(), a.ncols())));
    }
    let svd = a.svd(true, true);
    let smin = svd.singular_values.min();
    if !(smin > MIN_SINGULAR) {
        return Err(Error::Numeric(format!("activations are rank deficient (smallest singular value {smin:e})")));
    }
    let solve = |y: &DVector<f64>| svd.solve(y, 0.0).map_err(|e| Error::Numeric(e.to_string()));
    Ok((solve(y_prior)?, solve(y_main)?))
}

/// One gradient step on the prior loss at input `x`.
pub fn ttt_step(model: &LinearTttModel, x: &DVector<f64>, e_prior: f64) -> DMatrix<f64> {
    let residual = model.predict_prior(x) - e_prior;
    &model.r - (model.eta * residual) * x * model.p.transpose()
}

/// Dimer instances: features are a bias plus Gaussian radial basis values of
/// the pair distance; the prior is Lennard-Jones and the reference is Morse
/// with a diverging core, both randomised per trial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimerGenerator {
    pub n_basis: usize,
    pub latent_dim: usize,
    pub n_train: usize,
    /// Training distances as multiples of the Morse `r0`.
    pub train_range: (f64, f64),
    /// Test distances are searched geometrically below the training range
    /// down to this multiple of `r0`. The first distance where both labels
    /// exceed every training label and the errors share a sign is used.
    pub search_floor: f64,
    pub search_steps: usize,
    pub seed: u64,
}

impl Default for DimerGenerator {
    fn default() -> Self {
        DimerGenerator {
            n_basis: 8,
            latent_dim: 4,
            n_train: 40,
            train_range: (0.9, 2.5),
            search_floor: 0.3,
            search_steps: 80,
            seed: 0,
        }
    }
}

/// One generated problem: energies as functions of distance and the
/// training design.
pub struct DimerInstance {
    pub morse: MorseSpecies<f64>,
    pub core: f64,
    pub lj_epsilon: f64,
    pub lj_sigma: f64,
    pub centers: Vec<f64>,
    pub gamma: f64,
    pub r: DMatrix<f64>,
    pub train_distances: Vec<f64>,
}

impl DimerInstance {
    pub fn features(&self, dist: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.centers.len() + 1);
        x[0] = 1.0;
        for (k, c) in self.centers.iter().enumerate() {
            x[k + 1] = (-self.gamma * (dist - c).powi(2)).exp();
        }
        x
    }

    pub fn prior_energy(&self, dist: f64) -> f64 {
        lj_pair(dist, self.lj_epsilon, self.lj_sigma).0
    }

    pub fn reference_energy(&self, dist: f64) -> f64 {
        reference_pair(dist, &self.morse, self.core).0
    }

    pub fn design(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let n = self.train_distances.len();
        let f = self.centers.len() + 1;
        let mut x = DMatrix::zeros(n, f);
        for (i, &d) in self.train_distances.iter().enumerate() {
            x.row_mut(i).copy_from(&self.features(d).transpose());
        }
        let yp = DVector::from_iterator(n, self.train_distances.iter().map(|&d| self.prior_energy(d)));
        let ym = DVector::from_iterator(n, self.train_distances.iter().map(|&d| self.reference_energy(d)));
        (x, yp, ym)
    }
}

impl DimerGenerator {
    pub fn instance(&self, trial: usize) -> DimerInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let morse = MorseSpecies {
            depth: rng.random_range(1.0..5.0),
            width: rng.random_range(1.5..3.0),
            r0: rng.random_range(1.0..1.6),
        };
        // The prior is a rough match of the reference well.
        let lj_epsilon = morse.depth * rng.random_range(0.7..1.3);
        let lj_sigma = morse.r0 / 2f64.powf(1.0 / 6.0) * rng.random_range(0.95..1.05);
        let core = rng.random_range(2.0..10.0);
        let (lo, hi) = self.train_range;
        let centers: Vec<f64> = (0..self.n_basis)
            .map(|k| morse.r0 * (lo + (hi - lo) * k as f64 / (self.n_basis - 1).max(1) as f64))
            .collect();
        let spacing = morse.r0 * (hi - lo) / (self.n_basis - 1).max(1) as f64;
        let f = self.n_basis + 1;
        let r = DMatrix::from_fn(f, self.latent_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let train_distances = (0..self.n_train).map(|_| morse.r0 * rng.random_range(lo..hi)).collect();
        DimerInstance { morse, core, lj_epsilon, lj_sigma, centers, gamma: 0.5 / (spacing * spacing), r, train_distances }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    /// Conditions hold and the main loss fell.
    Decreased,
    /// Conditions hold but the main loss did not fall at the chosen step.
    NotDecreased,
    /// `p^T m ≤ 0`; left out of the success fraction.
    HeadsMisaligned,
    /// No test distance with correlated errors was found, or the heads
    /// could not be fitted.
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub status: TrialStatus,
    pub test_distance: Option<f64>,
    pub p_dot_m: Option<f64>,
    pub prior_residual: Option<f64>,
    pub main_residual: Option<f64>,
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
    /// Largest step size (by bisection) that still lowers the main loss.
    pub eta_threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoremReport {
    pub eta: f64,
    pub trials: usize,
    pub satisfying: usize,
    pub decreased: usize,
    pub misaligned: usize,
    pub inconclusive: usize,
    pub records: Vec<TrialRecord>,
}

impl TheoremReport {
    /// Share of condition-satisfying trials with a strict main-loss decrease.
    pub fn success_fraction(&self) -> f64 {
        if self.satisfying == 0 { 0.0 } else { self.decreased as f64 / self.satisfying as f64 }
    }

    pub fn summary(&self) -> String {
        format!(
            "trials={} satisfying={} decreased={} misaligned={} inconclusive={} success_fraction={:.4}",
            self.trials,
            self.satisfying,
            self.decreased,
            self.misaligned,
            self.inconclusive,
            self.success_fraction()
        )
    }
}

fn main_loss_decreases(model: &LinearTttModel, x: &DVector<f64>, e_prior: f64, e_main: f64, eta: f64) -> bool {
    let stepped = LinearTttModel { r: ttt_step(&LinearTttModel { eta, ..model.clone() }, x, e_prior), ..model.clone() };
    stepped.main_loss(x, e_main) < model.main_loss(x, e_main)
}

/// Largest `η` with a main-loss decrease, bracketed by doubling and refined
/// by bisection. Zero when even tiny steps fail.
pub fn eta_threshold(model: &LinearTttModel, x: &DVector<f64>, e_prior: f64, e_main: f64) -> f64 {
    let mut lo = 1e-300f64;
    let mut probe = 1e-12;
    while !main_loss_decreases(model, x, e_prior, e_main, probe) {
        probe *= 0.5;
        if probe < lo {
            return 0.0;
        }
    }
    lo = probe;
    let mut hi = probe * 2.0;
    while main_loss_decreases(model, x, e_prior, e_main, hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return hi;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if main_loss_decreases(model, x, e_prior, e_main, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn run_trial(generator: &DimerGenerator, trial: usize, eta: f64) -> TrialRecord {
    let mut record = TrialRecord {
        trial,
        status: TrialStatus::Inconclusive,
        test_distance: None,
        p_dot_m: None,
        prior_residual: None,
        main_residual: None,
        loss_before: None,
        loss_after: None,
        eta_threshold: None,
    };
    let inst = generator.instance(trial);
    let (x, yp, ym) = inst.design();
    let Ok((p, m)) = fit_heads_least_squares(&inst.r, &x, &yp, &ym) else {
        return record;
    };
    let p_dot_m = p.dot(&m);
    record.p_dot_m = Some(p_dot_m);
    if p_dot_m <= 0.0 {
        record.status = TrialStatus::HeadsMisaligned;
        return record;
    }
    let model = LinearTttModel { r: inst.r.clone(), m, p, eta };
    let start = inst.morse.r0 * generator.train_range.0;
    let floor = inst.morse.r0 * generator.search_floor;
    let ratio = (floor / start).powf(1.0 / generator.search_steps.max(1) as f64);
    let (max_p, max_m) = (yp.max(), ym.max());
    let found = (1..=generator.search_steps).map(|k| start * ratio.powi(k as i32)).find_map(|d| {
        let xt = inst.features(d);
        let (ep, em) = (inst.prior_energy(d), inst.reference_energy(d));
        if ep <= max_p || em <= max_m {
            return None;
        }
        let rp = ep - model.predict_prior(&xt);
        let rm = em - model.predict_main(&xt);
        (rp != 0.0 && rm != 0.0 && rp.signum() == rm.signum()).then_some((d, xt, ep, em, rp, rm))
    });
    let Some((d, xt, ep, em, rp, rm)) = found else {
        return record;
    };
    let before = model.main_loss(&xt, em);
    let after = LinearTttModel { r: ttt_step(&model, &xt, ep), ..model.clone() }.main_loss(&xt, em);
    record.test_distance = Some(d);
    record.prior_residual = Some(rp);
    record.main_residual = Some(rm);
    record.loss_before = Some(before);
    record.loss_after = Some(after);
    record.eta_threshold = Some(eta_threshold(&model, &xt, ep, em));
    record.status = if after < before { TrialStatus::Decreased } else { TrialStatus::NotDecreased };
    record
}

/// Runs `trials` generated instances with step size `eta`.
pub fn verify_theorem(generator: &DimerGenerator, trials: usize, eta: f64) -> Result<TheoremReport> {
    if generator.n_basis == 0 || generator.latent_dim == 0 || generator.latent_dim > generator.n_basis + 1 {
        return Err(Error::input("latent dimension must lie in 1..=n_basis + 1"));
    }
    if !(eta >= 0.0) {
        return Err(Error::input("eta must be non-negative"));
    }
    let records: Vec<TrialRecord> = (0..trials).map(|t| run_trial(generator, t, eta)).collect();
    let count = |s: TrialStatus| records.iter().filter(|r| r.status == s).count();
    let decreased = count(TrialStatus::Decreased);
    Ok(TheoremReport {
        eta,
        trials,
        satisfying: decreased + count(TrialStatus::NotDecreased),
        decreased,
        misaligned: count(TrialStatus::HeadsMisaligned),
        inconclusive: count(TrialStatus::Inconclusive),
        records,
    })
}
