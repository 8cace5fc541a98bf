//! Test-time training: adapt the representation on prior labels of the test
//! structures, then predict with the untouched main head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Head, LossWeights, ModelParams, Partition};
use crate::potentials::{ForceProvider, PairParams};
use crate::structure::{Labels, Structure, Vec3};
use crate::training::{trainable_mask, Optimizer, OptimizerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TttConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Evaluations without an improvement of at least `min_delta` before
    /// stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Stop once the prior loss reaches this value (the in-distribution
    /// prior loss, when known).
    pub target_loss: Option<f64>,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for TttConfig {
    fn default() -> Self {
        Self::preset("spice").expect("built-in preset")
    }
}

impl TttConfig {
    /// Named step/learning-rate profiles: `spice` (250 steps, 1e-4), `md17`
    /// (3000, 1e-3) and `md22` (50, 1e-5), all SGD with momentum 0.9 and
    /// weight decay 1e-3.
    pub fn preset(name: &str) -> Result<Self> {
        let (steps, learning_rate) = match name {
            "spice" => (250, 1e-4),
            "md17" => (3000, 1e-3),
            "md22" => (50, 1e-5),
            other => return Err(Error::Config(format!("unknown TTT preset `{other}`"))),
        };
        Ok(TttConfig {
            steps,
            learning_rate,
            momentum: 0.9,
            weight_decay: 1e-3,
            patience: 10,
            min_delta: 1e-6,
            target_loss: None,
            loss_weights: LossWeights::default(),
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("invalid TTT optimiser settings".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    Plateau,
    TargetReached,
}

#[derive(Clone, Debug)]
pub struct TttOutcome {
    /// Parameters at the lowest prior loss seen.
    pub params: ModelParams<f64>,
    /// Full-set prior loss before each update (index 0 is the unadapted
    /// model).
    pub history: Vec<f64>,
    pub best_step: usize,
    pub stop: StopReason,
}

/// Prior labels for each structure.
pub fn prior_labels(structures: &[Structure<f64>], prior: &PairParams<f64>) -> Result<Vec<Labels<f64>>> {
    structures
        .iter()
        .map(|s| {
            if !prior.covers(&s.species) {
                return Err(Error::input(format!("prior has no parameters for a species in `{}`", s.structure_id)));
            }
            prior.label(s)
        })
        .collect()
}

/// Mean prior-head loss over a labeled set, with its gradient.
fn prior_loss_and_grad(
    params: &ModelParams<f64>,
    structures: &[Structure<f64>],
    labels: &[Labels<f64>],
    weights: LossWeights,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (s, l) in structures.iter().zip(labels) {
        let g = params.grad_params(s, l, Head::Prior, weights)?;
        loss += g.loss;
        for (a, b) in grad.iter_mut().zip(&g.values) {
            *a += b;
        }
    }
    let n = structures.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Mean prior-head loss of `params` on prior-labeled structures.
pub fn prior_loss(
    params: &ModelParams<f64>,
    structures: &[Structure<f64>],
    labels: &[Labels<f64>],
    weights: LossWeights,
) -> Result<f64> {
    let mut total = 0.0;
    for (s, l) in structures.iter().zip(labels) {
        total += params.loss(s, l, Head::Prior, weights)?;
    }
    Ok(total / structures.len() as f64)
}

/// Full-batch SGD on the prior loss of `structures`, updating only the
/// representation partition.
pub fn ttt_adapt(
    params: &ModelParams<f64>,
    structures: &[Structure<f64>],
    prior: &PairParams<f64>,
    cfg: &TttConfig,
) -> Result<TttOutcome> {
    cfg.validate()?;
    if structures.is_empty() {
        return Err(Error::input("test-time training needs at least one structure"));
    }
    let labels = prior_labels(structures, prior)?;
    let trainable = trainable_mask(params, &[Partition::MainHead, Partition::PriorHead]);
    let mut opt = Optimizer::new(
        OptimizerKind::SgdMomentum,
        cfg.learning_rate,
        cfg.momentum,
        0.0,
        cfg.weight_decay,
        params.len(),
    );
    let mut current = params.clone();
    let mut best = (f64::INFINITY, 0, params.clone());
    let mut history = Vec::with_capacity(cfg.steps + 1);
    let mut since_improvement = 0;
    let mut stop = StopReason::Budget;
    for step in 0..=cfg.steps {
        let (loss, grad) = prior_loss_and_grad(&current, structures, &labels, cfg.loss_weights)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite prior loss during test-time training at step {step}")));
        }
        history.push(loss);
        if loss < best.0 - cfg.min_delta {
            best = (loss, step, current.clone());
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        if loss < best.0 {
            best = (loss, step, current.clone());
        }
        if cfg.target_loss.is_some_and(|t| loss <= t) {
            stop = StopReason::TargetReached;
            break;
        }
        if since_improvement >= cfg.patience {
            stop = StopReason::Plateau;
            break;
        }
        if step == cfg.steps {
            break;
        }
        opt.step(&mut current.values, &grad, &trainable);
    }
    let (_, best_step, params) = best;
    Ok(TttOutcome { params, history, best_step, stop })
}

/// Main-head energies and forces of the adapted model.
pub fn predict_after_ttt(adapted: &ModelParams<f64>, structures: &[Structure<f64>]) -> Result<Vec<(f64, Vec<Vec3<f64>>)>> {
    structures.iter().map(|s| adapted.forward_energy_forces(s, Head::Main)).collect()
}
