//! Supervised, prior-only and joint training, the pretrain-freeze-finetune
//! regime, and a data-budget fine-tuning harness.

use std::collections::BTreeSet;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{dataset_force_mae, force_mae};
use crate::model::{Head, LossWeights, ModelForceField, ModelParams, Partition};
use crate::structure::{LabelSource, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

/// Which loss is minimised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Reference labels through the main head.
    Main,
    /// Prior labels through the prior head.
    Prior,
    /// Sum of both on the same structures.
    Joint,
}

impl Task {
    fn uses(self, head: Head) -> bool {
        matches!((self, head), (Task::Joint, _) | (Task::Main, Head::Main) | (Task::Prior, Head::Prior))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// SGD momentum, or Adam's β₁.
    pub momentum: f64,
    /// Adam's β₂.
    pub beta2: f64,
    /// Decoupled weight decay, applied to unfrozen partitions only.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub freeze: Vec<Partition>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            batch_size: 8,
            epochs: 50,
            loss_weights: LossWeights::default(),
            seed: 0,
            freeze: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("momentum and beta2 must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        let frozen: BTreeSet<_> = self.freeze.iter().collect();
        if frozen.len() == Partition::ALL.len() {
            return Err(Error::Config("cannot freeze every partition".into()));
        }
        Ok(())
    }
}

/// First-order optimiser state over the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    const ADAM_EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64, beta2: f64, weight_decay: f64, n: usize) -> Self {
        Optimizer { kind, lr, beta1: momentum, beta2, weight_decay, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn from_config(cfg: &TrainConfig, n: usize) -> Self {
        Self::new(cfg.optimizer, cfg.learning_rate, cfg.momentum, cfg.beta2, cfg.weight_decay, n)
    }

    /// One update of every parameter with `trainable[k]`; the rest are not
    /// touched at all.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], trainable: &[bool]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for k in 0..params.len() {
            if !trainable[k] {
                continue;
            }
            let g = grad[k];
            let update = match self.kind {
                OptimizerKind::SgdMomentum => {
                    self.m[k] = b1 * self.m[k] + g;
                    self.m[k]
                }
                OptimizerKind::Adam => {
                    self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
                    self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
                    (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::ADAM_EPS)
                }
            };
            params[k] -= self.lr * (update + self.weight_decay * params[k]);
        }
    }
}

/// Per-parameter trainability for a freeze list.
pub fn trainable_mask(params: &ModelParams<f64>, freeze: &[Partition]) -> Vec<bool> {
    let mut mask = vec![true; params.len()];
    for p in freeze {
        mask[params.partition().range(*p)].fill(false);
    }
    mask
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss_main: Option<f64>,
    pub loss_prior: Option<f64>,
    /// Batch force MAE of the main head (prior head for prior-only training).
    pub force_mae: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f64>,
    pub history: Vec<LossRecord>,
}

fn check_labels(data: &[Sample<f64>], task: Task) -> Result<()> {
    for s in data {
        for (head, src) in [(Head::Main, LabelSource::Reference), (Head::Prior, LabelSource::Prior)] {
            if task.uses(head) && s.labels(src).is_none() {
                return Err(Error::input(format!(
                    "structure `{}` lacks {src} labels needed for {task:?} training",
                    s.structure.structure_id
                )));
            }
        }
    }
    Ok(())
}

/// Mini-batch training with a seeded per-epoch shuffle.
pub fn train(params: &ModelParams<f64>, data: &[Sample<f64>], task: Task, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_labels(data, task)?;
    let mut params = params.clone();
    let mut history = Vec::new();
    if data.is_empty() || cfg.epochs == 0 {
        return Ok(TrainOutcome { params, history });
    }
    let trainable = trainable_mask(&params, &cfg.freeze);
    let mut opt = Optimizer::from_config(cfg, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; params.len()];
            let (mut lm, mut lp, mut mae) = (0.0, 0.0, 0.0);
            for &i in batch {
                let s = &data[i];
                for (head, src) in [(Head::Main, LabelSource::Reference), (Head::Prior, LabelSource::Prior)] {
                    if !task.uses(head) {
                        continue;
                    }
                    let labels = s.labels(src).expect("checked");
                    let g = params.grad_params(&s.structure, labels, head, cfg.loss_weights)?;
                    for (acc, x) in grad.iter_mut().zip(&g.values) {
                        *acc += x;
                    }
                    match head {
                        Head::Main => lm += g.loss,
                        Head::Prior => lp += g.loss,
                    }
                    if head == Head::Main || task == Task::Prior {
                        mae += force_mae(&g.forces, &labels.forces)?;
                    }
                }
            }
            let nb = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= nb);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient at step {step}")));
            }
            opt.step(&mut params.values, &grad, &trainable);
            history.push(LossRecord {
                step,
                epoch,
                loss_main: task.uses(Head::Main).then_some(lm / nb),
                loss_prior: task.uses(Head::Prior).then_some(lp / nb),
                force_mae: mae / nb,
            });
            step += 1;
        }
        if let Some(last) = history.last() {
            debug!("epoch {epoch}: L_M {:?} L_P {:?} force MAE {:.4}", last.loss_main, last.loss_prior, last.force_mae);
        }
    }
    Ok(TrainOutcome { params, history })
}

/// Sets a head's readout bias to the mean per-atom energy of the labels it
/// will be trained on.
pub fn calibrate_readout_bias(params: &mut ModelParams<f64>, data: &[Sample<f64>], head: Head) -> Result<()> {
    let src = match head {
        Head::Main => LabelSource::Reference,
        Head::Prior => LabelSource::Prior,
    };
    let (mut e, mut n) = (0.0, 0usize);
    for s in data {
        if let Some(l) = s.labels(src) {
            e += l.energy;
            n += s.structure.len();
        }
    }
    if n == 0 {
        return Err(Error::input(format!("no {src} labels to calibrate the {head} head")));
    }
    params.set_readout_bias(head, e / n as f64);
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: ModelParams<f64>,
    pub pretrain: Vec<LossRecord>,
    pub finetune: Vec<LossRecord>,
}

/// Trains `{θ_R, θ_P}` on prior labels, then only `θ_M` on reference labels.
pub fn pretrain_freeze_finetune(
    params: &ModelParams<f64>,
    prior_data: &[Sample<f64>],
    ref_data: &[Sample<f64>],
    cfg_pre: &TrainConfig,
    cfg_ft: &TrainConfig,
) -> Result<PretrainOutcome> {
    let with = |cfg: &TrainConfig, extra: &[Partition]| {
        let mut c = cfg.clone();
        for p in extra {
            if !c.freeze.contains(p) {
                c.freeze.push(*p);
            }
        }
        c
    };
    let pre = train(params, prior_data, Task::Prior, &with(cfg_pre, &[Partition::MainHead]))?;
    let ft = train(
        &pre.params,
        ref_data,
        Task::Main,
        &with(cfg_ft, &[Partition::Representation, Partition::PriorHead]),
    )?;
    Ok(PretrainOutcome { params: ft.params, pretrain: pre.history, finetune: ft.history })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineTunePoint {
    pub fraction: f64,
    pub n_structures: usize,
    pub force_mae: f64,
}

/// Nested subsets of `pool` drawn from one seeded permutation.
pub fn nested_subsets(n: usize, fractions: &[f64], seed: u64) -> Result<Vec<(f64, Vec<usize>)>> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::input(format!("budget fraction {f} is outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(fractions
        .iter()
        .map(|&f| (f, order[..(f * n as f64).round() as usize].to_vec()))
        .collect())
}

/// Fine-tunes a fresh copy of `params` on each budget fraction of `pool`
/// (reference labels, main head) and measures force MAE on `eval`.
pub fn fine_tune(
    params: &ModelParams<f64>,
    pool: &[Sample<f64>],
    eval: &[Sample<f64>],
    cfg: &TrainConfig,
    fractions: &[f64],
) -> Result<Vec<FineTunePoint>> {
    let mut out = Vec::new();
    for (fraction, idx) in nested_subsets(pool.len(), fractions, cfg.seed)? {
        if idx.is_empty() {
            warn!("budget fraction {fraction} selects no structures; skipped");
            continue;
        }
        let subset: Vec<Sample<f64>> = idx.iter().map(|&i| pool[i].clone()).collect();
        let tuned = train(params, &subset, Task::Main, cfg)?.params;
        out.push(FineTunePoint { fraction, n_structures: idx.len(), force_mae: main_force_mae(&tuned, eval)? });
    }
    Ok(out)
}

/// Main-head force MAE against reference labels.
pub fn main_force_mae(params: &ModelParams<f64>, data: &[Sample<f64>]) -> Result<f64> {
    let field = ModelForceField::new(params, Head::Main);
    let items: Vec<_> = data
        .iter()
        .map(|s| {
            s.reference
                .as_ref()
                .map(|l| (&s.structure, l))
                .ok_or_else(|| Error::input(format!("structure `{}` has no reference labels", s.structure.structure_id)))
        })
        .collect::<Result<_>>()?;
    dataset_force_mae(&field, items)
}

pub fn write_loss_log(history: &[LossRecord], path: &std::path::Path) -> Result<()> {
    crate::io::write_csv(history, path)
}
