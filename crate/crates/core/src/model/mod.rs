//! A small conservative force field with a shared representation and two
//! energy heads.
//!
//! Architecture, per atom `i`:
//!
//! ```text
//! b(r)  = exp(−γ (r − μ_k)²) · u(r, r_cut)                  Gaussian basis × envelope
//! x_i   = e[z_i] + Σ_{j ∈ N(i)} (W_f b(r_ij)) ⊙ e[z_j]        descriptor
//! h_i   = ssp(W_l … ssp(W_1 x_i + c_1) … + c_l)               interaction block(s)
//! ε_i   = w · ssp(V_m … ssp(V_1 h_i + d_1) …) + b             per-head readout MLP
//! E     = Σ_i ε_i,  F = −∂E/∂r
//! ```
//!
//! `ssp(x) = ln(1 + eˣ) − ln 2` (shifted softplus) keeps `E` smooth in the
//! positions. The embedding table, filter and interaction blocks form the
//! representation partition; each head owns its readout MLP.

pub mod checkpoint;
pub mod envelope;
mod network;

use std::fmt;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_radius_graph, RadiusGraph};
use crate::potentials::ForceProvider;
use crate::scalar::{Dual, Real};
use crate::species::Species;
use crate::structure::{Labels, Structure, Vec3};

pub use network::Evaluation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Species with a row in the embedding table, in table order.
    pub species: Vec<Species>,
    pub n_radial_basis: usize,
    pub hidden_width: usize,
    /// Dense layers in the shared interaction block.
    pub repr_blocks: usize,
    /// Hidden layers in each readout MLP.
    pub head_blocks: usize,
    /// Training cutoff (Å); also fixes the radial basis centres.
    pub cutoff: f64,
    pub seed: u64,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.species.is_empty() {
            return Err(Error::input("architecture needs at least one species"));
        }
        if self.n_radial_basis == 0 || self.hidden_width == 0 || self.repr_blocks == 0 || self.head_blocks == 0 {
            return Err(Error::input("architecture counts must all be at least 1"));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::input("architecture cutoff must be positive"));
        }
        Ok(())
    }

    pub fn species_index(&self, s: Species) -> Option<usize> {
        self.species.iter().position(|x| *x == s)
    }

    /// Gaussian centres spread uniformly over `[0, cutoff]` and the shared
    /// exponent `γ = 1 / (2Δ²)`.
    pub fn radial_basis(&self) -> (Vec<f64>, f64) {
        let k = self.n_radial_basis;
        let spacing = if k > 1 { self.cutoff / (k - 1) as f64 } else { self.cutoff };
        let centers = (0..k).map(|i| i as f64 * spacing).collect();
        (centers, 0.5 / (spacing * spacing))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Main,
    Prior,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Main => "main",
            Head::Prior => "prior",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Representation,
    MainHead,
    PriorHead,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Representation, Partition::MainHead, Partition::PriorHead];

    pub fn head(head: Head) -> Self {
        match head {
            Head::Main => Partition::MainHead,
            Head::Prior => Partition::PriorHead,
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Representation => "repr",
            Partition::MainHead => "main_head",
            Partition::PriorHead => "prior_head",
        })
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repr" | "representation" => Ok(Partition::Representation),
            "main" | "main_head" => Ok(Partition::MainHead),
            "prior" | "prior_head" => Ok(Partition::PriorHead),
            other => Err(Error::input(format!("unknown partition `{other}`"))),
        }
    }
}

/// Contiguous ranges of the flat parameter vector owned by each partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionIndex {
    pub representation: Range<usize>,
    pub main_head: Range<usize>,
    pub prior_head: Range<usize>,
}

impl PartitionIndex {
    pub fn range(&self, p: Partition) -> Range<usize> {
        match p {
            Partition::Representation => self.representation.clone(),
            Partition::MainHead => self.main_head.clone(),
            Partition::PriorHead => self.prior_head.clone(),
        }
    }

    pub fn total(&self) -> usize {
        self.prior_head.end
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct DenseLayer {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct HeadLayout {
    pub hidden: Vec<DenseLayer>,
    /// Readout weights (`hidden_width`) followed by the scalar bias.
    pub out_w: usize,
    pub out_b: usize,
}

/// Offsets of every weight block in the flat vector.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub embedding: usize,
    pub filter: usize,
    pub repr: Vec<DenseLayer>,
    pub main: HeadLayout,
    pub prior: HeadLayout,
    pub index: PartitionIndex,
}

impl Layout {
    pub fn new(arch: &ArchConfig) -> Self {
        let h = arch.hidden_width;
        let k = arch.n_radial_basis;
        let mut off = 0;
        let mut take = |len: usize| {
            let start = off;
            off += len;
            start
        };
        let dense = |take: &mut dyn FnMut(usize) -> usize| DenseLayer { w: take(h * h), b: take(h), n_in: h, n_out: h };
        let embedding = take(arch.species.len() * h);
        let filter = take(h * k);
        let repr: Vec<DenseLayer> = (0..arch.repr_blocks).map(|_| dense(&mut take)).collect();
        let mut head = || HeadLayout {
            hidden: (0..arch.head_blocks).map(|_| dense(&mut take)).collect(),
            out_w: take(h),
            out_b: take(1),
        };
        let main = head();
        let prior = head();
        let repr_end = main.hidden.first().map_or(main.out_w, |l| l.w);
        let main_end = prior.hidden.first().map_or(prior.out_w, |l| l.w);
        let prior_end = prior.out_b + 1;
        Layout {
            embedding,
            filter,
            repr,
            main,
            prior,
            index: PartitionIndex {
                representation: 0..repr_end,
                main_head: repr_end..main_end,
                prior_head: main_end..prior_end,
            },
        }
    }

    pub fn head(&self, head: Head) -> &HeadLayout {
        match head {
            Head::Main => &self.main,
            Head::Prior => &self.prior,
        }
    }
}

/// Loss weights `(λ_E, λ_F)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub energy: f64,
    pub forces: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { energy: 1.0, forces: 100.0 }
    }
}

/// Flat parameter vector plus the architecture that interprets it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub arch: ArchConfig,
    pub values: Vec<T>,
    layout: Layout,
}

impl ModelParams<f64> {
    /// Seeded uniform initialisation scaled by fan-in. Embeddings are drawn
    /// from `U(−1, 1)`; readout biases start at zero (see
    /// [`ModelParams::set_readout_bias`]).
    pub fn init(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(arch.seed);
        let mut values = vec![0.0; layout.index.total()];
        let mut fill = |range: Range<usize>, scale: f64, rng: &mut ChaCha8Rng| {
            for v in &mut values[range] {
                *v = rng.random_range(-scale..scale);
            }
        };
        let h = arch.hidden_width;
        let k = arch.n_radial_basis;
        fill(layout.embedding..layout.embedding + arch.species.len() * h, 1.0, &mut rng);
        fill(layout.filter..layout.filter + h * k, 1.0 / (k as f64).sqrt(), &mut rng);
        let dense_scale = 1.0 / (h as f64).sqrt();
        for l in &layout.repr {
            fill(l.w..l.w + l.n_in * l.n_out, dense_scale, &mut rng);
        }
        for head in [&layout.main, &layout.prior] {
            for l in &head.hidden {
                fill(l.w..l.w + l.n_in * l.n_out, dense_scale, &mut rng);
            }
            fill(head.out_w..head.out_w + h, dense_scale, &mut rng);
        }
        Ok(ModelParams { arch: arch.clone(), values, layout })
    }
}

impl<T: Real> ModelParams<T> {
    pub fn from_values(arch: ArchConfig, values: Vec<T>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if values.len() != layout.index.total() {
            return Err(Error::input(format!(
                "architecture needs {} parameters, got {}",
                layout.index.total(),
                values.len()
            )));
        }
        Ok(ModelParams { arch, values, layout })
    }

    pub fn partition(&self) -> &PartitionIndex {
        &self.layout.index
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, p: Partition) -> &[T] {
        &self.values[self.layout.index.range(p)]
    }

    pub fn slice_mut(&mut self, p: Partition) -> &mut [T] {
        let r = self.layout.index.range(p);
        &mut self.values[r]
    }

    pub fn cutoff(&self) -> T {
        T::lit(self.arch.cutoff)
    }

    pub fn set_readout_bias(&mut self, head: Head, value: T) {
        let at = self.layout.head(head).out_b;
        self.values[at] = value;
    }

    pub fn readout_bias(&self, head: Head) -> T {
        self.values[self.layout.head(head).out_b]
    }

    /// Zeroes the readout weights of `head`, leaving a bias-only model.
    pub fn zero_readout(&mut self, head: Head) {
        let hl = self.layout.head(head).clone();
        for v in &mut self.values[hl.out_w..hl.out_w + self.arch.hidden_width] {
            *v = T::zero();
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            values: self.values.iter().map(|v| U::lit(v.value())).collect(),
            layout: self.layout.clone(),
        }
    }

    fn species_indices(&self, species: &[Species]) -> Result<Vec<usize>> {
        species
            .iter()
            .map(|s| {
                self.arch
                    .species_index(*s)
                    .ok_or_else(|| Error::input(format!("species {s} is not in the model's embedding table")))
            })
            .collect()
    }

    /// Per-atom descriptors `x_i` for a graph built at the cutoff the model is
    /// run with. Differentiable in the positions through the basis and
    /// envelope.
    pub fn featurize(&self, structure: &Structure<T>, graph: &RadiusGraph<T>) -> Result<Vec<Vec<T>>> {
        if graph.n() != structure.len() {
            return Err(Error::input(format!(
                "graph has {} nodes but structure has {} atoms",
                graph.n(),
                structure.len()
            )));
        }
        let idx = self.species_indices(&structure.species)?;
        let edges: Vec<(usize, usize)> = graph.edges().collect();
        Ok(network::descriptors(self, &idx, &structure.positions, &edges, graph.cutoff))
    }

    /// Energy and conservative forces with the given head, using a radius
    /// graph and envelope at `cutoff`.
    pub fn energy_forces_at(
        &self,
        species: &[Species],
        positions: &[Vec3<T>],
        head: Head,
        cutoff: T,
    ) -> Result<(T, Vec<Vec3<T>>)> {
        let eval = self.evaluate(species, positions, head, cutoff, false)?;
        Ok((eval.energy, eval.position_grad.iter().map(|g| g.map(|x| -x)).collect()))
    }

    pub fn forward_energy_forces(&self, structure: &Structure<T>, head: Head) -> Result<(T, Vec<Vec3<T>>)> {
        self.energy_forces_at(&structure.species, &structure.positions, head, self.cutoff())
    }

    /// Energy, `∂E/∂r` and optionally `∂E/∂θ`.
    pub fn evaluate(
        &self,
        species: &[Species],
        positions: &[Vec3<T>],
        head: Head,
        cutoff: T,
        param_grad: bool,
    ) -> Result<Evaluation<T>> {
        if species.len() != positions.len() || species.is_empty() {
            return Err(Error::input("species/positions mismatch or empty structure"));
        }
        let idx = self.species_indices(species)?;
        let edges = edge_list(positions, cutoff);
        Ok(network::evaluate(self, &idx, positions, &edges, cutoff, head, param_grad))
    }

    /// Per-structure loss `λ_E (Ê − E)² + λ_F Σ_i ‖F̂_i − F_i‖²`.
    pub fn loss(&self, structure: &Structure<T>, labels: &Labels<T>, head: Head, weights: LossWeights) -> Result<T> {
        check_labels(structure, labels)?;
        let (e, f) = self.forward_energy_forces(structure, head)?;
        Ok(loss_value(e, &f, labels, weights))
    }

    /// Gradient of [`ModelParams::loss`] with respect to every parameter.
    ///
    /// The force term needs the mixed derivative `∂²E/∂r∂θ` contracted with
    /// the force residual; it is obtained exactly by running the parameter
    /// backward pass on dual-number positions `r + ε (F̂ − F)`.
    pub fn grad_params(
        &self,
        structure: &Structure<T>,
        labels: &Labels<T>,
        head: Head,
        weights: LossWeights,
    ) -> Result<ParamGradient<T>> {
        check_labels(structure, labels)?;
        let cutoff = self.cutoff();
        let idx = self.species_indices(&structure.species)?;
        let edges = edge_list(&structure.positions, cutoff);
        let first = network::evaluate(self, &idx, &structure.positions, &edges, cutoff, head, false);
        let forces: Vec<Vec3<T>> = first.position_grad.iter().map(|g| g.map(|x| -x)).collect();
        let loss = loss_value(first.energy, &forces, labels, weights);

        let dual_params: ModelParams<Dual<T>> = ModelParams {
            arch: self.arch.clone(),
            values: self.values.iter().map(|v| Dual::constant(*v)).collect(),
            layout: self.layout.clone(),
        };
        let dual_pos: Vec<Vec3<Dual<T>>> = structure
            .positions
            .iter()
            .zip(&forces)
            .zip(&labels.forces)
            .map(|((p, fh), f)| [0, 1, 2].map(|k| Dual::new(p[k], fh[k] - f[k])))
            .collect();
        let second = network::evaluate(
            &dual_params,
            &idx,
            &dual_pos,
            &edges,
            Dual::constant(cutoff),
            head,
            true,
        );
        let g = second.param_grad.expect("requested");
        let two = T::lit(2.0);
        let ce = two * T::lit(weights.energy) * (first.energy - labels.energy);
        let cf = two * T::lit(weights.forces);
        let values = g.iter().map(|d| ce * d.re - cf * d.eps).collect();
        Ok(ParamGradient { values, partition: self.layout.index.clone(), loss, energy: first.energy, forces })
    }
}

fn check_labels<T: Real>(structure: &Structure<T>, labels: &Labels<T>) -> Result<()> {
    if labels.forces.len() != structure.len() {
        return Err(Error::input(format!(
            "structure `{}` has {} atoms but {} force labels",
            structure.structure_id,
            structure.len(),
            labels.forces.len()
        )));
    }
    Ok(())
}

fn loss_value<T: Real>(energy: T, forces: &[Vec3<T>], labels: &Labels<T>, w: LossWeights) -> T {
    let de = energy - labels.energy;
    let df: T = forces
        .iter()
        .zip(&labels.forces)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum::<T>())
        .sum();
    T::lit(w.energy) * de * de + T::lit(w.forces) * df
}

fn edge_list<T: Real>(positions: &[Vec3<T>], cutoff: T) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            if crate::structure::distance(&positions[i], &positions[j]) <= cutoff {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Loss gradient over the flat parameter vector, with its partition index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient<T> {
    pub values: Vec<T>,
    pub partition: PartitionIndex,
    /// Loss value at the evaluation point.
    pub loss: T,
    /// Predictions at the evaluation point.
    pub energy: T,
    pub forces: Vec<Vec3<T>>,
}

impl<T: Real> ParamGradient<T> {
    pub fn slice(&self, p: Partition) -> &[T] {
        &self.values[self.partition.range(p)]
    }

    /// Zeroes the slices of the given partitions.
    pub fn mask(&mut self, frozen: &[Partition]) {
        for p in frozen {
            for v in &mut self.values[self.partition.range(*p)] {
                *v = T::zero();
            }
        }
    }
}

/// Model bound to a head and a runtime cutoff; the cutoff defaults to the
/// training cutoff and is replaced by radius refinement.
#[derive(Clone, Debug)]
pub struct ModelForceField<'a, T> {
    pub params: &'a ModelParams<T>,
    pub head: Head,
    pub cutoff: T,
}

impl<'a, T: Real> ModelForceField<'a, T> {
    pub fn new(params: &'a ModelParams<T>, head: Head) -> Self {
        ModelForceField { params, head, cutoff: params.cutoff() }
    }

    pub fn with_cutoff(mut self, cutoff: T) -> Self {
        self.cutoff = cutoff;
        self
    }
}

impl<T: Real> ForceProvider<T> for ModelForceField<'_, T> {
    fn energy_forces(&self, species: &[Species], positions: &[Vec3<T>]) -> Result<(T, Vec<Vec3<T>>)> {
        self.params.energy_forces_at(species, positions, self.head, self.cutoff)
    }
}

/// Builds the radius graph at the model's training cutoff.
pub fn model_graph<T: Real>(params: &ModelParams<T>, structure: &Structure<T>) -> Result<RadiusGraph<T>> {
    build_radius_graph(structure, params.cutoff())
}
