//! Forward pass and hand-written reverse pass of the model.

use super::envelope::envelope_with_derivative;
use super::{DenseLayer, Head, ModelParams};
use crate::scalar::Real;
use crate::structure::Vec3;

/// Result of one model evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub energy: T,
    /// `∂E/∂r_i`; forces are the negation.
    pub position_grad: Vec<Vec3<T>>,
    /// `∂E/∂θ` over the flat vector, when requested.
    pub param_grad: Option<Vec<T>>,
}

#[inline]
fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn ssp<T: Real>(x: T) -> T {
    softplus(x) - T::lit(std::f64::consts::LN_2)
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

struct Edge<T> {
    i: usize,
    j: usize,
    unit: Vec3<T>,
    basis: Vec<T>,
    dbasis: Vec<T>,
    filter: Vec<T>,
}

fn edges_with_basis<T: Real>(
    p: &ModelParams<T>,
    positions: &[Vec3<T>],
    pairs: &[(usize, usize)],
    cutoff: T,
) -> Vec<Edge<T>> {
    let (centers, gamma) = p.arch.radial_basis();
    let centers: Vec<T> = centers.into_iter().map(T::lit).collect();
    let gamma = T::lit(gamma);
    let h = p.arch.hidden_width;
    let k = p.arch.n_radial_basis;
    let wf = &p.values[p.layout().filter..p.layout().filter + h * k];
    let two = T::lit(2.0);
    let mut out = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        let d = crate::structure::sub(&positions[i], &positions[j]);
        let r = crate::structure::norm(&d);
        let (u, du) = envelope_with_derivative(r, cutoff);
        let mut basis = Vec::with_capacity(k);
        let mut dbasis = Vec::with_capacity(k);
        for &mu in &centers {
            let g = (-gamma * (r - mu) * (r - mu)).exp();
            let dg = -two * gamma * (r - mu) * g;
            basis.push(g * u);
            dbasis.push(dg * u + g * du);
        }
        let filter = (0..h)
            .map(|a| (0..k).map(|c| wf[a * k + c] * basis[c]).sum())
            .collect();
        out.push(Edge { i, j, unit: d.map(|x| x / r), basis, dbasis, filter });
    }
    out
}

fn embedding<'a, T: Real>(p: &'a ModelParams<T>, s: usize) -> &'a [T] {
    let h = p.arch.hidden_width;
    let at = p.layout().embedding + s * h;
    &p.values[at..at + h]
}

fn descriptors_from_edges<T: Real>(p: &ModelParams<T>, species: &[usize], edges: &[Edge<T>]) -> Vec<Vec<T>> {
    let mut x: Vec<Vec<T>> = species.iter().map(|&s| embedding(p, s).to_vec()).collect();
    for e in edges {
        let (ei, ej) = (embedding(p, species[e.i]), embedding(p, species[e.j]));
        for a in 0..x[0].len() {
            x[e.i][a] += e.filter[a] * ej[a];
            x[e.j][a] += e.filter[a] * ei[a];
        }
    }
    x
}

pub(super) fn descriptors<T: Real>(
    p: &ModelParams<T>,
    species: &[usize],
    positions: &[Vec3<T>],
    pairs: &[(usize, usize)],
    cutoff: T,
) -> Vec<Vec<T>> {
    let edges = edges_with_basis(p, positions, pairs, cutoff);
    descriptors_from_edges(p, species, &edges)
}

/// Pre-activations of every dense layer applied to `input`, plus the final
/// activation.
fn dense_stack<T: Real>(values: &[T], layers: &[DenseLayer], input: &[T]) -> (Vec<Vec<T>>, Vec<T>) {
    let mut pre = Vec::with_capacity(layers.len());
    let mut a = input.to_vec();
    for l in layers {
        let w = &values[l.w..l.w + l.n_in * l.n_out];
        let b = &values[l.b..l.b + l.n_out];
        let z: Vec<T> = (0..l.n_out)
            .map(|o| b[o] + (0..l.n_in).map(|c| w[o * l.n_in + c] * a[c]).sum::<T>())
            .collect();
        a = z.iter().map(|&v| ssp(v)).collect();
        pre.push(z);
    }
    (pre, a)
}

/// Back-propagates `g = ∂E/∂(stack output)` through the stack, accumulating
/// weight gradients into `grad` when given, and returns `∂E/∂input`.
fn dense_stack_backward<T: Real>(
    values: &[T],
    layers: &[DenseLayer],
    input: &[T],
    pre: &[Vec<T>],
    mut g: Vec<T>,
    mut grad: Option<&mut [T]>,
) -> Vec<T> {
    for (li, l) in layers.iter().enumerate().rev() {
        let w = &values[l.w..l.w + l.n_in * l.n_out];
        let gz: Vec<T> = g.iter().zip(&pre[li]).map(|(&gi, &z)| gi * sigmoid(z)).collect();
        if let Some(grad) = grad.as_deref_mut() {
            let a_in: Vec<T> = if li == 0 { input.to_vec() } else { pre[li - 1].iter().map(|&z| ssp(z)).collect() };
            for o in 0..l.n_out {
                grad[l.b + o] += gz[o];
                for c in 0..l.n_in {
                    grad[l.w + o * l.n_in + c] += gz[o] * a_in[c];
                }
            }
        }
        g = (0..l.n_in).map(|c| (0..l.n_out).map(|o| w[o * l.n_in + c] * gz[o]).sum()).collect();
    }
    g
}

pub(super) fn evaluate<T: Real>(
    p: &ModelParams<T>,
    species: &[usize],
    positions: &[Vec3<T>],
    pairs: &[(usize, usize)],
    cutoff: T,
    head: Head,
    want_param_grad: bool,
) -> Evaluation<T> {
    let n = species.len();
    let hw = p.arch.hidden_width;
    let k = p.arch.n_radial_basis;
    let lay = p.layout();
    let hl = lay.head(head);
    let v = &p.values;

    let edges = edges_with_basis(p, positions, pairs, cutoff);
    let x = descriptors_from_edges(p, species, &edges);

    let out_w = &v[hl.out_w..hl.out_w + hw];
    let out_b = v[hl.out_b];
    let mut grad = want_param_grad.then(|| vec![T::zero(); v.len()]);
    let mut energy = T::zero();
    let mut gx: Vec<Vec<T>> = Vec::with_capacity(n);
    for xi in &x {
        let (repr_pre, hidden) = dense_stack(v, &lay.repr, xi);
        let (head_pre, act) = dense_stack(v, &hl.hidden, &hidden);
        energy += out_b + out_w.iter().zip(&act).map(|(&a, &b)| a * b).sum::<T>();

        if let Some(g) = grad.as_deref_mut() {
            g[hl.out_b] += T::one();
            for a in 0..hw {
                g[hl.out_w + a] += act[a];
            }
        }
        let g_hidden = dense_stack_backward(v, &hl.hidden, &hidden, &head_pre, out_w.to_vec(), grad.as_deref_mut());
        gx.push(dense_stack_backward(v, &lay.repr, xi, &repr_pre, g_hidden, grad.as_deref_mut()));
    }

    let mut position_grad = vec![[T::zero(); 3]; n];
    if let Some(g) = grad.as_deref_mut() {
        for (i, &s) in species.iter().enumerate() {
            let at = lay.embedding + s * hw;
            for a in 0..hw {
                g[at + a] += gx[i][a];
            }
        }
    }
    for e in &edges {
        let (si, sj) = (species[e.i], species[e.j]);
        let (ei, ej) = (embedding(p, si), embedding(p, sj));
        let g_filter: Vec<T> = (0..hw).map(|a| gx[e.i][a] * ej[a] + gx[e.j][a] * ei[a]).collect();
        if let Some(g) = grad.as_deref_mut() {
            for a in 0..hw {
                g[lay.embedding + sj * hw + a] += gx[e.i][a] * e.filter[a];
                g[lay.embedding + si * hw + a] += gx[e.j][a] * e.filter[a];
                for c in 0..k {
                    g[lay.filter + a * k + c] += g_filter[a] * e.basis[c];
                }
            }
        }
        let wf = &v[lay.filter..lay.filter + hw * k];
        let de_dr: T = (0..k)
            .map(|c| (0..hw).map(|a| g_filter[a] * wf[a * k + c]).sum::<T>() * e.dbasis[c])
            .sum();
        for d in 0..3 {
            let t = de_dr * e.unit[d];
            position_grad[e.i][d] += t;
            position_grad[e.j][d] -= t;
        }
    }

    Evaluation { energy, position_grad, param_grad: grad }
}
