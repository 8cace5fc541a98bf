//! Polynomial cutoff envelope.
//!
//! `u(d) = 1 − 28 d⁶ + 48 d⁷ − 21 d⁸` for `d = r / r_cut < 1`, zero beyond.
//! Value, first and second derivative all vanish at the cutoff, so energies
//! built from it stay smooth when neighbors cross the cutoff sphere.

use crate::scalar::Real;

pub fn envelope<T: Real>(r: T, r_cut: T) -> T {
    envelope_with_derivative(r, r_cut).0
}

/// `(u, du/dr)`.
pub fn envelope_with_derivative<T: Real>(r: T, r_cut: T) -> (T, T) {
    if r >= r_cut {
        return (T::zero(), T::zero());
    }
    let d = r / r_cut;
    let d2 = d * d;
    let d5 = d2 * d2 * d;
    let d6 = d5 * d;
    let one = T::one();
    let u = one - T::lit(28.0) * d6 + T::lit(48.0) * d6 * d - T::lit(21.0) * d6 * d2;
    // du/dd = −168 d⁵ (1 − d)²
    let dud = -T::lit(168.0) * d5 * (one - d) * (one - d);
    (u, dud / r_cut)
}
