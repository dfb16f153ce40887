//! Change of variables `x = (tanh(w) + 1) / 2`, mapping all reals into `(0, 1)`.

use super::AttackError;
use crate::numerics::{Graph, NumericsError, Var};

/// Boundary pixels are moved this far inside `(0, 1)` before inversion.
pub const BOUNDARY_NUDGE: f64 = 1e-6;

pub fn reparam(w: f64) -> f64 {
    0.5 * (w.tanh() + 1.0)
}

/// `artanh(2x − 1)` for `x` strictly inside `(0, 1)`.
pub fn reparam_inverse_strict(x: f64) -> Result<f64, AttackError> {
    if !(x > 0.0 && x < 1.0) {
        return Err(AttackError::ReparamBoundary { value: x });
    }
    Ok((2.0 * x - 1.0).atanh())
}

/// Inverse after clamping `x` into `[δ, 1 − δ]` with `δ = 1e-6`.
pub fn reparam_inverse(x: f64) -> f64 {
    let x = x.clamp(BOUNDARY_NUDGE, 1.0 - BOUNDARY_NUDGE);
    (2.0 * x - 1.0).atanh()
}

/// Graph version of [`reparam`].
pub fn reparam_graph(g: &mut Graph, w: Var) -> Result<Var, NumericsError> {
    let t = g.tanh(w)?;
    let half = g.scale(t, 0.5)?;
    g.offset(half, 0.5)
}
