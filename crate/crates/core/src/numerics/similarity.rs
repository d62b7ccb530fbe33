use super::tensor::{dot, norm};
use crate::scalar::Scalar;

/// Norm below which a vector is treated as having no direction.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cosine<S> {
    pub value: S,
    /// Set when either input was (numerically) the zero vector; `value` is 0 then.
    pub degenerate: bool,
}

/// Cosine similarity, with degenerate inputs reported instead of producing NaN.
#[inline]
pub fn cosine_sim_checked<S: Scalar>(a: &[S], b: &[S]) -> Cosine<S> {
    debug_assert_eq!(a.len(), b.len());
    cosine_from_norms(a, norm(a), b, norm(b))
}

/// Cosine similarity; 0 when either vector has norm below [`DEGENERATE_NORM`].
#[inline]
pub fn cosine_sim<S: Scalar>(a: &[S], b: &[S]) -> S {
    cosine_sim_checked(a, b).value
}

/// Same arithmetic as [`cosine_sim`] with the norms supplied by the caller.
#[inline]
pub(crate) fn cosine_from_norms<S: Scalar>(a: &[S], na: S, b: &[S], nb: S) -> Cosine<S> {
    let eps = S::of(DEGENERATE_NORM);
    if na < eps || nb < eps {
        return Cosine {
            value: S::zero(),
            degenerate: true,
        };
    }
    Cosine {
        value: dot(a, b) / (na * nb),
        degenerate: false,
    }
}

/// `∂ cos(a, b) / ∂a`, scaled by `scale` and accumulated into `out`.
/// Contributes nothing for degenerate inputs.
pub fn cosine_grad<S: Scalar>(a: &[S], b: &[S], scale: S, out: &mut [S]) {
    let na = norm(a);
    let nb = norm(b);
    let c = cosine_from_norms(a, na, b, nb);
    if c.degenerate {
        return;
    }
    let inv = S::one() / (na * nb);
    let self_term = c.value / (na * na);
    for ((o, &ai), &bi) in out.iter_mut().zip(a).zip(b) {
        *o += scale * (bi * inv - self_term * ai);
    }
}
