//! Complex signal containers and the interleaved-real flattening used at the
//! neural network boundary.

use num_complex::Complex64;

/// Sequence of complex scalars, the universal signal/channel/beam container.
pub type ComplexVec = Vec<Complex64>;

/// Flatten a complex vector into interleaved `[re0, im0, re1, im1, ...]`.
pub fn flatten(v: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * v.len());
    for z in v {
        out.push(z.re);
        out.push(z.im);
    }
    out
}

/// Rebuild a complex vector from interleaved re/im components.
///
/// Panics if the length is odd; the flat form always has even length by
/// construction.
pub fn unflatten(flat: &[f64]) -> ComplexVec {
    assert!(flat.len() % 2 == 0, "interleaved vector must have even length");
    flat.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

/// Inner product `a^T b` (no conjugation, matching the channel/beam pairing
/// `h^T g`).
pub fn dot_t(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean norm of a complex vector.
pub fn norm_sq(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}
