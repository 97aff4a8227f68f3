//! Finite-difference oracle shared by unit tests.

use crate::matrix::Matrix;

/// Central differences of `f` with respect to every entry of `at`.
pub fn central_difference(at: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut out = Matrix::zeros(at.rows(), at.cols());
    let mut probe = at.clone();
    for i in 0..at.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let fp = f(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let fm = f(&probe);
        probe.as_mut_slice()[i] = orig;
        out.as_mut_slice()[i] = (fp - fm) / (2.0 * h);
    }
    out
}

/// `||a - b|| / max(||a||, ||b||)` in the Euclidean norm, 0 when both vanish.
pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let norm = |m: &Matrix| m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = a.zip_map(b, |x, y| x - y);
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
