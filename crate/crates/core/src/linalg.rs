//! Small dense matrix helpers for the Mahalanobis supervisor.
//!
//! Matrices are square, row-major `Vec<f64>` of length `d * d`. Dimensions in
//! this crate are tap-layer widths, so nothing here is blocked or vectorized.

/// Lower-triangular Cholesky factor `L` with `a = L Lᵀ`.
///
/// Returns `None` if any pivot is not strictly positive (or not finite).
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), d * d);
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let pivot = diag.sqrt();
        l[j * d + j] = pivot;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / pivot;
        }
    }
    Some(l)
}

/// Inverse of `L Lᵀ` given its Cholesky factor, symmetrized.
pub fn cholesky_inverse(l: &[f64], d: usize) -> Vec<f64> {
    // L⁻¹ by forward substitution, column by column.
    let mut linv = vec![0.0; d * d];
    for col in 0..d {
        for i in col..d {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= l[i * d + k] * linv[k * d + col];
            }
            linv[i * d + col] = s / l[i * d + i];
        }
    }
    // (L Lᵀ)⁻¹ = L⁻ᵀ L⁻¹
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..d {
                s += linv[k * d + i] * linv[k * d + j];
            }
            inv[i * d + j] = s;
            inv[j * d + i] = s;
        }
    }
    inv
}

/// `vᵀ M v`.
pub fn quadratic_form(m: &[f64], v: &[f64]) -> f64 {
    let d = v.len();
    let mut total = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += m[i * d + j] * v[j];
        }
        total += v[i] * row;
    }
    total
}

pub fn is_symmetric(m: &[f64], d: usize, tol: f64) -> bool {
    (0..d).all(|i| (0..i).all(|j| (m[i * d + j] - m[j * d + i]).abs() <= tol))
}
