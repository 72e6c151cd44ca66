//! Small dense helpers shared by the solver and the assembly code.

use nalgebra::DMatrix;

/// In-place lower Cholesky factorization `A = L Lᵀ`.
///
/// Pivots that fall below `floor` are replaced by `floor`; the number of
/// replaced pivots is returned. Only the lower triangle of `a` is read and
/// the strict upper triangle is left untouched.
pub(crate) fn cholesky_in_place(a: &mut DMatrix<f64>, floor: f64) -> usize {
    let n = a.nrows();
    let data = a.as_mut_slice();
    let mut replaced = 0;
    // Left-looking, column-major: column j gathers axpys of the finished
    // columns k < j over rows j..n, so every inner loop is contiguous.
    for j in 0..n {
        let (done, rest) = data.split_at_mut(j * n);
        let col = &mut rest[j..n];
        for k in 0..j {
            let ck = &done[k * n + j..k * n + n];
            let l = ck[0];
            if l != 0.0 {
                for (c, v) in col.iter_mut().zip(ck) {
                    *c -= l * v;
                }
            }
        }
        let mut d = col[0];
        if !(d > floor) {
            d = floor;
            replaced += 1;
        }
        let d = d.sqrt();
        col[0] = d;
        for c in &mut col[1..] {
            *c /= d;
        }
    }
    replaced
}

/// Solves `L Lᵀ x = b` in place given the factor produced by [`cholesky_in_place`].
pub(crate) fn cholesky_solve(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    let data = l.as_slice();
    for i in 0..n {
        let col = &data[i * n + i..i * n + n];
        let t = b[i] / col[0];
        b[i] = t;
        for (bk, v) in b[i + 1..].iter_mut().zip(&col[1..]) {
            *bk -= v * t;
        }
    }
    for i in (0..n).rev() {
        let col = &data[i * n + i..i * n + n];
        let s: f64 = col[1..].iter().zip(&b[i + 1..]).map(|(v, bk)| v * bk).sum();
        b[i] = (b[i] - s) / col[0];
    }
}

/// Strict Cholesky attempt; `false` as soon as a pivot is not positive.
fn cholesky_succeeds(mut a: DMatrix<f64>) -> bool {
    cholesky_in_place(&mut a, 0.0) == 0
}

/// Checks `λ_min(a) ≥ −rel_tol·‖a‖_F` by factoring `a + rel_tol·‖a‖_F·I`.
pub(crate) fn is_psd(a: &DMatrix<f64>, rel_tol: f64) -> bool {
    let norm = a.norm();
    if norm == 0.0 {
        return true;
    }
    let shift = rel_tol * norm;
    let mut shifted = a.clone();
    for i in 0..a.nrows() {
        shifted[(i, i)] += shift;
    }
    cholesky_succeeds(shifted)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
