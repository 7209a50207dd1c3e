//! Dense kernels: blocked Cholesky and blocked triangular solves built on
//! `gemm`, so large covariance matrices factor at matrix-multiply speed.

use nalgebra::{DMatrix, DMatrixViewMut};

const BLOCK: usize = 96;
const SMALL: usize = 512;

/// Outcome of an in-place factorization attempt.
pub(crate) enum CholOutcome {
    Ok,
    /// A pivot had value `pivot` (non-positive or below the relative floor).
    Failed { pivot: f64 },
}

/// In-place lower Cholesky factorization. On success the lower triangle of `a`
/// holds `L` and the strict upper triangle is zeroed. A pivot counts as
/// failed when it does not exceed `floor`.
pub(crate) fn cholesky_in_place(a: &mut DMatrix<f64>, floor: f64) -> CholOutcome {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    if n <= SMALL {
        if let Some((_, pivot)) = unblocked(&mut a.view_mut((0, 0), (n, n)), floor) {
            return CholOutcome::Failed { pivot };
        }
        zero_upper(a);
        return CholOutcome::Ok;
    }
    let mut k = 0;
    while k < n {
        let kb = BLOCK.min(n - k);
        if let Some((_, p)) = unblocked(&mut a.view_mut((k, k), (kb, kb)), floor) {
            return CholOutcome::Failed { pivot: p };
        }
        let m = n - k - kb;
        if m > 0 {
            // Panel: A21 <- A21 L11^-T, one column of L11 at a time.
            for j in 0..kb {
                let ljj = a[(k + j, k + j)];
                for p in 0..j {
                    let ljp = a[(k + j, k + p)];
                    if ljp != 0.0 {
                        for i in k + kb..n {
                            let v = a[(i, k + p)];
                            a[(i, k + j)] -= v * ljp;
                        }
                    }
                }
                for i in k + kb..n {
                    a[(i, k + j)] /= ljj;
                }
            }
            // Trailing update of the lower trapezoid, one column block at a time.
            let panel = a.view((k + kb, k), (m, kb)).clone_owned();
            let mut j = 0;
            while j < m {
                let jb = BLOCK.min(m - j);
                let lhs = panel.rows(j, m - j);
                let rhs_t = panel.rows(j, jb).transpose();
                a.view_mut((k + kb + j, k + kb + j), (m - j, jb))
                    .gemm(-1.0, &lhs, &rhs_t, 1.0);
                j += jb;
            }
        }
        k += kb;
    }
    zero_upper(a);
    CholOutcome::Ok
}

fn zero_upper(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
}

fn unblocked(a: &mut DMatrixViewMut<'_, f64>, floor: f64) -> Option<(usize, f64)> {
    let n = a.nrows();
    let mut w = a.clone_owned();
    let data = w.as_mut_slice();
    let mut failed = None;
    for j in 0..n {
        let (done, rest) = data.split_at_mut(j * n);
        let col = &mut rest[j..n];
        for p in 0..j {
            let cp = &done[p * n + j..p * n + n];
            let ljp = cp[0];
            if ljp != 0.0 {
                for (c, v) in col.iter_mut().zip(cp) {
                    *c -= ljp * v;
                }
            }
        }
        let d = col[0];
        if !(d > floor) {
            failed = Some((j, d));
            break;
        }
        let d = d.sqrt();
        col[0] = d;
        let inv = 1.0 / d;
        for c in col[1..].iter_mut() {
            *c *= inv;
        }
    }
    if failed.is_none() {
        a.copy_from(&w);
    }
    failed
}

/// Solves `L X = B` in place (`L` lower triangular).
pub(crate) fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    let m = b.ncols();
    let mut k = 0;
    while k < n {
        let kb = BLOCK.min(n - k);
        let lkk = l.view((k, k), (kb, kb)).clone_owned();
        {
            let mut bk = b.view_mut((k, 0), (kb, m));
            lkk.solve_lower_triangular_mut(&mut bk);
        }
        let rest = n - k - kb;
        if rest > 0 {
            let xk = b.view((k, 0), (kb, m)).clone_owned();
            let lrest = l.view((k + kb, k), (rest, kb));
            b.view_mut((k + kb, 0), (rest, m)).gemm(-1.0, &lrest, &xk, 1.0);
        }
        k += kb;
    }
}

/// Solves `L^T X = B` in place (`L` lower triangular).
pub(crate) fn solve_upper_t_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    let m = b.ncols();
    let mut end = n;
    while end > 0 {
        let kb = BLOCK.min(end);
        let k = end - kb;
        let ukk = l.view((k, k), (kb, kb)).transpose();
        {
            let mut bk = b.view_mut((k, 0), (kb, m));
            ukk.solve_upper_triangular_mut(&mut bk);
        }
        if k > 0 {
            let xk = b.view((k, 0), (kb, m)).clone_owned();
            // rows 0..k of L^T in columns k..end are L[k..end, 0..k]^T
            let lt = l.view((k, 0), (kb, k)).transpose();
            b.view_mut((0, 0), (k, m)).gemm(-1.0, &lt, &xk, 1.0);
        }
        end = k;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |i, j| (((i * 31 + j * 17) % 23) as f64 - 11.0) / 23.0);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn blocked_cholesky_matches_reference() {
        for &n in &[1, 5, 96, 97, 250] {
            let a = spd(n);
            let mut l = a.clone();
            assert!(matches!(cholesky_in_place(&mut l, 0.0), CholOutcome::Ok));
            let r = &l * l.transpose() - &a;
            assert!(r.amax() < 1e-11 * a.amax(), "n={n} residual {}", r.amax());
        }
    }

    #[test]
    fn blocked_solves_invert_factor() {
        let n = 230;
        let a = spd(n);
        let mut l = a.clone();
        assert!(matches!(cholesky_in_place(&mut l, 0.0), CholOutcome::Ok));
        let b = DMatrix::from_fn(n, 7, |i, j| ((i + 3 * j) % 11) as f64 - 5.0);
        let mut x = b.clone();
        solve_lower_in_place(&l, &mut x);
        assert!((&l * &x - &b).amax() < 1e-10);
        let mut y = b.clone();
        solve_upper_t_in_place(&l, &mut y);
        assert!((l.transpose() * &y - &b).amax() < 1e-10);
    }

    #[test]
    fn detects_indefinite() {
        let mut a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match cholesky_in_place(&mut a, 0.0) {
            CholOutcome::Failed { pivot } => {
                assert!(pivot < 0.0);
            }
            CholOutcome::Ok => panic!("indefinite matrix factored"),
        }
    }
}
