//! Small dense linear-algebra helpers: Cholesky factorization and the
//! ridge-regularized normal equations used by the gate update and by the
//! feature-importance methods. The systems involved are tiny (gate width
//! plus one), so a hand-rolled solver keeps the crate dependency-free.

use ndarray::{Array1, Array2, ArrayView1};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Returns `None` when a pivot is not strictly positive.
pub(crate) fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` by forward and back substitution.
pub(crate) fn cholesky_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Multi-output ridge regression via the normal equations:
/// solves `(X^T X + lambda I) B = X^T T` column by column.
///
/// The factorization can only fail on numerically degenerate input; in that
/// case the ridge term is escalated until it succeeds.
pub(crate) fn ridge_normal_equations(
    x: &Array2<f64>,
    t: &Array2<f64>,
    lambda: f64,
) -> Option<Array2<f64>> {
    let q = x.ncols();
    let xtx = x.t().dot(x);
    let xtt = x.t().dot(t);
    let mut lambda = lambda;
    let mut l = None;
    for _ in 0..8 {
        let mut a = xtx.clone();
        for i in 0..q {
            a[[i, i]] += lambda;
        }
        if let Some(f) = cholesky(&a) {
            l = Some(f);
            break;
        }
        lambda *= 1e3;
    }
    let l = l?;
    let mut beta = Array2::<f64>::zeros((q, t.ncols()));
    for j in 0..t.ncols() {
        let col = cholesky_solve(&l, xtt.column(j));
        beta.column_mut(j).assign(&col);
    }
    Some(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs_spd_matrix() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.5], [0.6, 1.5, 2.0]];
        let l = cholesky(&a).unwrap();
        let rebuilt = l.dot(&l.t());
        for (x, y) in rebuilt.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a).is_none());
    }

    #[test]
    fn solve_matches_known_solution() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let l = cholesky(&a).unwrap();
        let b = array![1.0, 2.0];
        let x = cholesky_solve(&l, b.view());
        let r = a.dot(&x);
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert!((r[1] - 2.0).abs() < 1e-12);
    }
}
