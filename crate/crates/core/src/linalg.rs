//! Small dense symmetric solvers.
//!
//! Block updates and OLS normal equations produce symmetric positive
//! semi-definite systems of modest size (tens of unknowns). We solve them
//! with an LDL^T factorization and fall back to a Jacobi eigendecomposition
//! pseudo-inverse when the system is singular, which yields the minimum-norm
//! least-squares solution.

use ndarray::{Array1, Array2};

/// Relative pivot threshold below which LDL^T gives up and the
/// eigendecomposition path takes over.
const PIVOT_RTOL: f64 = 1e-10;

/// Relative eigenvalue cutoff for the pseudo-inverse.
const EIG_RTOL: f64 = 1e-12;

/// Solution of a symmetric PSD system.
pub struct SymSolve {
    pub x: Array1<f64>,
    /// True when the system was singular and the minimum-norm solution
    /// was returned instead.
    pub rank_deficient: bool,
}

/// Solve `a x = b` for symmetric PSD `a`.
pub fn solve_sym(a: &Array2<f64>, b: &Array1<f64>) -> SymSolve {
    debug_assert_eq!(a.nrows(), a.ncols());
    debug_assert_eq!(a.nrows(), b.len());
    if let Some(x) = ldlt_solve(a, b) {
        return SymSolve {
            x,
            rank_deficient: false,
        };
    }
    SymSolve {
        x: pinv_solve(a, b),
        rank_deficient: true,
    }
}

/// LDL^T without pivoting. Returns None when a pivot falls below the
/// threshold relative to the largest diagonal entry.
fn ldlt_solve(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Some(Array1::zeros(0));
    }
    let max_diag = (0..n).map(|i| a[[i, i]].abs()).fold(0.0_f64, f64::max);
    if max_diag == 0.0 {
        return None;
    }
    let tol = PIVOT_RTOL * max_diag;

    let mut l = Array2::<f64>::eye(n);
    let mut d = Array1::<f64>::zeros(n);
    for j in 0..n {
        let mut dj = a[[j, j]];
        for k in 0..j {
            dj -= l[[j, k]] * l[[j, k]] * d[k];
        }
        if dj.abs() <= tol || !dj.is_finite() {
            return None;
        }
        d[j] = dj;
        for i in (j + 1)..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]] * d[k];
            }
            l[[i, j]] = v / dj;
        }
    }

    // Forward, diagonal, backward substitution.
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let delta = l[[i, k]] * y[k];
            y[i] -= delta;
        }
    }
    for i in 0..n {
        y[i] /= d[i];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let delta = l[[k, i]] * y[k];
            y[i] -= delta;
        }
    }
    Some(y)
}

/// Minimum-norm least-squares solution via eigendecomposition.
fn pinv_solve(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let (values, vectors) = sym_eigen(a);
    let n = a.nrows();
    let max_abs = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cutoff = EIG_RTOL * max_abs;
    let mut x = Array1::<f64>::zeros(n);
    for (idx, &lambda) in values.iter().enumerate() {
        if lambda.abs() <= cutoff {
            continue;
        }
        let q = vectors.column(idx);
        let coeff = q.dot(b) / lambda;
        for i in 0..n {
            x[i] += coeff * q[i];
        }
    }
    x
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvectors as columns).
pub fn sym_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut q = Array2::<f64>::eye(n);
    if n <= 1 {
        return (m.diag().to_owned(), q);
    }

    let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-15 * norm.max(1e-300);

    for _sweep in 0..64 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for r in (p + 1)..n {
                off += m[[p, r]] * m[[p, r]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apq = m[[p, r]];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[r, r]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for i in 0..n {
                    let mip = m[[i, p]];
                    let miq = m[[i, r]];
                    m[[i, p]] = c * mip - s * miq;
                    m[[i, r]] = s * mip + c * miq;
                }
                for i in 0..n {
                    let mpi = m[[p, i]];
                    let mqi = m[[r, i]];
                    m[[p, i]] = c * mpi - s * mqi;
                    m[[r, i]] = s * mpi + c * mqi;
                }
                for i in 0..n {
                    let qip = q[[i, p]];
                    let qiq = q[[i, r]];
                    q[[i, p]] = c * qip - s * qiq;
                    q[[i, r]] = s * qip + c * qiq;
                }
            }
        }
    }
    (m.diag().to_owned(), q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_well_conditioned_system() {
        let a = array![[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let x_true = array![1.0, -2.0, 3.0];
        let b = a.dot(&x_true);
        let sol = solve_sym(&a, &b);
        assert!(!sol.rank_deficient);
        for i in 0..3 {
            assert!((sol.x[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_system_returns_min_norm() {
        // Rank-1 matrix; b lives in the column space.
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let b = array![2.0, 2.0];
        let sol = solve_sym(&a, &b);
        assert!(sol.rank_deficient);
        // Solutions are x1 + x2 = 2; minimum norm is (1, 1).
        assert!((sol.x[0] - 1.0).abs() < 1e-10);
        assert!((sol.x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_matrix_gives_zero_solution() {
        let a = Array2::<f64>::zeros((3, 3));
        let b = array![1.0, 2.0, 3.0];
        let sol = solve_sym(&a, &b);
        assert!(sol.rank_deficient);
        assert!(sol.x.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn eigen_recovers_diagonal() {
        let a = array![[2.0, 0.0], [0.0, 5.0]];
        let (vals, _) = sym_eigen(&a);
        let mut v: Vec<f64> = vals.to_vec();
        v.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((v[0] - 2.0).abs() < 1e-12);
        assert!((v[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let a = array![
            [3.0, 1.0, 0.5],
            [1.0, 2.0, -0.25],
            [0.5, -0.25, 1.5]
        ];
        let (vals, vecs) = sym_eigen(&a);
        let mut recon = Array2::<f64>::zeros((3, 3));
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    recon[[i, j]] += vals[k] * vecs[[i, k]] * vecs[[j, k]];
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((recon[[i, j]] - a[[i, j]]).abs() < 1e-10);
            }
        }
    }
}
