//! Small dense linear solvers shared by the quantitative analyses.

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
/// Pivots are chosen by f64 magnitude, which is also well-defined for the
/// exact backend (it only influences which exact pivot is used).
pub fn solve_dense<S: Scalar>(mut a: Vec<Vec<S>>, mut b: Vec<S>) -> Result<Vec<S>> {
    let n = b.len();
    debug_assert!(a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let pivot = (col..n)
            .filter(|&r| !a[r][col].is_zero())
            .max_by(|&r1, &r2| {
                a[r1][col]
                    .pivot_weight()
                    .total_cmp(&a[r2][col].pivot_weight())
            })
            .ok_or(Error::SingularSystem)?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col].clone();
        for r in col + 1..n {
            if a[r][col].is_zero() {
                continue;
            }
            let factor = a[r][col].clone() / diag.clone();
            let (upper, lower) = a.split_at_mut(col + 1);
            let prow = &upper[col];
            let row = &mut lower[r - col - 1];
            for c in col..n {
                row[c] = row[c].clone() - factor.clone() * prow[c].clone();
            }
            let bc = b[col].clone();
            b[r] = b[r].clone() - factor * bc;
        }
    }
    let mut x = vec![S::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row].clone();
        for c in row + 1..n {
            acc = acc - a[row][c].clone() * x[c].clone();
        }
        if a[row][row].is_zero() {
            return Err(Error::SingularSystem);
        }
        x[row] = acc / a[row][row].clone();
    }
    Ok(x)
}

/// Jacobi iteration for systems in reachability form `x = M x + c` with a
/// substochastic sparse `M`. Starts from zero (values increase monotonically
/// toward the unique fixed point) and stops when the residual drops below
/// `1e-12`, capped at `10^6` sweeps.
pub fn solve_fixpoint_jacobi(rows: &[Vec<(usize, f64)>], c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut x = vec![0.0_f64; n];
    let mut next = vec![0.0_f64; n];
    for _ in 0..1_000_000 {
        let mut residual = 0.0_f64;
        for i in 0..n {
            let mut acc = c[i];
            for &(j, w) in &rows[i] {
                acc += w * x[j];
            }
            residual = residual.max((acc - x[i]).abs());
            next[i] = acc;
        }
        std::mem::swap(&mut x, &mut next);
        if residual <= 1e-12 {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::ratio;
    use num::BigRational;

    #[test]
    fn dense_solver_exact_backend() {
        // 2x + y = 5, x - y = 1  =>  x = 2, y = 1
        let a: Vec<Vec<BigRational>> = vec![
            vec![ratio(2, 1), ratio(1, 1)],
            vec![ratio(1, 1), ratio(-1, 1)],
        ];
        let b = vec![ratio(5, 1), ratio(1, 1)];
        let x = solve_dense(a, b).unwrap();
        assert_eq!(x, vec![ratio(2, 1), ratio(1, 1)]);
    }

    #[test]
    fn dense_solver_reports_singularity() {
        let a: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        let b = vec![1.0, 2.0];
        assert!(solve_dense(a, b).is_err());
    }

    #[test]
    fn jacobi_matches_direct_solution() {
        // Random-walk absorption: x0 = 0.5 x1 + 0.25, x1 = 0.5 x0 + 0.0
        let rows = vec![vec![(1, 0.5)], vec![(0, 0.5)]];
        let c = vec![0.25, 0.0];
        let x = solve_fixpoint_jacobi(&rows, &c);
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-10);
        assert!((x[1] - 1.0 / 6.0).abs() < 1e-10);
    }
}
