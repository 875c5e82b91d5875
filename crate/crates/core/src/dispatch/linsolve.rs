//! Small dense solver for the KKT systems.
//!
//! Deliberately separate from the linear algebra the simulator uses, so the
//! oracle does not share numerics with the thing it checks.

use crate::error::DispatchError;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, DispatchError> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(DispatchError::Singular(format!("matrix is not {n}x{n}")));
    }
    let scale = a
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() <= 1e-13 * scale {
            return Err(DispatchError::Singular(format!("no pivot in column {col}")));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            let (upper, lower) = a.split_at_mut(row);
            for (x, p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_with_row_swap() {
        let a = vec![vec![0.0, 2.0], vec![1.0, 1.0]];
        let x = solve_dense(a, vec![4.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn reports_singular() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(matches!(solve_dense(a, vec![1.0, 2.0]), Err(DispatchError::Singular(_))));
    }

    #[test]
    fn empty_system() {
        assert_eq!(solve_dense(vec![], vec![]).unwrap(), Vec::<f64>::new());
    }
}
