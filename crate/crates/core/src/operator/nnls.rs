//! Lawson–Hanson nonnegative least squares.

use nalgebra::{DMatrix, DVector};

/// Solves `min ||A x - b||_2` subject to `x >= 0`.
///
/// Returns `None` when the active-set iteration does not terminate within
/// its iteration budget.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Option<DVector<f64>> {
    let n = a.ncols();
    let max_iter = 30 * n.max(1);
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let mut iter = 0;

    loop {
        let w = a.transpose() * (b - a * &x);
        let mut blocked = vec![false; n];
        let entering = loop {
            let candidate = (0..n)
                .filter(|&j| !passive[j] && !blocked[j] && w[j] > tol)
                .max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i)));
            match candidate {
                None => break None,
                Some(t) => {
                    // Reject an entering column whose unconstrained solution is
                    // not positive; it would be dropped again immediately.
                    passive[t] = true;
                    let z = solve_passive(a, b, &passive);
                    if z[t] > 0.0 {
                        break Some(z);
                    }
                    passive[t] = false;
                    blocked[t] = true;
                }
            }
        };
        let Some(mut z) = entering else {
            return Some(x);
        };

        loop {
            iter += 1;
            if iter > max_iter {
                return None;
            }
            if (0..n).all(|j| !passive[j] || z[j] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in 0..n {
                if passive[j] && z[j] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - z[j]));
                }
            }
            for j in 0..n {
                if passive[j] {
                    x[j] += alpha * (z[j] - x[j]);
                    if x[j] <= 0.0 {
                        x[j] = 0.0;
                        passive[j] = false;
                    }
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
            z = solve_passive(a, b, &passive);
        }
    }
}

/// Least squares restricted to the passive columns; zero elsewhere.
fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..a.ncols()).filter(|&j| passive[j]).collect();
    let sub = a.select_columns(&cols);
    let svd = sub.svd(true, true);
    let sol = svd
        .solve(b, 1e-13)
        .unwrap_or_else(|_| DVector::zeros(cols.len()));
    let mut z = DVector::zeros(a.ncols());
    for (k, &j) in cols.iter().enumerate() {
        z[j] = sol[k];
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_optimum_inside() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = nnls(&a, &b, 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clamps_negative_component() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let x = nnls(&a, &b, 1e-12).unwrap();
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kkt_conditions_hold() {
        let a = DMatrix::from_fn(12, 5, |i, j| (((i * 7 + j * 3) % 11) as f64 - 4.0) / 3.0);
        let b = DVector::from_fn(12, |i, _| ((i * 5) % 7) as f64 - 2.0);
        let x = nnls(&a, &b, 1e-10).unwrap();
        let w = a.transpose() * (&b - &a * &x);
        for j in 0..5 {
            assert!(x[j] >= 0.0);
            if x[j] > 0.0 {
                assert!(w[j].abs() < 1e-8, "gradient {} at active {j}", w[j]);
            } else {
                assert!(w[j] <= 1e-8);
            }
        }
    }
}
