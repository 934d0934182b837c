//! Jacobi-preconditioned conjugate gradient for sparse SPD systems.

use super::{NumericError, SparseMatrix};

/// Solves `A x = b` for symmetric positive definite `A`, starting from zero.
///
/// Stops once `‖Ax − b‖ / ‖b‖ ≤ tol`.
pub fn cg_solve(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, NumericError> {
    cg_solve_from(a, b, vec![0.0; b.len()], tol, max_iter)
}

/// Same as [`cg_solve`] with an explicit initial guess.
pub fn cg_solve_from(
    a: &SparseMatrix,
    b: &[f64],
    mut x: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, NumericError> {
    let n = b.len();
    if a.rows() != a.cols() || a.rows() != n || x.len() != n {
        return Err(NumericError::DimensionMismatch {
            expected: a.rows(),
            found: if x.len() != n { x.len() } else { n },
        });
    }
    if !(tol > 0.0) {
        return Err(NumericError::InvalidTolerance(tol));
    }
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }

    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut ax = a.mul_vec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut residual = norm(&r) / b_norm;
    if residual <= tol {
        return Ok(x);
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for _ in 0..max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            // Breakdown: either converged to machine precision or not SPD.
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        residual = norm(&r) / b_norm;
        if residual <= tol {
            // Guard against drift of the recursive residual.
            a.mul_vec_into(&x, &mut ax);
            let true_res = b
                .iter()
                .zip(&ax)
                .map(|(bi, ai)| (bi - ai) * (bi - ai))
                .sum::<f64>()
                .sqrt()
                / b_norm;
            if true_res <= tol {
                return Ok(x);
            }
            residual = true_res;
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(NumericError::NotConverged { residual })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::TripletBuilder;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
        let m: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|k| m[k][i] * m[k][j]).sum();
                b.push(i, j, v + if i == j { 0.5 } else { 0.0 });
            }
        }
        b.build_symmetric().unwrap()
    }

    #[test]
    fn identity_system() {
        let a = SparseMatrix::identity(4);
        let x = cg_solve(&a, &[1.0, 2.0, 3.0, 4.0], 1e-12, 10).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn diagonal_scaling() {
        let a = SparseMatrix::diagonal_from(&[2.0, 2.0, 2.0]);
        let x = cg_solve(&a, &[2.0, 4.0, 6.0], 1e-12, 10).unwrap();
        for (xi, e) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((xi - e).abs() < 1e-14);
        }
    }

    #[test]
    fn random_spd_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_spd(6, &mut rng);
            let b: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x = cg_solve(&a, &b, 1e-12, 200).unwrap();
            let oracle = dense_solve(a.to_dense(), b);
            for (xi, oi) in x.iter().zip(&oracle) {
                assert!((xi - oi).abs() < 1e-8, "{xi} vs {oi}");
            }
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = SparseMatrix::identity(3);
        assert_eq!(cg_solve(&a, &[0.0; 3], 1e-8, 5).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn dimension_mismatch() {
        let a = SparseMatrix::identity(3);
        assert!(matches!(
            cg_solve(&a, &[1.0, 2.0], 1e-8, 5),
            Err(NumericError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn reports_non_convergence_with_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_spd(6, &mut rng);
        match cg_solve(&a, &[1.0, -1.0, 2.0, 0.5, 0.1, 3.0], 1e-14, 1) {
            Err(NumericError::NotConverged { residual }) => assert!(residual > 1e-14),
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }
}
