//! Small dense linear-algebra helpers shared by the rest of the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition number above which a solve is treated as singular.
pub const MAX_CONDITION: f64 = 1e14;

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// LU factorization that refuses singular or numerically singular inputs.
pub struct Factor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Factor {
    pub fn new(m: &DMatrix<f64>, context: &'static str) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension {
                context,
                expected: "square matrix".into(),
                actual: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Singular {
                context,
                cond: f64::NAN,
            });
        }
        let lu = m.clone().lu();
        // Pivots give a cheap lower bound on how close to singular we are;
        // only fall back to an SVD when they look suspicious.
        let u = lu.u();
        let diag_max = u.diagonal().amax();
        let diag_min = u
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |a, b| a.min(b.abs()));
        if diag_min == 0.0 || diag_max / diag_min > 1e10 {
            let cond = condition_number(m);
            if !cond.is_finite() || cond > MAX_CONDITION {
                return Err(Error::Singular { context, cond });
            }
        }
        Ok(Self { lu })
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(b).expect("factor checked non-singular")
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(b).expect("factor checked non-singular")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.lu.try_inverse().expect("factor checked non-singular")
    }
}

/// Computes `X · A⁻¹` for a row block `X`.
pub fn right_solve(x: &DMatrix<f64>, a: &Factor) -> DMatrix<f64> {
    // X A⁻¹ = (A⁻ᵀ Xᵀ)ᵀ; transpose solve through the inverse is fine at the
    // sizes used here.
    x * a.inverse()
}

pub fn sym_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn skew_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] - a[(j, i)]))
}

/// Smallest eigenvalue of the symmetric part of `a`, with its eigenvector.
pub fn min_eigen(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(sym_part(a));
    let (idx, val) =
        eig.eigenvalues
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
            );
    (val, eig.eigenvectors.column(idx).into_owned())
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= tol
}

/// Numerical rank from singular values with a relative threshold.
pub fn rank(a: &DMatrix<f64>) -> usize {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let tol = max * 1e-12 * a.nrows().max(a.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Orthonormal basis (columns) of the null space of the row block `a`.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let k = n - rank(a);
    let eig = SymmetricEigen::new(a.transpose() * a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    DMatrix::from_fn(n, k, |r, c| eig.eigenvectors[(r, order[c])])
}

/// Left inverse `(GᵀG)⁻¹Gᵀ` of a full-column-rank matrix, built from a thin QR
/// factorization instead of forming the normal equations.
pub fn left_inverse(g: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let qr = g.clone().qr();
    let r = qr.r();
    let qt = qr.q().transpose();
    r.solve_upper_triangular(&qt)
}

/// Number of independent entries of a symmetric `n × n` matrix.
pub fn vech_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Upper-triangle index pairs in row-major order.
pub fn vech_indices(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

/// Decimal rendering that round-trips an `f64` bit-exactly (17 significant digits).
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_annihilates() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]);
        let n = null_space(&a);
        assert_eq!(n.ncols(), 2);
        assert!((&a * &n).amax() < 1e-12);
        assert!((n.transpose() * &n - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn left_inverse_matches_normal_equations() {
        let g = DMatrix::from_row_slice(3, 1, &[0.0, 2.0, 1.0]);
        let li = left_inverse(&g).unwrap();
        let expected = (g.transpose() * &g).try_inverse().unwrap() * g.transpose();
        assert!((li - expected).amax() < 1e-15);
    }

    #[test]
    fn singular_factor_reports_condition() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        match Factor::new(&m, "test") {
            Err(Error::Singular { cond, .. }) => assert!(cond > MAX_CONDITION),
            _ => panic!("expected singular"),
        }
    }

    #[test]
    fn fmt17_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, std::f64::consts::PI, 1e22] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn skew_part_is_exactly_antisymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 1.7, -0.2, 4.1]);
        let s = skew_part(&a);
        assert_eq!(&s + s.transpose(), DMatrix::zeros(2, 2));
    }
}
