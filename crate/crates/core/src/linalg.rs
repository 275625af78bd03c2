//! Spectral kernels: cyclic Jacobi eigendecomposition, singular values,
//! thin SVD, Schatten-type norms and the Moore–Penrose pseudo-inverse.
//!
//! Singular values come from one-sided Jacobi rotations applied to `M`
//! itself; symmetric eigenproblems use two-sided cyclic Jacobi.

use crate::error::{invalid, Result};
use crate::matrix::DenseMatrix;

/// Default relative cut-off for [`pseudo_inverse`].
pub const DEFAULT_PINV_RTOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 100;

/// Symmetric eigendecomposition.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues sorted non-increasingly.
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns, in the order of `values`.
    pub vectors: DenseMatrix,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// A rotation for the pair `(p, q)` is skipped once `|a_pq|` is negligible
/// relative to `sqrt(|a_pp a_qq|)`. Iteration stops after a sweep without
/// rotations, or when the off-diagonal norm drops below `1e-16 · trace(|A|)`.
pub fn sym_eigen(a: &DenseMatrix) -> Result<SymEigen> {
    let n = a.rows();
    if n != a.cols() {
        return Err(invalid(format!("sym_eigen needs a square matrix, got {:?}", a.shape())));
    }
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    let scale = (0..n).map(|i| m[(i, i)].abs()).sum::<f64>().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| m[(p, q)] * m[(p, q)])
            .sum::<f64>();
        if off.sqrt() <= 1e-16 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                if apq.abs() <= 1e-16 * (app.abs() * aqq.abs()).sqrt() {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

/// The `min(rows, cols)` singular values of `m`, sorted non-increasingly.
pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    svd(m).s
}

/// Thin singular value decomposition `M = U · diag(s) · Vᵀ`.
///
/// `U` is `rows × k`, `V` is `cols × k` with `k = min(rows, cols)`. Columns
/// paired with an exactly zero singular value are left as zero vectors.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

impl Svd {
    /// Number of singular values above `rel_tol · s_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&s| s > rel_tol * smax).count()
    }
}

/// One-sided (Hestenes) Jacobi: columns of the taller orientation are
/// rotated pairwise until mutually orthogonal. Small singular values keep
/// full relative accuracy, unlike the eigenvalues of a Gram matrix.
pub fn svd(m: &DenseMatrix) -> Svd {
    if m.cols() > m.rows() {
        let t = svd(&m.transpose());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let (rows, k) = m.shape();
    let mut a = m.clone();
    let mut v = DenseMatrix::identity(k);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let sign = if zeta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    a[(i, p)] = c * x - s * y;
                    a[(i, q)] = s * x + c * y;
                }
                for i in 0..k {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..k).map(|j| (0..rows).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let u = DenseMatrix::from_fn(rows, k, |i, c| {
        let j = order[c];
        if norms[j] > 0.0 {
            a[(i, j)] / norms[j]
        } else {
            0.0
        }
    });
    let v = DenseMatrix::from_fn(k, k, |i, c| v[(i, order[c])]);
    Svd { u, s, v }
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DenseMatrix) -> f64 {
    singular_values(m).iter().sum()
}

/// `‖M‖_{S_{2/L}}^{2/L}`: the sum of singular values each raised to `2/L`.
///
/// For `L = 2` this is exactly [`nuclear_norm`].
pub fn schatten_power(m: &DenseMatrix, layers: usize) -> Result<f64> {
    if layers < 2 {
        return Err(invalid(format!("schatten_power needs L >= 2, got {layers}")));
    }
    let sv = singular_values(m);
    if layers == 2 {
        return Ok(sv.iter().sum());
    }
    let p = 2.0 / layers as f64;
    Ok(sv.iter().map(|s| s.powf(p)).sum())
}

pub fn frobenius_sq(m: &DenseMatrix) -> f64 {
    m.frobenius_sq()
}

/// Moore–Penrose pseudo-inverse; singular values at or below
/// `rel_tol · s_max` are treated as zero.
pub fn pseudo_inverse(m: &DenseMatrix, rel_tol: f64) -> Result<DenseMatrix> {
    if !(rel_tol > 0.0) {
        return Err(invalid(format!("rel_tol must be positive, got {rel_tol}")));
    }
    let d = svd(m);
    let r = d.rank(rel_tol);
    let mut out = DenseMatrix::zeros(m.cols(), m.rows());
    for k in 0..r {
        let inv = 1.0 / d.s[k];
        for i in 0..m.cols() {
            let vik = d.v[(i, k)] * inv;
            if vik == 0.0 {
                continue;
            }
            for j in 0..m.rows() {
                out[(i, j)] += vik * d.u[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Entrywise `max(x, 0)`.
pub fn relu(m: &DenseMatrix) -> DenseMatrix {
    m.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Entrywise ReLU derivative with the convention `σ'(0) = 0`.
pub fn relu_mask(m: &DenseMatrix) -> DenseMatrix {
    m.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn appendix_matrix() -> DenseMatrix {
        DenseMatrix::from_rows(&[[-1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]]).unwrap()
    }

    #[test]
    fn diagonal_singular_values() {
        let m = DenseMatrix::from_diag(4, 2, &[3.0, 1.0]);
        let s = singular_values(&m);
        assert_eq!(s.len(), 2);
        assert_relative_eq!(s[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(s[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_matrix_has_zero_spectrum() {
        assert_eq!(singular_values(&DenseMatrix::zeros(5, 2)), vec![0.0, 0.0]);
        assert_eq!(nuclear_norm(&DenseMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn counterexample_norms() {
        let a = appendix_matrix();
        assert!((nuclear_norm(&a) - 3.464).abs() < 1e-3);
        assert!((nuclear_norm(&relu(&a)) - 3.494).abs() < 1e-3);
        assert!(nuclear_norm(&relu(&a)) > nuclear_norm(&a));
    }

    #[test]
    fn schatten_of_diag() {
        let m = DenseMatrix::from_diag(2, 2, &[3.0, 1.0]);
        let v = schatten_power(&m, 4).unwrap();
        assert_relative_eq!(v, 3f64.sqrt() + 1.0, epsilon = 1e-12);
        assert_eq!(schatten_power(&m, 2).unwrap(), nuclear_norm(&m));
        assert!(schatten_power(&m, 1).is_err());
    }

    #[test]
    fn pinv_special_cases() {
        let i3 = DenseMatrix::identity(3);
        let p = pseudo_inverse(&i3, 1e-3).unwrap();
        assert!(p.sub(&i3).unwrap().max_abs() < 1e-14);
        let z = pseudo_inverse(&DenseMatrix::zeros(2, 3), DEFAULT_PINV_RTOL).unwrap();
        assert_eq!(z.shape(), (3, 2));
        assert_eq!(z.max_abs(), 0.0);
        assert!(pseudo_inverse(&i3, 0.0).is_err());
    }

    #[test]
    fn relu_definition() {
        let m = DenseMatrix::from_rows(&[[-1.0, 2.0], [0.0, -3.0]]).unwrap();
        assert_eq!(relu(&m), DenseMatrix::from_rows(&[[0.0, 2.0], [0.0, 0.0]]).unwrap());
        let nonneg = relu(&m);
        assert_eq!(relu(&nonneg), nonneg);
    }

    #[test]
    fn eigen_reconstructs() {
        let a = DenseMatrix::from_rows(&[[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 1.0]]).unwrap();
        let e = sym_eigen(&a).unwrap();
        let d = DenseMatrix::from_diag(3, 3, &e.values);
        let rec = e.vectors.matmul(&d).unwrap().matmul_t(&e.vectors).unwrap();
        assert!(rec.sub(&a).unwrap().max_abs() < 1e-13);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn wide_svd_reconstructs() {
        let m = DenseMatrix::from_rows(&[[1.0, 2.0, 0.0, -1.0], [0.5, -1.0, 3.0, 2.0]]).unwrap();
        let d = svd(&m);
        assert_eq!(d.u.shape(), (2, 2));
        assert_eq!(d.v.shape(), (4, 2));
        let rec = d.u.matmul(&DenseMatrix::from_diag(2, 2, &d.s)).unwrap().matmul_t(&d.v).unwrap();
        assert!(rec.sub(&m).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_product_has_tiny_tail() {
        let l = DenseMatrix::from_rows(&[[1.0, 2.0], [0.3, -1.0], [2.0, 0.5], [1.0, 1.0]]).unwrap();
        let r = DenseMatrix::from_rows(&[[1.0, 0.2, -0.7, 2.0], [0.5, 1.5, 0.1, -1.0]]).unwrap();
        let s = singular_values(&l.matmul(&r).unwrap());
        assert!(s[2] < 1e-14 * s[0] && s[3] < 1e-14 * s[0], "{s:?}");
    }
}
