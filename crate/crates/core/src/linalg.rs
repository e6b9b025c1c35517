//! Small dense matrix kernels.
//!
//! Every matrix in this crate is p×p with p small (one in the default
//! experiment), so everything is stored row-major in a flat `Vec<f64>` and
//! the eigenproblem is solved by cyclic Jacobi rotations, which are accurate
//! to a few ulps on well-scaled symmetric input.

use crate::error::{Error, Result};

/// Default relative floor for eigenvalue clamping.
pub const DEFAULT_EIG_TOL: f64 = 1e-12;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {dim}x{dim} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let n = self.dim;
        let mut t = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.data[j * n + i] = self.data[i * n + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.dim, v.len(), "matvec dimension mismatch");
        let n = self.dim;
        (0..n)
            .map(|i| (0..n).map(|j| self.data[i * n + j] * v[j]).sum())
            .collect()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.dim, other.dim);
        Matrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Symmetrizes by averaging with the transpose.
    pub fn symmetrize(&self) -> SymMatrix {
        SymMatrix::from_row_major(self.dim, self.data.clone()).expect("square by construction")
    }
}

/// Symmetric matrix. Construction averages the input with its transpose so
/// that `get(i, j) == get(j, i)` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn from_row_major(dim: usize, mut data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {dim}x{dim} entries, got {}",
                data.len()
            )));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let avg = 0.5 * (data[i * dim + j] + data[j * dim + i]);
                data[i * dim + j] = avg;
                data[j * dim + i] = avg;
            }
        }
        Ok(Self(Matrix { dim, data }))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Matrix::zeros(n);
        for (i, d) in diag.iter().enumerate() {
            m.set(i, i, *d);
        }
        Self(m)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_diag(&[v])
    }

    pub fn zeros(dim: usize) -> Self {
        Self(Matrix::zeros(dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Matrix::identity(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        self.0.matvec(v)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(Matrix {
            dim: self.0.dim,
            data: self.0.data.iter().map(|x| x * s).collect(),
        })
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim(), other.dim());
        SymMatrix(Matrix {
            dim: self.0.dim,
            data: self
                .0
                .data
                .iter()
                .zip(&other.0.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn frobenius(&self) -> f64 {
        self.0.frobenius()
    }

    /// Quadratic form vᵀ M v.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        v.iter().zip(self.matvec(v)).map(|(a, b)| a * b).sum()
    }
}

/// Symmetric eigendecomposition `M = V diag(values) Vᵀ`; eigenvectors are the
/// columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEigen {
    /// Rebuilds `V diag(f(λ)) Vᵀ`.
    pub fn rebuild(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.values.len();
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..n)
                    .map(|k| self.vectors.get(i, k) * mapped[k] * self.vectors.get(j, k))
                    .sum();
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        SymMatrix::from_row_major(n, out).expect("square by construction")
    }
}

/// Cyclic Jacobi eigendecomposition.
pub fn sym_eigen(m: &SymMatrix) -> SymEigen {
    let n = m.dim();
    let mut a = m.as_matrix().as_slice().to_vec();
    let mut v = Matrix::identity(n);
    if n == 1 {
        return SymEigen {
            values: a,
            vectors: v,
        };
    }
    let scale = m.frobenius();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() <= f64::EPSILON * 1e-3 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    SymEigen { values, vectors: v }
}

/// Symmetric square root and inverse square root of an SPD matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    pub dim: usize,
    pub sqrt: SymMatrix,
    pub inv_sqrt: SymMatrix,
    pub log_det: f64,
    /// Set when at least one eigenvalue was raised to the clamp floor.
    pub clamped: bool,
}

fn check_psd(eig: &SymEigen, tol: f64) -> Result<(f64, f64)> {
    let lmax = eig.values.iter().fold(0.0_f64, |acc, l| acc.max(l.abs()));
    let lmin = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !lmax.is_finite() || lmin.is_nan() {
        return Err(Error::NotPsd {
            min_eigenvalue: f64::NAN,
            threshold: 0.0,
        });
    }
    let threshold = -tol * lmax;
    if lmin < threshold {
        return Err(Error::NotPsd {
            min_eigenvalue: lmin,
            threshold,
        });
    }
    Ok((lmin, lmax))
}

/// Eigenvalues are clamped at `tol·λ_max` before rooting. Fails with
/// `NotPsd` if an eigenvalue falls below `−tol·λ_max`, or if the matrix is
/// identically zero (no inverse root exists).
pub fn sym_sqrt(m: &SymMatrix, tol: f64) -> Result<SpdFactor> {
    let eig = sym_eigen(m);
    let (lmin, lmax) = check_psd(&eig, tol)?;
    if lmax == 0.0 {
        return Err(Error::NotPsd {
            min_eigenvalue: 0.0,
            threshold: 0.0,
        });
    }
    let floor = tol * lmax;
    let clamp = |l: f64| l.max(floor);
    Ok(SpdFactor {
        dim: m.dim(),
        sqrt: eig.rebuild(|l| clamp(l).sqrt()),
        inv_sqrt: eig.rebuild(|l| 1.0 / clamp(l).sqrt()),
        log_det: eig.values.iter().map(|&l| clamp(l).ln()).sum(),
        clamped: lmin < floor,
    })
}

/// Symmetric PSD square root only; unlike [`sym_sqrt`] this accepts the
/// zero matrix.
pub fn psd_sqrt(m: &SymMatrix, tol: f64) -> Result<SymMatrix> {
    let eig = sym_eigen(m);
    let (_, lmax) = check_psd(&eig, tol)?;
    let floor = tol * lmax;
    Ok(eig.rebuild(|l| l.max(floor).sqrt()))
}

/// Inverse of an SPD matrix through its eigendecomposition.
pub fn spd_inverse(m: &SymMatrix, tol: f64) -> Result<SymMatrix> {
    let eig = sym_eigen(m);
    let (lmin, lmax) = check_psd(&eig, tol)?;
    if lmin <= tol * lmax {
        return Err(Error::NotPsd {
            min_eigenvalue: lmin,
            threshold: tol * lmax,
        });
    }
    Ok(eig.rebuild(|l| 1.0 / l))
}

/// Lower Cholesky factor, row-major. `None` when a pivot is not positive.
fn cholesky(m: &SymMatrix) -> Option<Vec<f64>> {
    let n = m.dim();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

/// Solves `m x = rhs` for SPD `m`.
pub fn solve_spd(m: &SymMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = m.dim();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "rhs has length {}, matrix is {n}x{n}",
            rhs.len()
        )));
    }
    let Some(l) = cholesky(m) else {
        let eig = sym_eigen(m);
        let lmin = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::NotPsd {
            min_eigenvalue: lmin,
            threshold: 0.0,
        });
    };
    let mut z = rhs.to_vec();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[i * n + k] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
    Ok(z)
}

/// Solves `m X = b` column by column.
pub fn solve_spd_matrix(m: &SymMatrix, b: &Matrix) -> Result<Matrix> {
    let n = m.dim();
    if b.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "rhs is {}x{}, matrix is {n}x{n}",
            b.dim(),
            b.dim()
        )));
    }
    let mut out = Matrix::zeros(n);
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| b.get(i, j)).collect();
        let x = solve_spd(m, &col)?;
        for i in 0..n {
            out.set(i, j, x[i]);
        }
    }
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(dim: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..dim * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                a[i * dim + j] = (0..dim)
                    .map(|k| b[k * dim + i] * b[k * dim + j])
                    .sum::<f64>();
            }
            a[i * dim + i] += 1.0;
        }
        SymMatrix::from_row_major(dim, a).unwrap()
    }

    #[test]
    fn constructor_symmetrizes() {
        let m = SymMatrix::from_row_major(2, vec![1.0, 2.0, 4.0, 3.0]).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 3.0);
        assert!(SymMatrix::from_row_major(0, vec![]).is_err());
        assert!(SymMatrix::from_row_major(2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn sqrt_of_identity() {
        let f = sym_sqrt(&SymMatrix::identity(3), DEFAULT_EIG_TOL).unwrap();
        assert_eq!(f.sqrt, SymMatrix::identity(3));
        assert_eq!(f.inv_sqrt, SymMatrix::identity(3));
        assert_eq!(f.log_det, 0.0);
    }

    #[test]
    fn sqrt_of_diagonal() {
        let f = sym_sqrt(&SymMatrix::from_diag(&[4.0, 9.0]), DEFAULT_EIG_TOL).unwrap();
        assert!((f.sqrt.get(0, 0) - 2.0).abs() < 1e-15);
        assert!((f.sqrt.get(1, 1) - 3.0).abs() < 1e-15);
        assert!((f.inv_sqrt.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((f.inv_sqrt.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.sqrt.get(0, 1), 0.0);
        assert!((f.log_det - 36.0_f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn sqrt_reconstructs_seeded_4x4() {
        let a = random_spd(4, 11);
        let s = sym_sqrt(&a, DEFAULT_EIG_TOL).unwrap().sqrt;
        let ss = s.as_matrix().matmul(s.as_matrix());
        let rel = ss.sub(a.as_matrix()).frobenius() / a.frobenius();
        assert!(rel <= 1e-10, "rel {rel}");
    }

    #[test]
    fn not_psd_is_rejected() {
        let m = SymMatrix::from_diag(&[1.0, -0.5]);
        assert!(matches!(
            sym_sqrt(&m, DEFAULT_EIG_TOL),
            Err(Error::NotPsd { .. })
        ));
        assert!(matches!(
            solve_spd(&m, &[1.0, 1.0]),
            Err(Error::NotPsd { .. })
        ));
        assert!(matches!(
            sym_sqrt(&SymMatrix::zeros(2), DEFAULT_EIG_TOL),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn tiny_negative_eigenvalue_is_clamped() {
        let m = SymMatrix::from_diag(&[1.0, -1e-14]);
        let f = sym_sqrt(&m, DEFAULT_EIG_TOL).unwrap();
        assert!(f.clamped);
        assert!((f.sqrt.get(1, 1) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn psd_sqrt_accepts_zero() {
        let z = psd_sqrt(&SymMatrix::zeros(2), DEFAULT_EIG_TOL).unwrap();
        assert_eq!(z, SymMatrix::zeros(2));
    }

    #[test]
    fn solve_identity_and_diagonal() {
        assert_eq!(
            solve_spd(&SymMatrix::identity(2), &[3.0, 4.0]).unwrap(),
            vec![3.0, 4.0]
        );
        let x = solve_spd(&SymMatrix::from_diag(&[2.0, 5.0]), &[2.0, 5.0]).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(matches!(
            solve_spd(&SymMatrix::identity(2), &[1.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn solve_seeded_residual() {
        let m = random_spd(3, 5);
        let rhs = [1.0, 0.0, 0.0];
        let x = solve_spd(&m, &rhs).unwrap();
        let mx = m.matvec(&x);
        let resid: f64 = mx
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(resid <= 1e-9 * (m.frobenius() * norm2(&x) + norm2(&rhs)));
    }

    #[test]
    fn eigen_of_known_2x2() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let m = SymMatrix::from_row_major(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let mut vals = sym_eigen(&m).values;
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
    }
}
