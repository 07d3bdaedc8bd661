//! Dense symmetric kernels: cyclic Jacobi eigendecomposition and the
//! spectral functions built on it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative asymmetry accepted by [`sym_eig`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Largest condition number accepted by [`solve_spd`].
pub const MAX_CONDITION: f64 = 1e12;

const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn max(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values[0]
        }
    }

    pub fn min(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values[self.values.len() - 1]
        }
    }

    /// U f(Lambda) U^T.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        let out = &scaled * self.vectors.transpose();
        symmetrize(&out)
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `||S - S^T||_F / ||S||_F`, zero for the zero matrix.
pub fn asymmetry(s: &DMatrix<f64>) -> f64 {
    let norm = s.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (s - s.transpose()).norm() / norm
}

fn check_square(s: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if s.nrows() != s.ncols() {
        return Err(Error::DimensionMismatch {
            context,
            expected: s.nrows(),
            found: s.ncols(),
        });
    }
    Ok(())
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    check_square(s, "symmetric matrix")?;
    let a = asymmetry(s);
    if !(a <= SYMMETRY_TOL) {
        return Err(Error::NotSymmetric { asymmetry: a });
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition `S = U diag(lambda) U^T`.
pub fn sym_eig(s: &DMatrix<f64>) -> Result<SymEig> {
    check_symmetric(s)?;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    Ok(jacobi(symmetrize(s)))
}

fn jacobi(mut a: DMatrix<f64>) -> SymEig {
    let n = a.nrows();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm();
    if scale > 0.0 {
        for _ in 0..MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off.sqrt() <= 1e-17 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq.abs() <= f64::MIN_POSITIVE {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    SymEig { values, vectors }
}

/// Symmetric PSD square root. Eigenvalues down to `-1e-10 * lambda_max`
/// are clamped to zero.
pub fn psd_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eig(s)?;
    check_psd(&eig)?;
    Ok(eig.map(|l| l.max(0.0).sqrt()))
}

fn check_psd(eig: &SymEig) -> Result<()> {
    let floor = -1e-10 * eig.max().max(0.0);
    if eig.min() < floor {
        return Err(Error::NotPsd {
            min_eigenvalue: eig.min(),
        });
    }
    Ok(())
}

fn check_spd(eig: &SymEig) -> Result<()> {
    if !(eig.min() > 0.0) {
        return Err(Error::NotSpd);
    }
    let cond = eig.max() / eig.min();
    if cond > MAX_CONDITION {
        return Err(Error::IllConditioned { condition: cond });
    }
    Ok(())
}

/// Inverse square root of an SPD matrix.
pub fn spd_inv_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eig(s)?;
    check_spd(&eig)?;
    Ok(eig.map(|l| 1.0 / l.sqrt()))
}

/// Inverse of an SPD matrix through its eigendecomposition.
pub fn spd_inverse(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eig(s)?;
    check_spd(&eig)?;
    Ok(eig.map(|l| 1.0 / l))
}

/// `log det S` for SPD `S`, summed over eigenvalues.
pub fn logdet_spd(s: &DMatrix<f64>) -> Result<f64> {
    let eig = sym_eig(s)?;
    if !(eig.min() > 0.0) {
        return Err(Error::NotSpd);
    }
    Ok(eig.values.iter().map(|l| l.ln()).sum())
}

/// Number of eigenvalues above `rel_tol * lambda_max`. The input is
/// symmetrized first.
pub fn rank_eps(s: &DMatrix<f64>, rel_tol: f64) -> usize {
    if s.nrows() != s.ncols() || s.iter().any(|v| !v.is_finite()) {
        return 0;
    }
    let eig = jacobi(symmetrize(s));
    let cut = rel_tol * eig.max().max(1e-300);
    eig.values.iter().filter(|&&l| l > cut).count()
}

/// Solves `S x = b` for SPD `S` by Cholesky after a conditioning check.
pub fn solve_spd(s: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != s.nrows() {
        return Err(Error::DimensionMismatch {
            context: "solve_spd rhs",
            expected: s.nrows(),
            found: b.len(),
        });
    }
    let eig = sym_eig(s)?;
    check_spd(&eig)?;
    let chol = symmetrize(s).cholesky().ok_or(Error::NotSpd)?;
    Ok(chol.solve(b))
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    jacobi(symmetrize(&(m.transpose() * m))).max().max(0.0).sqrt()
}

/// Ratio of extreme singular values, infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// General inverse, rejecting condition numbers above `max_cond`.
pub fn checked_inverse(m: &DMatrix<f64>, max_cond: f64) -> Result<DMatrix<f64>> {
    check_square(m, "inverse")?;
    let cond = condition_number(m);
    if !(cond <= max_cond) {
        return Err(Error::IllConditioned { condition: cond });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::IllConditioned { condition: cond })
}

/// Largest real part over the spectrum of a general square matrix.
pub fn max_real_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}
