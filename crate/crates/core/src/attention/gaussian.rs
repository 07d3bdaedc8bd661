use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::{AffineField, GaussianMeasure};
use crate::params::{AttentionParams, Variant};

/// Condition number above which `A = K^T Q` is treated as singular.
pub const SINGULAR_A_COND: f64 = 1e10;

/// Which inner product enters the matrix `C` of the Gaussian Sinkhorn
/// field `C = S^{1/2} (S^{1/2} P S^{1/2} + eps^2/4 I)^{1/2} S^{-1/2} - eps/2 I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkhornCForm {
    /// `P = A^T Sigma A`: the conditional mean is `G^{-1} A x`.
    ATransposeSigmaA,
    /// `P = A Sigma A^T`; agrees with the first form when `A` is normal.
    ASigmaATranspose,
}

pub fn sinkhorn_gaussian_c(
    sigma: &DMatrix<f64>,
    a: &DMatrix<f64>,
    eps: f64,
    form: SinkhornCForm,
) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    let root = linalg::psd_sqrt(sigma)?;
    let inv_root = linalg::spd_inv_sqrt(sigma)?;
    let p = match form {
        SinkhornCForm::ATransposeSigmaA => a.transpose() * sigma * a,
        SinkhornCForm::ASigmaATranspose => a * sigma * a.transpose(),
    };
    let inner = linalg::symmetrize(&(&root * p * &root))
        + DMatrix::identity(d, d) * (eps * eps / 4.0);
    let mid = linalg::psd_sqrt(&inner)?;
    Ok(&root * mid * &inv_root - DMatrix::identity(d, d) * (eps / 2.0))
}

/// `P = (Sigma^{-1} + 2 K^T K)^{-1}` for any psd `Sigma`, singular or large.
/// With `Sigma = U diag(s) U^T` and `G = 2 U^T K^T K U`,
/// `P = U W T^{-1} W U^T` where `W = diag(sqrt(s_i / (1 + s_i G_ii)))` and
/// `T = diag(1 / (1 + s_i G_ii)) + W G W` has unit diagonal.
pub fn l2_blend(sigma: &DMatrix<f64>, ktk: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = linalg::sym_eig(sigma)?;
    let d = sigma.nrows();
    let u = &eig.vectors;
    let g = u.transpose() * ktk * u * 2.0;
    let s: Vec<f64> = eig.values.iter().map(|l| l.max(0.0)).collect();
    let c2: Vec<f64> = (0..d).map(|i| 1.0 / (1.0 + s[i] * g[(i, i)])).collect();
    let w: Vec<f64> = (0..d).map(|i| (s[i] * c2[i]).sqrt()).collect();
    let mut t = DMatrix::from_fn(d, d, |i, j| w[i] * w[j] * g[(i, j)]);
    for i in 0..d {
        t[(i, i)] += c2[i];
    }
    let t_inv = linalg::spd_inverse(&linalg::symmetrize(&t))?;
    let uw = u * DMatrix::from_diagonal(&DVector::from_vec(w));
    Ok(linalg::symmetrize(&(&uw * t_inv * uw.transpose())))
}

fn check_spd_sigma(sigma: &DMatrix<f64>) -> Result<()> {
    let eig = linalg::sym_eig(sigma)?;
    let ratio = if eig.max() > 0.0 {
        eig.min() / eig.max()
    } else {
        0.0
    };
    if !(ratio >= 1e-14) {
        return Err(Error::SingularSigma { ratio });
    }
    Ok(())
}

fn checked_a_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = linalg::condition_number(a);
    if !(cond <= SINGULAR_A_COND) {
        return Err(Error::SingularA { condition: cond });
    }
    a.clone()
        .try_inverse()
        .ok_or(Error::SingularA { condition: cond })
}

/// Gaussian Sinkhorn field with a chosen form of `C`.
pub fn velocity_gaussian_sinkhorn(
    params: &AttentionParams,
    g: &GaussianMeasure,
    form: SinkhornCForm,
) -> Result<AffineField> {
    let d = g.dim();
    let a = params.a();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: "A = K^T Q",
            expected: d,
            found: a.nrows(),
        });
    }
    let a_inv = checked_a_inverse(&a)?;
    check_spd_sigma(&g.sigma)?;
    let c = sinkhorn_gaussian_c(&g.sigma, &a, params.eps, form)?;
    let sigma_inv = linalg::spd_inverse(&g.sigma)?;
    let n = a_inv.transpose() * sigma_inv * c;
    let v = params.v() / params.eps;
    let b = &v * (DMatrix::identity(d, d) - &n) * &g.alpha;
    Ok(AffineField { m: v * n, b })
}

/// Closed-form velocity of a Gaussian measure: an affine map `M x + b`.
pub fn velocity_gaussian(params: &AttentionParams, g: &GaussianMeasure) -> Result<AffineField> {
    let d = g.dim();
    if params.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "gaussian dimension",
            expected: params.dim(),
            found: d,
        });
    }
    if params.masked {
        return Err(Error::UnsupportedVariant(
            "masked layer on a Gaussian measure".into(),
        ));
    }
    let sigma = &g.sigma;
    let alpha = &g.alpha;
    match params.variant {
        Variant::Softmax => {
            let v = params.v();
            Ok(AffineField {
                m: v * sigma * params.a(),
                b: v * alpha,
            })
        }
        Variant::MultiHead => {
            let mut m = DMatrix::zeros(d, d);
            let mut b = DVector::zeros(d);
            for h in &params.heads {
                m += &h.v * sigma * h.a();
                b += &h.v * alpha;
            }
            Ok(AffineField { m, b })
        }
        Variant::Linear => {
            let second = sigma + alpha * alpha.transpose();
            Ok(AffineField {
                m: params.v() * second * params.a(),
                b: DVector::zeros(d),
            })
        }
        Variant::LinearEps => {
            let v = params.v();
            Ok(AffineField {
                m: v * sigma * params.a(),
                b: v * alpha / params.eps,
            })
        }
        Variant::L2 => {
            let ktk = params.k().transpose() * params.k();
            let p = l2_blend(sigma, &ktk)?;
            let v = params.v();
            let m = v * &p * params.a() * 2.0;
            // (I + 2 Sigma K^T K)^{-1} = I - 2 P K^T K
            let b = v * (alpha - &p * (&ktk * alpha) * 2.0);
            Ok(AffineField { m, b })
        }
        Variant::Sinkhorn => velocity_gaussian_sinkhorn(params, g, SinkhornCForm::ATransposeSigmaA),
        Variant::Sigmoid | Variant::Relu | Variant::Exp => Err(Error::UnsupportedVariant(
            format!("{} does not preserve Gaussian measures", params.variant),
        )),
    }
}
