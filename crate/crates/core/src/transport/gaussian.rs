//! Closed forms for Gaussian measures: Bures-Wasserstein distance and the
//! entropic coupling for the cost `|Qx - Ky|^2 / (2 eps)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::GaussianMeasure;

/// `W_2` between two Gaussians.
pub fn bures_wasserstein(g1: &GaussianMeasure, g2: &GaussianMeasure) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            context: "bures-wasserstein",
            expected: g1.dim(),
            found: g2.dim(),
        });
    }
    let root = linalg::psd_sqrt(&g1.sigma)?;
    let cross = linalg::psd_sqrt(&linalg::symmetrize(&(&root * &g2.sigma * &root)))?;
    let b2 = (g1.sigma.trace() + g2.sigma.trace() - 2.0 * cross.trace()).max(0.0);
    let m2 = (&g1.alpha - &g2.alpha).norm_squared();
    Ok((m2 + b2).sqrt())
}

/// Entropic optimal coupling of two Gaussians.
#[derive(Debug, Clone)]
pub struct GaussianCoupling {
    pub mean: DVector<f64>,
    /// Joint covariance `[[Sigma, X], [X^T, Omega]]`.
    pub covariance: DMatrix<f64>,
    /// `X = Cov(x, y) = A^{-1} C^T`.
    pub cross: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

fn check_inputs(
    g1: &GaussianMeasure,
    g2: &GaussianMeasure,
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    eps: f64,
) -> Result<DMatrix<f64>> {
    let d = g1.dim();
    if g2.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "coupled measures",
            expected: d,
            found: g2.dim(),
        });
    }
    if q.shape() != (d, d) || k.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            context: "square query/key matrices",
            expected: d,
            found: q.nrows(),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    for s in [&g1.sigma, &g2.sigma] {
        let eig = linalg::sym_eig(s)?;
        if !(eig.min() > 0.0) {
            return Err(Error::NotSpd);
        }
    }
    let a = k.transpose() * q;
    let cond = linalg::condition_number(&a);
    if !(cond <= crate::attention::SINGULAR_A_COND) {
        return Err(Error::SingularA { condition: cond });
    }
    Ok(a)
}

pub fn eot_gaussian_coupling(
    g1: &GaussianMeasure,
    g2: &GaussianMeasure,
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    eps: f64,
) -> Result<GaussianCoupling> {
    let a = check_inputs(g1, g2, q, k, eps)?;
    let d = g1.dim();
    let omega = &g2.sigma;
    let root = linalg::psd_sqrt(omega)?;
    let inv_root = linalg::spd_inv_sqrt(omega)?;
    let inner = linalg::symmetrize(&(&root * &a * &g1.sigma * a.transpose() * &root))
        + DMatrix::identity(d, d) * (eps * eps / 4.0);
    let c = &root * linalg::psd_sqrt(&inner)? * &inv_root - DMatrix::identity(d, d) * (eps / 2.0);
    let a_inv = a.clone().try_inverse().ok_or(Error::SingularA {
        condition: f64::INFINITY,
    })?;
    let cross = a_inv * c.transpose();
    let mut cov = DMatrix::zeros(2 * d, 2 * d);
    cov.view_mut((0, 0), (d, d)).copy_from(&g1.sigma);
    cov.view_mut((d, d), (d, d)).copy_from(omega);
    cov.view_mut((0, d), (d, d)).copy_from(&cross);
    cov.view_mut((d, 0), (d, d)).copy_from(&cross.transpose());
    let mut mean = DVector::zeros(2 * d);
    mean.rows_mut(0, d).copy_from(&g1.alpha);
    mean.rows_mut(d, d).copy_from(&g2.alpha);
    Ok(GaussianCoupling {
        mean,
        covariance: cov,
        cross,
        c,
    })
}

/// Expected cost of the coupling `pi`: `E_pi |Qx - Ky|^2 / (2 eps)`.
pub fn coupling_cost(
    g1: &GaussianMeasure,
    g2: &GaussianMeasure,
    cross: &DMatrix<f64>,
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    eps: f64,
) -> f64 {
    let a = k.transpose() * q;
    let mean = (q * &g1.alpha - k * &g2.alpha).norm_squared();
    let tr = (q * &g1.sigma * q.transpose()).trace() + (k * &g2.sigma * k.transpose()).trace()
        - 2.0 * (a * cross).trace();
    (mean + tr) / (2.0 * eps)
}

/// Entropic transport value `E_pi[c_eps] + KL(pi | mu x nu)`.
pub fn eot_gaussian_value(
    g1: &GaussianMeasure,
    g2: &GaussianMeasure,
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    eps: f64,
) -> Result<f64> {
    let pi = eot_gaussian_coupling(g1, g2, q, k, eps)?;
    let cost = coupling_cost(g1, g2, &pi.cross, q, k, eps);
    let kl = 0.5
        * (linalg::logdet_spd(&g1.sigma)? + linalg::logdet_spd(&g2.sigma)?
            - linalg::logdet_spd(&linalg::symmetrize(&pi.covariance))?);
    Ok(cost + kl)
}

/// `2 eps OT_eps(N(0, S1), N(0, S2))`.
pub fn entropic_bures(
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    eps: f64,
) -> Result<f64> {
    let g1 = GaussianMeasure::centered(s1.clone())?;
    let g2 = GaussianMeasure::centered(s2.clone())?;
    Ok(2.0 * eps * eot_gaussian_value(&g1, &g2, q, k, eps)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn bures_one_dimensional() {
        let g1 = GaussianMeasure::new(DVector::from_vec(vec![1.0]), m1(4.0)).unwrap();
        let g2 = GaussianMeasure::new(DVector::from_vec(vec![-1.0]), m1(1.0)).unwrap();
        // |m1 - m2|^2 + (sqrt s1 - sqrt s2)^2 = 4 + 1
        assert!((bures_wasserstein(&g1, &g2).unwrap() - 5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn scalar_cross_covariance() {
        let g = GaussianMeasure::centered(m1(1.0)).unwrap();
        let pi = eot_gaussian_coupling(&g, &g, &m1(1.0), &m1(1.0), 1.0).unwrap();
        assert!((pi.cross[(0, 0)] - (1.25f64.sqrt() - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn rejects_singular_a() {
        let g = GaussianMeasure::centered(DMatrix::identity(2, 2)).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            eot_gaussian_coupling(&g, &g, &q, &DMatrix::identity(2, 2), 1.0),
            Err(Error::SingularA { .. })
        ));
    }
}
