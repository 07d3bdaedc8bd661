//! Empirical and Gaussian token measures, and affine velocity fields.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Uniform measure over `n` tokens in `R^d`, optionally carrying a scalar
/// position coordinate per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    tokens: Vec<DVector<f64>>,
    positions: Option<Vec<f64>>,
}

impl EmpiricalMeasure {
    pub fn new(tokens: Vec<DVector<f64>>) -> Result<Self> {
        let d = tokens.first().map(|t| t.len()).unwrap_or(0);
        if tokens.is_empty() || d == 0 {
            return Err(Error::InvalidInput("empty measure".into()));
        }
        for t in &tokens {
            if t.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "token",
                    expected: d,
                    found: t.len(),
                });
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite token".into()));
            }
        }
        Ok(Self {
            tokens,
            positions: None,
        })
    }

    /// Tokens with positions in `[0, 1]`.
    pub fn with_positions(tokens: Vec<DVector<f64>>, positions: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(tokens)?;
        if positions.len() != m.n() {
            return Err(Error::DimensionMismatch {
                context: "positions",
                expected: m.n(),
                found: positions.len(),
            });
        }
        if positions.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidInput("positions must lie in [0, 1]".into()));
        }
        m.positions = Some(positions);
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows.iter().map(|r| DVector::from_column_slice(r)).collect())
    }

    pub fn n(&self) -> usize {
        self.tokens.len()
    }

    pub fn dim(&self) -> usize {
        self.tokens[0].len()
    }

    pub fn tokens(&self) -> &[DVector<f64>] {
        &self.tokens
    }

    pub fn positions(&self) -> Option<&[f64]> {
        self.positions.as_deref()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for t in &self.tokens {
            m += t;
        }
        m / self.n() as f64
    }

    /// Covariance with `1/n` normalization.
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let d = self.dim();
        let mut c = DMatrix::zeros(d, d);
        for t in &self.tokens {
            let z = t - &m;
            c += &z * z.transpose();
        }
        c / self.n() as f64
    }

    pub fn max_norm(&self) -> f64 {
        self.tokens.iter().map(|t| t.norm()).fold(0.0, f64::max)
    }

    /// Tokens whose position is at most `sigma`.
    pub fn restrict(&self, sigma: f64) -> Result<EmpiricalMeasure> {
        let pos = self
            .positions
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("measure has no positions".into()))?;
        let mut tokens = Vec::new();
        let mut kept = Vec::new();
        for (t, &p) in self.tokens.iter().zip(pos) {
            if p <= sigma {
                tokens.push(t.clone());
                kept.push(p);
            }
        }
        if tokens.is_empty() {
            return Err(Error::EmptyMask { sigma });
        }
        Ok(EmpiricalMeasure {
            tokens,
            positions: Some(kept),
        })
    }

    /// Drops the position coordinate.
    pub fn space_marginal(&self) -> EmpiricalMeasure {
        EmpiricalMeasure {
            tokens: self.tokens.clone(),
            positions: None,
        }
    }

    pub(crate) fn from_parts_unchecked(
        tokens: Vec<DVector<f64>>,
        positions: Option<Vec<f64>>,
    ) -> Self {
        Self { tokens, positions }
    }
}

/// `N(alpha, Sigma)`; `Sigma` may be singular.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    pub alpha: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianMeasure {
    pub fn new(alpha: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != alpha.len() || sigma.ncols() != alpha.len() {
            return Err(Error::DimensionMismatch {
                context: "gaussian covariance",
                expected: alpha.len(),
                found: sigma.nrows(),
            });
        }
        let eig = linalg::sym_eig(&sigma)?;
        if eig.min() < -1e-10 * eig.max().max(0.0) {
            return Err(Error::NotPsd {
                min_eigenvalue: eig.min(),
            });
        }
        Ok(Self {
            alpha,
            sigma: linalg::symmetrize(&sigma),
        })
    }

    pub fn centered(sigma: DMatrix<f64>) -> Result<Self> {
        let d = sigma.nrows();
        Self::new(DVector::zeros(d), sigma)
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub(crate) fn from_parts_unchecked(alpha: DVector<f64>, sigma: DMatrix<f64>) -> Self {
        Self { alpha, sigma }
    }
}

/// `x -> M x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineField {
    pub m: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffineField {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.m * x + &self.b
    }

    /// Mean and covariance velocities of a Gaussian pushed by this field.
    pub fn moment_rates(&self, g: &GaussianMeasure) -> (DVector<f64>, DMatrix<f64>) {
        let ms = &self.m * &g.sigma;
        let ds = &ms + ms.transpose();
        (&self.m * &g.alpha + &self.b, ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_covariance() {
        let m = EmpiricalMeasure::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(m.mean(), DVector::zeros(2));
        let c = m.covariance();
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(1, 1)], 0.0);
    }

    #[test]
    fn restrict_by_position() {
        let m = EmpiricalMeasure::with_positions(
            vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0])],
            vec![0.2, 0.8],
        )
        .unwrap();
        assert_eq!(m.restrict(0.5).unwrap().n(), 1);
        assert_eq!(m.restrict(1.0).unwrap().n(), 2);
        assert!(matches!(m.restrict(0.1), Err(Error::EmptyMask { .. })));
    }

    #[test]
    fn gaussian_rejects_indefinite() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(GaussianMeasure::centered(s).is_err());
    }
}
