//! Interaction energies whose gradient flows are attention dynamics.

use nalgebra::DMatrix;

use crate::dynamics::{MomentTrajectory, ParticleTrajectory};
use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::{EmpiricalMeasure, GaussianMeasure};
use crate::params::AttentionParams;
use crate::transport::entropic_bures;

const EXP_LIMIT: f64 = 700.0;

/// `(1/2n^2) sum_ij exp(A x_i . x_j)`.
pub fn interaction_energy_discrete(mu: &EmpiricalMeasure, a: &DMatrix<f64>) -> Result<f64> {
    let d = mu.dim();
    if a.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            context: "interaction matrix",
            expected: d,
            found: a.nrows(),
        });
    }
    let ax: Vec<_> = mu.tokens().iter().map(|x| a * x).collect();
    let mut total = 0.0;
    for axi in &ax {
        for xj in mu.tokens() {
            let e = axi.dot(xj);
            if e > EXP_LIMIT {
                return Err(Error::Overflow { exponent: e });
            }
            total += e.exp();
        }
    }
    let n = mu.n() as f64;
    Ok(total / (2.0 * n * n))
}

/// Closed form of `(1/2) E exp(A x . y)` for independent `x, y ~ N(alpha, Sigma)`.
///
/// The expectation is finite only when `Sigma^{-1} - A Sigma A^T` is
/// positive definite; see [`softmax_energy_finite`].
pub fn softmax_energy_gaussian(g: &GaussianMeasure, a: &DMatrix<f64>) -> Result<f64> {
    let d = g.dim();
    if a.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            context: "interaction matrix",
            expected: d,
            found: a.nrows(),
        });
    }
    let sigma = &g.sigma;
    let sigma_inv = linalg::spd_inverse(sigma).map_err(|_| {
        Error::OutOfDomain("covariance must be invertible".into())
    })?;
    let det = (DMatrix::identity(d, d) - a * sigma * a.transpose() * sigma).determinant();
    if !(det.abs() > 1e-14) {
        return Err(Error::OutOfDomain(format!(
            "det(I - A Sigma A^T Sigma) = {det:e}"
        )));
    }
    let inner = &sigma_inv - a * sigma * a.transpose();
    let inner_inv = inner
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::OutOfDomain("Sigma^{-1} - A Sigma A^T is singular".into()))?;
    let b = a + &sigma_inv;
    let quad = b.transpose() * inner_inv * &b - sigma_inv;
    let expo = 0.5 * g.alpha.dot(&(quad * &g.alpha));
    if expo > EXP_LIMIT {
        return Err(Error::Overflow { exponent: expo });
    }
    Ok(expo.exp() / (2.0 * det.abs().sqrt()))
}

/// Whether the Gaussian Softmax energy integral converges.
pub fn softmax_energy_finite(g: &GaussianMeasure, a: &DMatrix<f64>) -> bool {
    let Ok(sigma_inv) = linalg::spd_inverse(&g.sigma) else {
        return false;
    };
    let inner = linalg::symmetrize(&(sigma_inv - a * &g.sigma * a.transpose()));
    linalg::sym_eig(&inner).map(|e| e.min() > 0.0).unwrap_or(false)
}

/// `(1/4 eps) (-B_eps^2 + tr Q S Q^T + tr K S K^T + alpha^T (Q^T Q + K^T K) alpha)`
/// with `B_eps^2` the entropic Bures term of `S` with itself.
pub fn sink_energy_gaussian(
    g: &GaussianMeasure,
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    eps: f64,
) -> Result<f64> {
    let s = &g.sigma;
    let b2 = entropic_bures(s, s, q, k, eps)?;
    let traces = (q * s * q.transpose()).trace() + (k * s * k.transpose()).trace();
    let mean = g.alpha.dot(&((q.transpose() * q + k.transpose() * k) * &g.alpha));
    Ok((-b2 + traces + mean) / (4.0 * eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyKind {
    /// Discrete interaction energy along a particle trajectory.
    InteractionDiscrete,
    /// Gaussian Softmax energy along a moment trajectory.
    SoftmaxGaussian,
    /// Gaussian Sinkhorn energy along a moment trajectory.
    SinkGaussian,
}

pub enum TrajectoryRef<'a> {
    Particles(&'a ParticleTrajectory),
    Moments(&'a MomentTrajectory),
}

#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    /// Largest `E_{k+1} - E_k` relative to `max(|E_k|, 1e-12)`.
    pub max_relative_increase: f64,
    pub monotone: bool,
    /// Whether the parameters satisfy the gradient-flow hypothesis.
    pub hypothesis_holds: bool,
    pub warning: Option<String>,
}

/// Relative tolerance on energy increments.
pub const MONOTONE_TOL: f64 = 1e-6;

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / (1.0 + a.norm().max(b.norm()))
}

/// Gradient-flow hypothesis for the given energy.
pub fn gradient_flow_hypothesis(kind: EnergyKind, params: &AttentionParams) -> bool {
    let a = params.a();
    match kind {
        EnergyKind::SinkGaussian => {
            rel_diff(&a, &a.transpose()) <= 1e-8 && rel_diff(params.v(), &(-&a)) <= 1e-8
        }
        EnergyKind::SoftmaxGaussian | EnergyKind::InteractionDiscrete => {
            let Some(a_inv) = a.clone().try_inverse() else {
                return false;
            };
            let b = -(params.v() * a_inv.transpose());
            if rel_diff(&b, &b.transpose()) > 1e-8 {
                return false;
            }
            linalg::sym_eig(&linalg::symmetrize(&b))
                .map(|e| e.min() > 0.0)
                .unwrap_or(false)
        }
    }
}

/// Evaluates the energy along a trajectory and checks it never increases.
pub fn energy_monotonicity_report(
    kind: EnergyKind,
    trajectory: TrajectoryRef<'_>,
    params: &AttentionParams,
) -> Result<EnergyReport> {
    let a = params.a();
    let (times, energies): (Vec<f64>, Vec<f64>) = match (kind, trajectory) {
        (EnergyKind::InteractionDiscrete, TrajectoryRef::Particles(tr)) => {
            let e = tr
                .states
                .iter()
                .map(|m| interaction_energy_discrete(m, &a))
                .collect::<Result<Vec<_>>>()?;
            (tr.times.clone(), e)
        }
        (EnergyKind::SoftmaxGaussian, TrajectoryRef::Moments(tr)) => {
            let e = tr
                .states
                .iter()
                .map(|g| softmax_energy_gaussian(g, &a))
                .collect::<Result<Vec<_>>>()?;
            (tr.times.clone(), e)
        }
        (EnergyKind::SinkGaussian, TrajectoryRef::Moments(tr)) => {
            let e = tr
                .states
                .iter()
                .map(|g| sink_energy_gaussian(g, params.q(), params.k(), params.eps))
                .collect::<Result<Vec<_>>>()?;
            (tr.times.clone(), e)
        }
        _ => {
            return Err(Error::InvalidInput(
                "energy kind does not match trajectory type".into(),
            ))
        }
    };
    let max_relative_increase = energies
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0].abs().max(1e-12))
        .fold(f64::NEG_INFINITY, f64::max);
    let monotone = energies.len() < 2 || max_relative_increase <= MONOTONE_TOL;
    let hypothesis_holds = gradient_flow_hypothesis(kind, params);
    let warning = (!hypothesis_holds).then(|| {
        "parameters violate the gradient-flow hypothesis; monotonicity is not expected".to_string()
    });
    Ok(EnergyReport {
        times,
        energies,
        max_relative_increase,
        monotone,
        hypothesis_holds,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn softmax_energy_scalar() {
        let g = GaussianMeasure::centered(m1(1.0)).unwrap();
        let e = softmax_energy_gaussian(&g, &m1(0.5)).unwrap();
        assert!((e - 1.0 / (2.0 * 0.75f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn interaction_energy_overflow() {
        let mu = EmpiricalMeasure::from_rows(&[vec![30.0]]).unwrap();
        assert!(matches!(
            interaction_energy_discrete(&mu, &m1(1.0)),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn interaction_energy_small() {
        let mu = EmpiricalMeasure::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let e = interaction_energy_discrete(&mu, &m1(1.0)).unwrap();
        let expect = (2.0 * 1f64.exp() + 2.0 * (-1f64).exp()) / 8.0;
        assert!((e - expect).abs() < 1e-15);
    }

    #[test]
    fn sink_energy_scalar_closed_form() {
        // d = 1, zero mean: F = (1/4 eps)(2C - eps log(1 + C/eps)) with
        // C = sqrt(a^2 s^2 + eps^2/4) - eps/2
        let (q, k, eps, s) = (1.2, 0.7, 0.8, 1.5);
        let a = q * k;
        let g = GaussianMeasure::new(DVector::from_vec(vec![0.0]), m1(s)).unwrap();
        let f = sink_energy_gaussian(&g, &m1(q), &m1(k), eps).unwrap();
        let c = (a * a * s * s + eps * eps / 4.0).sqrt() - eps / 2.0;
        let expect = (2.0 * c - eps * (1.0 + c / eps).ln()) / (4.0 * eps);
        assert!((f - expect).abs() < 1e-13);
    }
}
