//! Mean and covariance ODEs of Gaussian token measures.

use nalgebra::{DMatrix, DVector};

use crate::attention::velocity_gaussian;
use crate::dynamics::solver::{
    integrate_flat, Control, FlowSystem, SolverConfig, StepView, Trajectory,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::GaussianMeasure;
use crate::params::{ParameterSchedule, Variant};

pub type MomentTrajectory = Trajectory<GaussianMeasure>;

/// Relative negative eigenvalue tolerated before the covariance is treated
/// as having left the PSD cone.
pub const CONE_TOL: f64 = 1e-4;

/// Flattened `(alpha, L)` with `Sigma = L L^T` and `L` stored column-major.
/// Every Gaussian velocity is affine, `v(x) = M x + b`, so the covariance
/// flow `Sigma' = M Sigma + Sigma M^T` lifts to `L' = M L`, which keeps
/// `Sigma` in the PSD cone under any step.
pub struct MomentSystem<'a> {
    schedule: &'a ParameterSchedule,
    d: usize,
    needs_definite: bool,
}

impl<'a> MomentSystem<'a> {
    pub fn new(schedule: &'a ParameterSchedule) -> Result<Self> {
        let variants: Vec<Variant> = match schedule {
            ParameterSchedule::Constant(p) => vec![p.variant],
            ParameterSchedule::Piecewise(s) => s.iter().map(|(_, p)| p.variant).collect(),
        };
        for v in &variants {
            if !matches!(
                v,
                Variant::Softmax
                    | Variant::Linear
                    | Variant::LinearEps
                    | Variant::L2
                    | Variant::Sinkhorn
                    | Variant::MultiHead
            ) {
                return Err(Error::UnsupportedVariant(format!(
                    "{v} has no Gaussian moment equations"
                )));
            }
        }
        Ok(Self {
            schedule,
            d: schedule.dim(),
            needs_definite: variants
                .iter()
                .any(|v| matches!(v, Variant::Sinkhorn)),
        })
    }

    pub fn encode(&self, g: &GaussianMeasure) -> Result<Vec<f64>> {
        let mut y = g.alpha.as_slice().to_vec();
        y.extend_from_slice(linalg::psd_sqrt(&g.sigma)?.as_slice());
        Ok(y)
    }

    fn factor(&self, y: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d, self.d, &y[self.d..])
    }

    fn sigma(&self, y: &[f64]) -> DMatrix<f64> {
        let l = self.factor(y);
        linalg::symmetrize(&(&l * l.transpose()))
    }

    pub fn decode(&self, y: &[f64]) -> GaussianMeasure {
        GaussianMeasure::from_parts_unchecked(DVector::from_column_slice(&y[..self.d]), self.sigma(y))
    }

    /// `dSigma` implied by the factor velocity `dy`.
    fn sigma_rate(&self, y: &[f64], dy: &[f64]) -> DMatrix<f64> {
        let l = self.factor(y);
        let dl = self.factor(dy);
        let m = &dl * l.transpose();
        &m + m.transpose()
    }

    /// `(dalpha/dt, dSigma/dt)` at time `t`.
    pub fn rates(&self, t: f64, g: &GaussianMeasure) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let field = velocity_gaussian(self.schedule.at(t), g)?;
        Ok(field.moment_rates(g))
    }
}

impl FlowSystem for MomentSystem<'_> {
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let g = self.decode(y);
        let field = velocity_gaussian(self.schedule.at(t), &g)?;
        let d = self.d;
        let da = &field.m * &g.alpha + &field.b;
        let dl = &field.m * self.factor(y);
        dy[..d].copy_from_slice(da.as_slice());
        dy[d..].copy_from_slice(dl.as_slice());
        Ok(())
    }

    fn magnitude(&self, y: &[f64]) -> f64 {
        self.sigma(y).norm()
    }

    fn rate_magnitude(&self, y: &[f64], dy: &[f64]) -> f64 {
        self.sigma_rate(y, dy).norm().max(1e-300 * self.magnitude(y))
    }

    fn stiffness(&self, t: f64, y: &[f64]) -> Option<f64> {
        let g = self.decode(y);
        velocity_gaussian(self.schedule.at(t), &g)
            .ok()
            .map(|f| 2.0 * f.m.norm())
    }

    fn check(&self, _t: f64, y: &[f64]) -> Result<()> {
        let eig = linalg::sym_eig(&self.sigma(y))?;
        let ratio = eig.min() / eig.max();
        if self.needs_definite && !(ratio >= 1e-14) {
            return Err(Error::SingularSigma { ratio });
        }
        if !(ratio >= -CONE_TOL) {
            return Err(Error::NotPsd {
                min_eigenvalue: eig.min(),
            });
        }
        Ok(())
    }
}

/// Integrates the moment equations from `g0`.
pub fn integrate_moments(
    schedule: &ParameterSchedule,
    g0: &GaussianMeasure,
    cfg: &SolverConfig,
) -> Result<MomentTrajectory> {
    integrate_moments_observed(schedule, g0, cfg, |_, _, _| Control::Continue)
}

/// As [`integrate_moments`], with an observer that sees each accepted step,
/// its covariance and the covariance velocity with respect to the
/// integration clock, and may stop early.
pub fn integrate_moments_observed(
    schedule: &ParameterSchedule,
    g0: &GaussianMeasure,
    cfg: &SolverConfig,
    mut observer: impl FnMut(&StepView, &DMatrix<f64>, &DMatrix<f64>) -> Control,
) -> Result<MomentTrajectory> {
    if g0.dim() != schedule.dim() {
        return Err(Error::DimensionMismatch {
            context: "initial gaussian",
            expected: schedule.dim(),
            found: g0.dim(),
        });
    }
    let sys = MomentSystem::new(schedule)?;
    let y0 = sys.encode(g0)?;
    if sys.needs_definite {
        sys.check(0.0, &y0)?;
    }
    let tr = integrate_flat(&sys, &y0, cfg, |view| {
        observer(view, &sys.sigma(view.y), &sys.sigma_rate(view.y, view.rate))
    })?;
    let mut out = tr.map(|y| sys.decode(&y));
    out.states[0] = g0.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::solver::TrajectoryStatus;
    use crate::params::AttentionParams;

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn softmax_scalar_matches_closed_form() {
        let p = AttentionParams::new(Variant::Softmax, m1(1.0), m1(-1.0), m1(1.0)).unwrap();
        let g = GaussianMeasure::new(DVector::from_vec(vec![0.5]), m1(1.0)).unwrap();
        let tr = integrate_moments(&p.into(), &g, &SolverConfig::rk4(1e-3, 1.0)).unwrap();
        let s = tr.last().sigma[(0, 0)];
        // s' = 2 v a s^2 with v a = -1
        assert!((s - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn softmax_blowup_detected() {
        let p = AttentionParams::new(Variant::Softmax, m1(1.0), m1(1.0), m1(1.0)).unwrap();
        let g = GaussianMeasure::centered(m1(1.0)).unwrap();
        let tr = integrate_moments(&p.into(), &g, &SolverConfig::rk4(1e-3, 2.0)).unwrap();
        match tr.status {
            TrajectoryStatus::BlowUp { t_star } => assert!((t_star - 0.5).abs() < 0.005),
            s => panic!("{s:?}"),
        }
    }

    #[test]
    fn pointwise_variant_rejected() {
        let p = AttentionParams::new(Variant::Sigmoid, m1(1.0), m1(1.0), m1(1.0)).unwrap();
        let g = GaussianMeasure::centered(m1(1.0)).unwrap();
        assert!(integrate_moments(&p.into(), &g, &SolverConfig::default()).is_err());
    }
}
