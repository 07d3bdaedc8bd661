//! Closed-form solutions and predictions for the covariance flow.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::solver::{integrate_flat, Control, FlowSystem, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::linalg;
use crate::params::ParameterSchedule;

/// Result of a closed form that may cease to exist.
#[derive(Debug, Clone, PartialEq)]
pub enum ClosedForm<T> {
    Value(T),
    BlowUp,
}

impl<T> ClosedForm<T> {
    pub fn value(self) -> Option<T> {
        match self {
            ClosedForm::Value(v) => Some(v),
            ClosedForm::BlowUp => None,
        }
    }
}

/// `Sigma(t) = (Sigma_0^{-1} - t (V A + A^T V^T))^{-1}` for Softmax when
/// `V` commutes with `Sigma_0` and with `V A + A^T V^T`.
pub fn closed_form_commuting(
    sigma0: &DMatrix<f64>,
    a: &DMatrix<f64>,
    v: &DMatrix<f64>,
    t: f64,
) -> Result<ClosedForm<DMatrix<f64>>> {
    let s = v * a + a.transpose() * v.transpose();
    let scale = 1.0 + v.norm() * (sigma0.norm() + s.norm());
    let residual = ((v * sigma0 - sigma0 * v).norm() + (v * &s - &s * v).norm()) / scale;
    if residual > 1e-8 {
        return Err(Error::CommutationViolated { residual });
    }
    let omega = linalg::spd_inverse(sigma0)? - s * t;
    let eig = linalg::sym_eig(&linalg::symmetrize(&omega))?;
    if eig.min() <= 0.0 {
        return Ok(ClosedForm::BlowUp);
    }
    Ok(ClosedForm::Value(eig.map(|l| 1.0 / l)))
}

/// One-dimensional covariance flows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dim1Variant {
    Softmax,
    L2 { k: f64 },
    Sinkhorn { eps: f64 },
}

/// Variance `s(t)` of the one-dimensional flow with `a = kq` and value `v`.
///
/// Softmax is exact: `s = (1/s0 - 2 v a t)^{-1}`. The L2 and Sinkhorn
/// scalar equations are integrated with a fine RK4 step.
pub fn closed_form_dim1(
    variant: Dim1Variant,
    a: f64,
    v: f64,
    s0: f64,
    t: f64,
) -> Result<ClosedForm<f64>> {
    if !(s0 > 0.0) {
        return Err(Error::InvalidInput("s0 must be positive".into()));
    }
    match variant {
        Dim1Variant::Softmax => {
            let inv = 1.0 / s0 - 2.0 * v * a * t;
            if inv <= 0.0 {
                Ok(ClosedForm::BlowUp)
            } else {
                Ok(ClosedForm::Value(1.0 / inv))
            }
        }
        Dim1Variant::L2 { k } => scalar_flow(
            move |s| 4.0 * a * v * s * s / (1.0 + 2.0 * k * k * s),
            s0,
            t,
        ),
        Dim1Variant::Sinkhorn { eps } => {
            if a == 0.0 {
                return Err(Error::SingularA { condition: f64::INFINITY });
            }
            scalar_flow(
                move |s| v / (eps * a) * ((4.0 * a * a * s * s + eps * eps).sqrt() - eps),
                s0,
                t,
            )
        }
    }
}

/// Finite-time singularity of the one-dimensional Softmax flow.
pub fn blowup_time_dim1(a: f64, v: f64, s0: f64) -> Option<f64> {
    (v * a > 0.0).then(|| 1.0 / (2.0 * v * a * s0))
}

fn scalar_flow(f: impl Fn(f64) -> f64, s0: f64, t: f64) -> Result<ClosedForm<f64>> {
    let steps = ((t / 1e-4).ceil() as usize).max(1);
    let h = t / steps as f64;
    let mut s = s0;
    for _ in 0..steps {
        let k1 = f(s);
        let k2 = f(s + h / 2.0 * k1);
        let k3 = f(s + h / 2.0 * k2);
        let k4 = f(s + h * k3);
        s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !s.is_finite() || s > 1e12 {
            return Ok(ClosedForm::BlowUp);
        }
    }
    Ok(ClosedForm::Value(s))
}

struct Rank1<'a> {
    a: &'a DMatrix<f64>,
    v: &'a DMatrix<f64>,
}

impl FlowSystem for Rank1<'_> {
    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let u = DVector::from_column_slice(y);
        let scale = u.dot(&(self.a * &u));
        dy.copy_from_slice((self.v * u * scale).as_slice());
        Ok(())
    }

    fn magnitude(&self, y: &[f64]) -> f64 {
        y.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `du/dt = (u^T A u) V u`, the Softmax flow restricted to `Sigma = u u^T`.
pub fn rank1_flow(
    u0: &DVector<f64>,
    a: &DMatrix<f64>,
    v: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> Result<Trajectory<DVector<f64>>> {
    let d = u0.len();
    if a.shape() != (d, d) || v.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            context: "rank-one flow",
            expected: d,
            found: a.nrows(),
        });
    }
    let tr = integrate_flat(&Rank1 { a, v }, u0.as_slice(), cfg, |_| Control::Continue)?;
    Ok(tr.map(DVector::from_vec))
}

/// `dim ker A + min(#positive, #negative)` eigenvalues of a symmetric `A`.
/// Eigenvalues within `1e-10 max |lambda|` of zero count toward the kernel.
pub fn predict_stationary_rank_bound(a: &DMatrix<f64>) -> Result<usize> {
    let eig = linalg::sym_eig(a)?;
    let scale = eig.values.iter().map(|l| l.abs()).fold(0.0, f64::max);
    let tol = 1e-10 * scale.max(1e-300);
    let mut zero = 0;
    let mut pos = 0;
    let mut neg = 0;
    for &l in eig.values.iter() {
        if l.abs() <= tol {
            zero += 1;
        } else if l > 0.0 {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    if scale == 0.0 {
        return Ok(a.nrows());
    }
    Ok(zero + pos.min(neg))
}

/// `R(t) = exp(int_0^t |V(s)|_2 ds) R_0`.
pub fn support_radius_bound(r0: f64, schedule: &ParameterSchedule, t: f64) -> f64 {
    r0 * schedule.integrated_value_norm(t).exp()
}
