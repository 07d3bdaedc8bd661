//! Interacting-particle integration of tokens.

use nalgebra::DVector;

use crate::attention::{sinkhorn, sinkhorn_kernel_discrete, FieldEvaluator};
use crate::dynamics::solver::{integrate_flat, Control, FlowSystem, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::params::{AttentionParams, ParameterSchedule, Variant};

pub type ParticleTrajectory = Trajectory<EmpiricalMeasure>;

struct Particles<'a> {
    schedule: &'a ParameterSchedule,
    n: usize,
    d: usize,
    // one leading position coordinate per token when masked
    positioned: bool,
}

impl Particles<'_> {
    fn stride(&self) -> usize {
        self.d + usize::from(self.positioned)
    }

    fn decode(&self, y: &[f64]) -> EmpiricalMeasure {
        let s = self.stride();
        let off = usize::from(self.positioned);
        let tokens = (0..self.n)
            .map(|i| DVector::from_column_slice(&y[i * s + off..(i + 1) * s]))
            .collect();
        let positions = self
            .positioned
            .then(|| (0..self.n).map(|i| y[i * s]).collect());
        EmpiricalMeasure::from_parts_unchecked(tokens, positions)
    }

    fn evaluator(params: &AttentionParams, mu: &EmpiricalMeasure) -> Result<FieldEvaluator> {
        let kernel = if params.variant == Variant::Sinkhorn {
            Some(sinkhorn_kernel_discrete(
                mu,
                params,
                sinkhorn::DEFAULT_MAX_ITERS,
                sinkhorn::DEFAULT_TOL,
            )?)
        } else {
            None
        };
        FieldEvaluator::new(params, mu, kernel.as_ref())
    }
}

impl FlowSystem for Particles<'_> {
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let params = self.schedule.at(t);
        let mu = self.decode(y);
        let s = self.stride();
        let off = usize::from(self.positioned);
        let mut write = |i: usize, v: &DVector<f64>| {
            if self.positioned {
                dy[i * s] = 0.0;
            }
            dy[i * s + off..(i + 1) * s].copy_from_slice(v.as_slice());
        };
        if params.masked {
            let mut unmasked = params.clone();
            unmasked.masked = false;
            let pos = mu.positions().expect("masked state carries positions");
            let mut levels: Vec<f64> = pos.to_vec();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            for sigma in levels {
                let sub = mu.restrict(sigma)?.space_marginal();
                let ev = Self::evaluator(&unmasked, &sub)?;
                for (i, x) in mu.tokens().iter().enumerate() {
                    if pos[i] == sigma {
                        write(i, &ev.eval(x)?);
                    }
                }
            }
        } else {
            let ev = Self::evaluator(params, &mu.space_marginal())?;
            for (i, x) in mu.tokens().iter().enumerate() {
                write(i, &ev.eval(x)?);
            }
        }
        Ok(())
    }

    fn magnitude(&self, y: &[f64]) -> f64 {
        let s = self.stride();
        let off = usize::from(self.positioned);
        (0..self.n)
            .map(|i| y[i * s + off..(i + 1) * s].iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    fn rate_magnitude(&self, _y: &[f64], dy: &[f64]) -> f64 {
        self.magnitude(dy)
    }
}

/// Integrates `dx_i/dt = Gamma_{mu(t)}(x_i)` for all tokens. Masked
/// layers require positions, which are carried along unchanged.
pub fn integrate_particles(
    schedule: &ParameterSchedule,
    mu0: &EmpiricalMeasure,
    cfg: &SolverConfig,
) -> Result<ParticleTrajectory> {
    let d = schedule.dim();
    if mu0.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "initial measure",
            expected: d,
            found: mu0.dim(),
        });
    }
    let masked = match schedule {
        ParameterSchedule::Constant(p) => p.masked,
        ParameterSchedule::Piecewise(segs) => segs.iter().any(|(_, p)| p.masked),
    };
    if masked && mu0.positions().is_none() {
        return Err(Error::InvalidInput("masked layer needs token positions".into()));
    }
    let positioned = mu0.positions().is_some();
    let sys = Particles {
        schedule,
        n: mu0.n(),
        d,
        positioned,
    };
    let mut y0 = Vec::with_capacity(mu0.n() * sys.stride());
    for (i, x) in mu0.tokens().iter().enumerate() {
        if let Some(p) = mu0.positions() {
            y0.push(p[i]);
        }
        y0.extend(x.iter());
    }
    let tr = integrate_flat(&sys, &y0, cfg, |_| Control::Continue)?;
    Ok(tr.map(|y| sys.decode(&y)))
}
