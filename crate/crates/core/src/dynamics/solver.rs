//! Fixed-step explicit integrators with threshold-based blow-up detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

/// Integration variable. `Logarithmic` steps uniformly in `ln(1 + t)`,
/// which resolves algebraic decay over long horizons at a fixed cost per
/// decade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    Physical,
    Logarithmic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: Method,
    pub dt: f64,
    pub t_end: f64,
    pub blowup_threshold: f64,
    pub record_every: usize,
    pub clock: Clock,
    /// Upper bound on the number of steps.
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            dt: 1e-2,
            t_end: 1.0,
            blowup_threshold: 1e8,
            record_every: 1,
            clock: Clock::Physical,
            max_steps: usize::MAX,
        }
    }
}

impl SolverConfig {
    pub fn rk4(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput("dt must be positive".into()));
        }
        if !(self.t_end >= 0.0) || self.t_end.is_nan() {
            return Err(Error::InvalidInput("t_end must be non-negative".into()));
        }
        let span = match self.clock {
            Clock::Physical => self.t_end,
            Clock::Logarithmic => self.t_end.ln_1p(),
        };
        if !(self.dt < span) {
            return Err(Error::InvalidInput("dt must be smaller than the horizon".into()));
        }
        if !(self.blowup_threshold > 1.0) {
            return Err(Error::InvalidInput("blowup threshold must exceed 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidInput("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// How an integration ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TrajectoryStatus {
    Completed,
    /// Finite-time singularity: the growth rate increased with the state.
    BlowUp { t_star: f64 },
    /// The threshold was crossed at a roughly constant logarithmic growth
    /// rate (exponential divergence, no singularity).
    Diverged { t_star: f64 },
    NumericalFailure { t: f64, reason: String },
    /// The step budget ran out before `t_end`.
    StepLimit { t: f64 },
}

impl TrajectoryStatus {
    pub fn label(&self) -> &'static str {
        match self {
            TrajectoryStatus::Completed => "completed",
            TrajectoryStatus::BlowUp { .. } => "blow-up",
            TrajectoryStatus::Diverged { .. } => "diverged",
            TrajectoryStatus::NumericalFailure { .. } => "numerical-failure",
            TrajectoryStatus::StepLimit { .. } => "step-limit",
        }
    }

    pub fn is_blowup(&self) -> bool {
        matches!(self, TrajectoryStatus::BlowUp { .. })
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub status: TrajectoryStatus,
}

impl<S> Trajectory<S> {
    pub fn last(&self) -> &S {
        self.states.last().expect("non-empty trajectory")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    pub fn map<T>(self, f: impl Fn(S) -> T) -> Trajectory<T> {
        Trajectory {
            times: self.times,
            states: self.states.into_iter().map(f).collect(),
            status: self.status,
        }
    }
}

/// A flat ODE `dy/dt = f(t, y)`.
pub trait FlowSystem {
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
    /// Size compared against the blow-up threshold.
    fn magnitude(&self, y: &[f64]) -> f64;
    /// Size of the velocity on the same scale as [`FlowSystem::magnitude`].
    fn rate_magnitude(&self, _y: &[f64], dy: &[f64]) -> f64 {
        dy.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
    fn project(&self, _y: &mut [f64]) {}
    fn check(&self, _t: f64, _y: &[f64]) -> Result<()> {
        Ok(())
    }
    /// Bound on the local linear growth rate in physical time. On the
    /// logarithmic clock, steps are shortened so that this rate times the
    /// step stays inside the stability region.
    fn stiffness(&self, _t: f64, _y: &[f64]) -> Option<f64> {
        None
    }
}

/// Largest product of step and stiffness on the logarithmic clock.
const STABLE_STEP: f64 = 1.0;

/// A failed or under-resolved step is retried with half the step, at most
/// this many times.
const MAX_HALVINGS: usize = 30;

/// Largest magnitude ratio accepted for a step that crosses the threshold.
const MAX_JUMP: f64 = 10.0;

enum StepOutcome {
    Accepted,
    Crossed { resolved: bool },
    NonFinite,
    StageError(Error),
    CheckFailed(String),
}

/// State seen by an observer at the start of each step.
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub y: &'a [f64],
    /// Velocity with respect to the integration clock.
    pub rate: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

struct Clocked<'a, S: FlowSystem> {
    sys: &'a S,
    clock: Clock,
}

impl<S: FlowSystem> Clocked<'_, S> {
    fn time(&self, s: f64) -> f64 {
        match self.clock {
            Clock::Physical => s,
            Clock::Logarithmic => s.exp_m1(),
        }
    }

    fn eval(&self, s: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let t = self.time(s);
        self.sys.rhs(t, y, dy)?;
        if self.clock == Clock::Logarithmic {
            let scale = 1.0 + t;
            dy.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(())
    }
}

fn axpy(out: &mut [f64], y: &[f64], h: f64, k: &[f64]) {
    for ((o, a), b) in out.iter_mut().zip(y).zip(k) {
        *o = a + h * b;
    }
}

/// Log-log slope of growth rate against magnitude between the last
/// recorded magnitude below `m_last / span` and the crossing.
fn decade_slope(history: &[(f64, f64)], end: usize, span: f64) -> f64 {
    let (m_last, r_last) = history[end];
    let reference = history[..end]
        .iter()
        .rev()
        .find(|(m, _)| *m <= m_last / span)
        .or_else(|| history.first())
        .copied();
    match reference {
        Some((m0, r0)) if m_last / m0 >= 1.5 && r0 > 0.0 && r_last > 0.0 => {
            (r_last / r0).ln() / (m_last / m0).ln()
        }
        _ => f64::NAN,
    }
}

/// Growth exponent before the crossing: the smaller of the log-log slopes
/// of growth rate against magnitude over each of the last two decades.
/// About 1 for quadratic finite-time blow-up, about 0 for exponential
/// growth; a rate that is still saturating shows a falling slope.
fn growth_exponent(history: &[(f64, f64)]) -> f64 {
    let Some(&(m_last, _)) = history.last() else {
        return f64::NAN;
    };
    let last = history.len() - 1;
    let upper = decade_slope(history, last, 10.0);
    let split = history.iter().rposition(|(m, _)| *m <= m_last / 10.0);
    match split {
        Some(i) if i > 0 => {
            let lower = decade_slope(history, i, 10.0);
            if lower.is_nan() {
                upper
            } else {
                upper.min(lower)
            }
        }
        _ => upper,
    }
}

fn classify_crossing(history: &[(f64, f64)], t_star: f64) -> TrajectoryStatus {
    let p = growth_exponent(history);
    if p.is_nan() || p > 0.5 {
        TrajectoryStatus::BlowUp { t_star }
    } else {
        TrajectoryStatus::Diverged { t_star }
    }
}

/// Integrates a flat system. The observer runs before every step and can
/// stop the integration early.
pub fn integrate_flat<S: FlowSystem>(
    sys: &S,
    y0: &[f64],
    cfg: &SolverConfig,
    mut observer: impl FnMut(&StepView) -> Control,
) -> Result<Trajectory<Vec<f64>>> {
    cfg.validate()?;
    let n = y0.len();
    let clocked = Clocked {
        sys,
        clock: cfg.clock,
    };
    let s_end = match cfg.clock {
        Clock::Physical => cfg.t_end,
        Clock::Logarithmic => cfg.t_end.ln_1p(),
    };

    let mut y = y0.to_vec();
    sys.project(&mut y);
    let mut times = vec![0.0];
    let mut states = vec![y.clone()];
    let mut history: Vec<(f64, f64)> = Vec::new();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut s = 0.0;
    let mut status = TrajectoryStatus::Completed;
    let mut crossing: Option<(f64, Vec<f64>)> = None;

    let mut step = 0;
    while s_end - s > 1e-12 * cfg.dt {
        if step >= cfg.max_steps {
            status = TrajectoryStatus::StepLimit { t: clocked.time(s) };
            break;
        }
        let t = clocked.time(s);
        let mut h = cfg.dt;
        if cfg.clock == Clock::Logarithmic {
            if let Some(rho) = sys.stiffness(t, &y) {
                if rho > 0.0 {
                    h = h.min(STABLE_STEP / ((1.0 + t) * rho));
                }
            }
        }
        let mut last = s + h >= s_end - 1e-9 * cfg.dt;
        if last {
            h = s_end - s;
        }
        if let Err(e) = clocked.eval(s, &y, &mut k1) {
            status = TrajectoryStatus::NumericalFailure {
                t,
                reason: e.to_string(),
            };
            break;
        }
        let m = sys.magnitude(&y);
        let scale = match cfg.clock {
            Clock::Physical => 1.0,
            Clock::Logarithmic => 1.0 / (1.0 + t),
        };
        history.push((m, sys.rate_magnitude(&y, &k1) * scale / m.max(1e-300)));
        if observer(&StepView {
            step,
            t,
            y: &y,
            rate: &k1,
        }) == Control::Stop
        {
            if *times.last().unwrap() != t {
                times.push(t);
                states.push(y.clone());
            }
            return Ok(Trajectory {
                times,
                states,
                status,
            });
        }

        let mut halvings = 0;
        let (h, last) = loop {
            let stage = (|| -> Result<()> {
                match cfg.method {
                    Method::Euler => axpy(&mut next, &y, h, &k1),
                    Method::Rk4 => {
                        axpy(&mut tmp, &y, h / 2.0, &k1);
                        clocked.eval(s + h / 2.0, &tmp, &mut k2)?;
                        axpy(&mut tmp, &y, h / 2.0, &k2);
                        clocked.eval(s + h / 2.0, &tmp, &mut k3)?;
                        axpy(&mut tmp, &y, h, &k3);
                        clocked.eval(s + h, &tmp, &mut k4)?;
                        for i in 0..n {
                            next[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                        }
                    }
                }
                Ok(())
            })();
            let t_next = clocked.time(s + h);
            let outcome = match stage {
                Err(e) => StepOutcome::StageError(e),
                Ok(()) => {
                    sys.project(&mut next);
                    let m_next = sys.magnitude(&next);
                    if !next.iter().all(|v| v.is_finite()) || !m_next.is_finite() {
                        StepOutcome::NonFinite
                    } else if m_next > cfg.blowup_threshold {
                        StepOutcome::Crossed { resolved: m_next <= MAX_JUMP * m }
                    } else if let Err(e) = sys.check(t_next, &next) {
                        StepOutcome::CheckFailed(e.to_string())
                    } else {
                        StepOutcome::Accepted
                    }
                }
            };
            // state-validity failures are never retried: shrinking the step
            // would only creep towards the boundary
            let retry = halvings < MAX_HALVINGS
                && match &outcome {
                    StepOutcome::Crossed { resolved } => !resolved,
                    StepOutcome::NonFinite => true,
                    StepOutcome::StageError(e) => {
                        !matches!(e, Error::SingularSigma { .. } | Error::NotPsd { .. })
                    }
                    StepOutcome::Accepted | StepOutcome::CheckFailed(_) => false,
                };
            if retry {
                halvings += 1;
                h /= 2.0;
                last = false;
                continue;
            }
            let t_star = 0.5 * (t + t_next);
            status = match outcome {
                StepOutcome::Accepted => break (h, last),
                StepOutcome::Crossed { .. } => {
                    crossing = Some((t_next, next.clone()));
                    classify_crossing(&history, t_star)
                }
                StepOutcome::NonFinite => TrajectoryStatus::NumericalFailure {
                    t: t_star,
                    reason: "non-finite state".into(),
                },
                StepOutcome::StageError(e) => TrajectoryStatus::NumericalFailure {
                    t: t_star,
                    reason: e.to_string(),
                },
                StepOutcome::CheckFailed(reason) => TrajectoryStatus::NumericalFailure { t: t_next, reason },
            };
            break (h, false);
        };
        if status != TrajectoryStatus::Completed {
            break;
        }
        let s_next = s + h;
        let t_next = clocked.time(s_next);
        std::mem::swap(&mut y, &mut next);
        s = if last { s_end } else { s_next };
        step += 1;
        if step % cfg.record_every == 0 || last {
            times.push(t_next);
            states.push(y.clone());
        }
    }
    if status != TrajectoryStatus::Completed && *times.last().unwrap() != clocked.time(s) {
        times.push(clocked.time(s));
        states.push(y.clone());
    }
    // the first state past the threshold closes a blow-up or divergence
    if let Some((t, y)) = crossing {
        times.push(t);
        states.push(y);
    }
    Ok(Trajectory {
        times,
        states,
        status,
    })
}
