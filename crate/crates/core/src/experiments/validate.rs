//! Closed-form parity and invariant checks, reported as data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::attention::sinkhorn::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::attention::{
    sinkhorn_kernel_discrete, velocity_discrete, velocity_gaussian, velocity_gaussian_sinkhorn,
    velocity_masked, FieldEvaluator, SinkhornCForm,
};
use crate::dynamics::{
    blowup_time_dim1, closed_form_commuting, closed_form_dim1, integrate_moments, ClosedForm,
    Dim1Variant, SolverConfig, TrajectoryStatus,
};
use crate::energetics::{
    energy_monotonicity_report, softmax_energy_finite, softmax_energy_gaussian, EnergyKind,
    TrajectoryRef,
};
use crate::error::Result;
use crate::experiments::rng::{normal_matrix, normal_vector, sample_gaussian, sample_measure, stream, wishart};
use crate::linalg;
use crate::measure::{AffineField, EmpiricalMeasure, GaussianMeasure};
use crate::params::{AttentionParams, Variant};
use crate::transport::{eot_discrete, eot_gaussian_coupling};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    /// Measured residual, in the units of `tolerance`.
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
            detail,
        }
    }

    fn error(name: &str, e: impl std::fmt::Display) -> Self {
        Self {
            name: name.into(),
            measured: f64::NAN,
            tolerance: f64::NAN,
            passed: false,
            detail: format!("error: {e}"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub passed: bool,
}

fn m1(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

fn guard(name: &str, f: impl FnOnce() -> Result<Check>) -> Check {
    f().unwrap_or_else(|e| Check::error(name, e))
}

/// Largest relative gap between RK4 and `(s0^{-1} - 2vat)^{-1}` over a
/// grid of `(a, v)` with `av < 0` and `s0 = 1`.
pub fn softmax_dim1_check(grid: usize) -> Check {
    let name = "softmax-dim1-closed-form";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for i in 0..grid {
            for j in 0..grid {
                let a = 0.25 + 0.5 * i as f64;
                let v = -(0.25 + 0.5 * j as f64);
                let p = AttentionParams::new(Variant::Softmax, m1(1.0), m1(a), m1(v))?;
                let g = GaussianMeasure::centered(m1(1.0))?;
                let tr = integrate_moments(&p.into(), &g, &SolverConfig::rk4(1e-3, 2.0))?;
                for &t in &[0.5, 1.0, 2.0] {
                    let k = (t / 1e-3f64).round() as usize;
                    let s = tr.states[k].sigma[(0, 0)];
                    if let ClosedForm::Value(exact) = closed_form_dim1(Dim1Variant::Softmax, a, v, 1.0, t)? {
                        worst = worst.max((s - exact).abs() / exact);
                    }
                }
            }
        }
        Ok(Check::at_most(name, worst, 1e-6, format!("{grid}x{grid} grid")))
    })
}

/// Relative error of the detected blow-up time against `1 / (2 v a s0)`.
pub fn blowup_time_check() -> Check {
    let name = "softmax-dim1-blowup-time";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for (a, v, s0) in [(1.0, 1.0, 1.0), (2.0, 0.5, 1.0), (1.0, 1.0, 0.5)] {
            let p = AttentionParams::new(Variant::Softmax, m1(1.0), m1(a), m1(v))?;
            let g = GaussianMeasure::centered(m1(s0))?;
            let t_max = blowup_time_dim1(a, v, s0).expect("av > 0");
            let tr = integrate_moments(&p.into(), &g, &SolverConfig::rk4(1e-3, 2.0 * t_max))?;
            let err = match tr.status {
                TrajectoryStatus::BlowUp { t_star } => (t_star - t_max).abs() / t_max,
                _ => f64::INFINITY,
            };
            worst = worst.max(err);
        }
        Ok(Check::at_most(name, worst, 0.01, "three (a, v, s0) triples".into()))
    })
}

/// Commuting case `V = I`, `A` symmetric negative, against the closed form.
pub fn commuting_check(configs: usize, seed: u64) -> Check {
    let name = "softmax-commuting-closed-form";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for c in 0..configs {
            let mut rng = stream(seed, c as u64);
            let d = 1 + c % 5;
            let b = normal_matrix(&mut rng, d, d);
            let a = -(&b * b.transpose()) / d as f64 - DMatrix::identity(d, d) * 0.1;
            let s0 = wishart(&mut rng, d, d + 2);
            let v = DMatrix::identity(d, d);
            let p = AttentionParams::new(Variant::Softmax, DMatrix::identity(d, d), a.transpose(), v.clone())?;
            let tr = integrate_moments(&p.into(), &GaussianMeasure::centered(s0.clone())?, &SolverConfig::rk4(1e-3, 5.0))?;
            if let ClosedForm::Value(exact) = closed_form_commuting(&s0, &a, &v, 5.0)? {
                worst = worst.max((&tr.last().sigma - &exact).norm() / exact.norm());
            } else {
                worst = f64::INFINITY;
            }
        }
        Ok(Check::at_most(name, worst, 1e-5, format!("{configs} configs, t = 5")))
    })
}

/// Number of BlowUp statuses and envelope violations for random L2 flows.
pub fn l2_global_existence_check(configs: usize, seed: u64, horizon: f64) -> Check {
    let name = "l2-global-existence";
    guard(name, || {
        let (mut blowups, mut envelope) = (0usize, 0usize);
        let mut tally = std::collections::BTreeMap::new();
        for c in 0..configs {
            let mut rng = stream(seed, c as u64);
            let d = 1 + c % 4;
            let q = normal_matrix(&mut rng, d, d);
            let k = normal_matrix(&mut rng, d, d);
            let v = normal_matrix(&mut rng, d, d);
            let s0 = wishart(&mut rng, d, d + 2);
            let p = AttentionParams::new(Variant::L2, q, k.clone(), v.clone())?;
            let a = p.a();
            let tr = integrate_moments(&p.into(), &GaussianMeasure::centered(s0.clone())?, &SolverConfig::rk4(1e-2, horizon))?;
            *tally.entry(tr.status.label()).or_insert(0) += 1;
            if tr.status.is_blowup() {
                blowups += 1;
            }
            // C = sup_t ||(Sigma^{-1} + 2 K^T K)^{-1}||_F 2 ||V||_F ||A||_F, written
            // with Sigma (I + 2 K^T K Sigma)^{-1} so it stays finite near the boundary
            let ktk = k.transpose() * &k;
            let mut c_bound: f64 = 0.0;
            for g in &tr.states {
                let inner = DMatrix::identity(d, d) + &ktk * &g.sigma * 2.0;
                if let Some(inv) = inner.try_inverse() {
                    c_bound = c_bound.max((&g.sigma * inv).norm() * 2.0 * v.norm() * a.norm());
                }
            }
            let n0 = s0.norm();
            if tr
                .times
                .iter()
                .zip(&tr.states)
                .any(|(t, g)| g.sigma.norm() > n0 * (2.0 * c_bound * t).exp() * (1.0 + 1e-9))
            {
                envelope += 1;
            }
        }
        Ok(Check::at_most(
            name,
            (blowups + envelope) as f64,
            0.0,
            format!("{blowups} blow-ups, {envelope} envelope violations, statuses {tally:?}"),
        ))
    })
}

/// `d = 1`, `(s, omega, a, eps) = (1, 1, 1, 1)`: the cross-covariance is
/// `sqrt(1.25) - 0.5`.
pub fn eot_exact_check() -> Check {
    let name = "gaussian-eot-exact";
    guard(name, || {
        let g = GaussianMeasure::centered(m1(1.0))?;
        let c = eot_gaussian_coupling(&g, &g, &m1(1.0), &m1(1.0), 1.0)?;
        let err = (c.cross[(0, 0)] - (1.25f64.sqrt() - 0.5)).abs();
        Ok(Check::at_most(name, err, 1e-12, format!("cross = {}", c.cross[(0, 0)])))
    })
}

/// Relative Frobenius gap between discrete Sinkhorn on `samples` draws
/// from each side and the Gaussian cross-covariance at the samples' own
/// means and covariances, which removes the marginal sampling error.
pub fn eot_discrete_gap(
    g1: &GaussianMeasure,
    g2: &GaussianMeasure,
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    eps: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let x = sample_measure(rng, g1, samples)?;
    let y = sample_measure(rng, g2, samples)?;
    let h1 = GaussianMeasure::new(x.mean(), x.covariance())?;
    let h2 = GaussianMeasure::new(y.mean(), y.covariance())?;
    let exact = eot_gaussian_coupling(&h1, &h2, q, k, eps)?;
    let est = eot_discrete(&x, &y, q, k, eps, 100_000, 1e-10)?;
    Ok((est.cross - &exact.cross).norm() / exact.cross.norm())
}

pub fn eot_monte_carlo_check(configs: usize, samples: usize, seed: u64) -> Check {
    let name = "gaussian-eot-monte-carlo";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for c in 0..configs {
            let mut rng = stream(seed, c as u64);
            let d = 1 + c % 3;
            let (g1, g2, q, k) = eot_config(&mut rng, d)?;
            worst = worst.max(eot_discrete_gap(&g1, &g2, &q, &k, 1.0, samples, &mut rng)?);
        }
        Ok(Check::at_most(name, worst, 0.05, format!("{configs} configs, {samples} samples")))
    })
}

/// Random EOT problem with a well-conditioned `A` and strong correlation.
pub fn eot_config(
    rng: &mut impl Rng,
    d: usize,
) -> Result<(GaussianMeasure, GaussianMeasure, DMatrix<f64>, DMatrix<f64>)> {
    let g1 = GaussianMeasure::new(normal_vector(rng, d) * 0.5, wishart(rng, d, d + 4))?;
    let g2 = GaussianMeasure::new(normal_vector(rng, d) * 0.5, wishart(rng, d, d + 4))?;
    let q = DMatrix::identity(d, d) * 2.0 + normal_matrix(rng, d, d) * 0.3;
    let k = DMatrix::identity(d, d) + normal_matrix(rng, d, d) * 0.3;
    Ok((g1, g2, q, k))
}

/// Largest marginal deviation of the Sinkhorn kernel on random measures.
pub fn bistochastic_check(measures: usize, seed: u64) -> Check {
    let name = "sinkhorn-bistochastic";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for c in 0..measures {
            let mut rng = stream(seed, c as u64);
            let d = 1 + c % 3;
            let n = 2 + rng.random_range(0..63);
            let mu = EmpiricalMeasure::new((0..n).map(|_| normal_vector(&mut rng, d)).collect())?;
            let p = AttentionParams::new(
                Variant::Sinkhorn,
                normal_matrix(&mut rng, d, d),
                normal_matrix(&mut rng, d, d),
                DMatrix::identity(d, d),
            )?;
            let ker = sinkhorn_kernel_discrete(&mu, &p, DEFAULT_MAX_ITERS, 1e-12)?;
            worst = worst.max(ker.bistochastic_residual());
        }
        Ok(Check::at_most(name, worst, 1e-8, format!("{measures} measures, n <= 64")))
    })
}

/// Masked velocity at `sigma = 1` against the unmasked velocity of the
/// space marginal.
pub fn masked_equality_check(configs: usize, seed: u64) -> Check {
    let name = "masked-sigma-one";
    guard(name, || {
        let mut worst: f64 = 0.0;
        let variants = [Variant::Softmax, Variant::L2, Variant::Sinkhorn, Variant::Sigmoid];
        for c in 0..configs {
            let mut rng = stream(seed, c as u64);
            let d = 1 + c % 3;
            let n = 3 + c % 8;
            let tokens: Vec<_> = (0..n).map(|_| normal_vector(&mut rng, d)).collect();
            let positions: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mu = EmpiricalMeasure::with_positions(tokens, positions)?;
            let p = AttentionParams::new(
                variants[c % variants.len()],
                normal_matrix(&mut rng, d, d),
                normal_matrix(&mut rng, d, d),
                normal_matrix(&mut rng, d, d),
            )?;
            let x = normal_vector(&mut rng, d);
            let space = mu.space_marginal();
            let kernel = if p.variant == Variant::Sinkhorn {
                Some(sinkhorn_kernel_discrete(&space, &p, DEFAULT_MAX_ITERS, DEFAULT_TOL)?)
            } else {
                None
            };
            let plain = velocity_discrete(&p, &space, &x, kernel.as_ref())?;
            let masked = velocity_masked(&p.clone().masked(), &mu, 1.0, &x)?;
            let scale = plain.norm().max(1.0);
            worst = worst.max(masked[0].abs());
            worst = worst.max((masked.rows(1, d) - &plain).norm() / scale);
        }
        Ok(Check::at_most(name, worst, 1e-12, format!("{configs} configs")))
    })
}

/// Sampling effort for Gaussian-velocity parity.
#[derive(Debug, Clone, Copy)]
pub struct ParitySpec {
    pub configs: usize,
    pub points: usize,
    /// Samples per estimate; for Sinkhorn, tokens per replicate.
    pub samples: usize,
    /// Independent discrete-Sinkhorn replicates.
    pub replicates: usize,
    pub seed: u64,
}

/// A closed-form candidate for the Gaussian velocity.
pub type ClosedFormFn<'a> = &'a dyn Fn(&AttentionParams, &GaussianMeasure) -> Result<AffineField>;

/// Outcome for one candidate: the worst `|error| / SE` and the number of
/// query points beyond three standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParityOutcome {
    pub worst_ratio: f64,
    pub failures: usize,
    pub total: usize,
}

/// Random parity configuration of dimension `1 + c % 3`.
pub fn parity_config(
    variant: Variant,
    rng: &mut impl Rng,
    d: usize,
) -> Result<(AttentionParams, GaussianMeasure)> {
    let scale = match variant {
        Variant::Softmax | Variant::MultiHead => 0.4,
        _ => 0.6,
    };
    let q = normal_matrix(rng, d, d) * scale;
    let k = normal_matrix(rng, d, d) * scale;
    let v = normal_matrix(rng, d, d);
    let p = AttentionParams::new(variant, q, k, v)?;
    let p = if variant == Variant::LinearEps { p.with_eps(0.5)? } else { p };
    let g = GaussianMeasure::new(normal_vector(rng, d) * 0.5, wishart(rng, d, d + 3))?;
    Ok((p, g))
}

/// Monte-Carlo estimate of the defining integral of `Gamma_g(x)` and its
/// standard error (root of the summed per-component variances).
pub fn velocity_monte_carlo(
    params: &AttentionParams,
    g: &GaussianMeasure,
    xs: &[DVector<f64>],
    samples: usize,
    replicates: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(DVector<f64>, f64)>> {
    let d = g.dim();
    match params.variant {
        Variant::Sinkhorn => {
            let mut est: Vec<Vec<DVector<f64>>> = vec![Vec::new(); xs.len()];
            for _ in 0..replicates {
                let mu = sample_measure(rng, g, samples)?;
                let ker = sinkhorn_kernel_discrete(&mu, params, 100_000, 1e-12)?;
                let ev = FieldEvaluator::new(params, &mu, Some(&ker))?;
                for (i, x) in xs.iter().enumerate() {
                    est[i].push(ev.eval(x)?);
                }
            }
            Ok(est.into_iter().map(|e| mean_and_se(&e, d)).collect())
        }
        Variant::LinearEps => {
            let ys = sample_gaussian(rng, g, samples)?;
            let n = samples as f64;
            let mean = ys.iter().fold(DVector::zeros(d), |a, y| a + y) / n;
            let v = params.v();
            let a = params.a();
            Ok(xs
                .iter()
                .map(|x| {
                    let ax = &a * x;
                    let z: Vec<DVector<f64>> = ys
                        .iter()
                        .map(|y| {
                            let c = y - &mean;
                            v * (y / params.eps + &c * (c.dot(&ax) * n / (n - 1.0)))
                        })
                        .collect();
                    mean_and_se(&z, d)
                })
                .collect())
        }
        Variant::Softmax | Variant::L2 => {
            let ys = sample_gaussian(rng, g, samples)?;
            let v = params.v();
            let vy: Vec<DVector<f64>> = ys.iter().map(|y| v * y).collect();
            let ky: Vec<DVector<f64>> = ys.iter().map(|y| params.k() * y).collect();
            Ok(xs
                .iter()
                .map(|x| {
                    let qx = params.q() * x;
                    let logits: Vec<f64> = ky
                        .iter()
                        .map(|k| match params.variant {
                            Variant::Softmax => qx.dot(k),
                            _ => -(&qx - k).norm_squared(),
                        })
                        .collect();
                    ratio_estimate(&logits, &vy, d)
                })
                .collect())
        }
        other => Err(crate::error::Error::UnsupportedVariant(format!(
            "{other} has no Gaussian closed form"
        ))),
    }
}

fn mean_and_se(z: &[DVector<f64>], d: usize) -> (DVector<f64>, f64) {
    let n = z.len() as f64;
    let mean = z.iter().fold(DVector::zeros(d), |a, b| a + b) / n;
    let var = z.iter().map(|e| (e - &mean).norm_squared()).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Self-normalized estimate `sum w_i f_i / sum w_i` with a delta-method
/// standard error.
fn ratio_estimate(logits: &[f64], f: &[DVector<f64>], d: usize) -> (DVector<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let n = w.len() as f64;
    let wsum: f64 = w.iter().sum();
    let est = w.iter().zip(f).fold(DVector::zeros(d), |a, (wi, fi)| a + fi * *wi) / wsum;
    let wbar = wsum / n;
    let ss: f64 = w
        .iter()
        .zip(f)
        .map(|(wi, fi)| ((fi - &est) * (*wi / wbar)).norm_squared())
        .sum();
    (est, (ss / (n * (n - 1.0))).sqrt())
}

/// Compares each candidate closed form with one shared Monte-Carlo
/// estimate per configuration and query point.
pub fn velocity_parity(
    variant: Variant,
    spec: &ParitySpec,
    candidates: &[ClosedFormFn<'_>],
) -> Result<Vec<ParityOutcome>> {
    let mut out = vec![
        ParityOutcome {
            worst_ratio: 0.0,
            failures: 0,
            total: 0
        };
        candidates.len()
    ];
    for c in 0..spec.configs {
        let mut rng = stream(spec.seed, c as u64);
        let d = 1 + c % 3;
        let (p, g) = parity_config(variant, &mut rng, d)?;
        let xs: Vec<DVector<f64>> = (0..spec.points).map(|_| normal_vector(&mut rng, d)).collect();
        let est = velocity_monte_carlo(&p, &g, &xs, spec.samples, spec.replicates, &mut rng)?;
        for (o, cand) in out.iter_mut().zip(candidates) {
            let field = cand(&p, &g)?;
            for (x, (m, se)) in xs.iter().zip(&est) {
                let r = (field.apply(x) - m).norm() / se.max(1e-300);
                o.worst_ratio = o.worst_ratio.max(r);
                o.total += 1;
                if r > 3.0 {
                    o.failures += 1;
                }
            }
        }
    }
    Ok(out)
}

fn parity_check(name: &str, variant: Variant, spec: &ParitySpec, closed: ClosedFormFn<'_>) -> Check {
    guard(name, || {
        let o = velocity_parity(variant, spec, &[closed])?[0];
        Ok(Check::at_most(
            name,
            o.failures as f64,
            0.0,
            format!("{} of {} points beyond 3 SE, worst {:.3} SE", o.failures, o.total, o.worst_ratio),
        ))
    })
}

/// Softmax Gaussian parity with an injectable closed form.
pub fn softmax_parity_check(spec: &ParitySpec, closed: ClosedFormFn<'_>) -> Check {
    parity_check("softmax-gaussian-parity", Variant::Softmax, spec, closed)
}

/// Both candidate Sinkhorn `C` matrices against discrete Sinkhorn. Passes
/// when the implemented form stays within 3 SE everywhere.
pub fn sinkhorn_adjudication_check(spec: &ParitySpec) -> Check {
    let name = "sinkhorn-c-adjudication";
    guard(name, || {
        let g_form = |p: &AttentionParams, g: &GaussianMeasure| {
            velocity_gaussian_sinkhorn(p, g, SinkhornCForm::ATransposeSigmaA)
        };
        let f_form = |p: &AttentionParams, g: &GaussianMeasure| {
            velocity_gaussian_sinkhorn(p, g, SinkhornCForm::ASigmaATranspose)
        };
        let o = velocity_parity(Variant::Sinkhorn, spec, &[&g_form, &f_form])?;
        Ok(Check::at_most(
            name,
            o[0].failures as f64,
            0.0,
            format!(
                "A^T Sigma A: {}/{} beyond 3 SE (worst {:.3}); A Sigma A^T: {}/{} beyond 3 SE (worst {:.3})",
                o[0].failures, o[0].total, o[0].worst_ratio, o[1].failures, o[1].total, o[1].worst_ratio
            ),
        ))
    })
}

/// Sinkhorn energy along conforming `d = 1` flows (`Q = K`, `V = -A`).
pub fn sinkhorn_energy_check(configs: usize, seed: u64) -> Check {
    let name = "sinkhorn-energy-monotone";
    guard(name, || {
        let mut worst = f64::NEG_INFINITY;
        for c in 0..configs {
            let mut rng = stream(seed, c as u64);
            let q: f64 = 0.5 + rng.random::<f64>();
            let a = q * q;
            let eps = 0.5 + rng.random::<f64>();
            let p = AttentionParams::new(Variant::Sinkhorn, m1(q), m1(q), m1(-a))?.with_eps(eps)?;
            let g = GaussianMeasure::new(
                DVector::from_element(1, rng.sample::<f64, _>(StandardNormal)),
                m1(0.2 + rng.random::<f64>()),
            )?;
            let tr = integrate_moments(&p.clone().into(), &g, &SolverConfig::rk4(1e-3, 5.0))?;
            let rep = energy_monotonicity_report(EnergyKind::SinkGaussian, TrajectoryRef::Moments(&tr), &p)?;
            worst = worst.max(rep.max_relative_increase);
        }
        Ok(Check::at_most(name, worst.max(0.0), 1e-6, format!("{configs} configs, t in [0, 5]")))
    })
}

/// In-domain random Softmax energy configuration: the spectral radius of
/// `A Sigma A^T Sigma` is below `0.05`, so the sampled integrand has
/// finite fourth moment.
pub fn softmax_energy_config(rng: &mut impl Rng, d: usize) -> Result<(GaussianMeasure, DMatrix<f64>)> {
    let sigma = wishart(rng, d, d + 3);
    let alpha = normal_vector(rng, d) * 0.5;
    let mut a = normal_matrix(rng, d, d);
    let rho = |a: &DMatrix<f64>| {
        let root = linalg::psd_sqrt(&sigma).expect("psd");
        linalg::sym_eig(&(&root * a * &sigma * a.transpose() * &root))
            .map(|e| e.max())
            .unwrap_or(f64::INFINITY)
    };
    let r = rho(&a);
    if r > 0.05 {
        a *= (0.05 / r).sqrt() * 0.9;
    }
    let g = GaussianMeasure::new(alpha, sigma)?;
    Ok((g, a))
}

/// `|closed - MC| / SE` for `(1/2) E exp(A x . y)` from `samples` pairs.
pub fn softmax_energy_mc_ratio(
    g: &GaussianMeasure,
    a: &DMatrix<f64>,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let exact = softmax_energy_gaussian(g, a)?;
    let xs = sample_gaussian(rng, g, samples)?;
    let ys = sample_gaussian(rng, g, samples)?;
    let vals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| 0.5 * (a * x).dot(y).exp()).collect();
    let n = samples as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((exact - mean).abs() / (var / n).sqrt())
}

pub fn softmax_energy_check(configs: usize, samples: usize, seed: u64) -> Check {
    let name = "softmax-energy-monte-carlo";
    guard(name, || {
        let mut worst: f64 = 0.0;
        let mut out_of_domain = 0;
        for c in 0..configs {
            let mut rng = stream(seed, c as u64);
            let (g, a) = softmax_energy_config(&mut rng, 1 + c % 3)?;
            if !softmax_energy_finite(&g, &a) {
                out_of_domain += 1;
                continue;
            }
            worst = worst.max(softmax_energy_mc_ratio(&g, &a, samples, &mut rng)?);
        }
        Ok(Check::at_most(
            name,
            worst,
            3.0,
            format!("{configs} configs, {samples} samples, {out_of_domain} out of domain"),
        ))
    })
}

/// Sinkhorn mean against `alpha(t) = exp(tV/eps) alpha_0`.
pub fn sinkhorn_mean_check(configs: usize, seed: u64) -> Check {
    let name = "sinkhorn-mean-exponential";
    guard(name, || {
        let mut worst: f64 = 0.0;
        for c in 0..configs {
            let mut rng = stream(seed, c as u64);
            let d = 1 + c % 3;
            let q = DMatrix::identity(d, d) + normal_matrix(&mut rng, d, d) * 0.2;
            let k = DMatrix::identity(d, d) + normal_matrix(&mut rng, d, d) * 0.2;
            let v = normal_matrix(&mut rng, d, d) * 0.3;
            let eps = 1.0;
            let p = AttentionParams::new(Variant::Sinkhorn, q, k, v.clone())?.with_eps(eps)?;
            let g = GaussianMeasure::new(normal_vector(&mut rng, d), wishart(&mut rng, d, d + 3))?;
            let tr = integrate_moments(&p.into(), &g, &SolverConfig::rk4(1e-3, 1.0))?;
            if tr.status != TrajectoryStatus::Completed {
                continue;
            }
            let exact = (v * (tr.final_time() / eps)).exp() * &g.alpha;
            worst = worst.max((&tr.last().alpha - &exact).norm() / exact.norm().max(1.0));
        }
        Ok(Check::at_most(name, worst, 1e-8, format!("{configs} configs, t = 1")))
    })
}

/// The full suite at moderate sampling effort.
pub fn run_validation_suite(seed: u64) -> ValidationReport {
    let parity = |configs, samples, replicates| ParitySpec {
        configs,
        points: 5,
        samples,
        replicates,
        seed,
    };
    let closed = |p: &AttentionParams, g: &GaussianMeasure| velocity_gaussian(p, g);
    let checks = vec![
        softmax_dim1_check(5),
        blowup_time_check(),
        commuting_check(20, seed),
        l2_global_existence_check(40, seed, 50.0),
        eot_exact_check(),
        eot_monte_carlo_check(3, 1000, seed),
        bistochastic_check(50, seed),
        masked_equality_check(50, seed),
        softmax_parity_check(&parity(10, 100_000, 0), &closed),
        parity_check("l2-gaussian-parity", Variant::L2, &parity(10, 100_000, 0), &closed),
        parity_check("linear-eps-gaussian-parity", Variant::LinearEps, &parity(10, 100_000, 0), &closed),
        sinkhorn_adjudication_check(&parity(6, 400, 10)),
        sinkhorn_mean_check(10, seed),
        sinkhorn_energy_check(10, seed),
        softmax_energy_check(20, 200_000, seed),
    ];
    let passed = checks.iter().all(|c| c.passed);
    ValidationReport { checks, passed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_softmax_sign_fails_parity() {
        let spec = ParitySpec {
            configs: 4,
            points: 5,
            samples: 20_000,
            replicates: 0,
            seed: 9,
        };
        let good = |p: &AttentionParams, g: &GaussianMeasure| velocity_gaussian(p, g);
        let bad = |p: &AttentionParams, g: &GaussianMeasure| {
            let f = velocity_gaussian(p, g)?;
            Ok(AffineField { m: -f.m, b: f.b })
        };
        assert!(softmax_parity_check(&spec, &good).passed);
        let c = softmax_parity_check(&spec, &bad);
        assert!(!c.passed, "{}", c.detail);
    }

    #[test]
    fn exact_checks_pass() {
        assert!(eot_exact_check().passed);
        assert!(blowup_time_check().passed);
        assert!(softmax_dim1_check(2).passed);
    }
}
