//! Optimal transport between token measures.

mod assignment;
mod gaussian;

use nalgebra::{DMatrix, DVector};

use crate::attention::sinkhorn::{attention_cost, solve_uniform};
use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;

pub use assignment::hungarian;
pub use gaussian::{
    bures_wasserstein, coupling_cost, entropic_bures, eot_gaussian_coupling, eot_gaussian_value,
    GaussianCoupling,
};

/// Largest measure size accepted by the exact solver.
pub const EXACT_CAP: usize = 2048;
/// Two positions are the same slice when they differ by at most this.
pub const POSITION_TOL: f64 = 1e-12;

fn check_pair(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::SizeMismatch {
            left: a.n(),
            right: b.n(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "transported measures",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.n() > EXACT_CAP {
        return Err(Error::TooLarge {
            n: a.n(),
            cap: EXACT_CAP,
        });
    }
    Ok(())
}

fn wasserstein_tokens(p: u32, a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    // solving in a canonical argument order makes the value exactly symmetric
    let key = |m: &[DVector<f64>]| m.iter().flat_map(|t| t.iter().copied()).collect::<Vec<f64>>();
    let swap = key(a)
        .iter()
        .zip(&key(b))
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        == Some(std::cmp::Ordering::Greater);
    let (a, b) = if swap { (b, a) } else { (a, b) };
    let n = a.len();
    let cost = DMatrix::from_fn(n, n, |i, j| {
        let d = (&a[i] - &b[j]).norm();
        if p == 1 {
            d
        } else {
            d * d
        }
    });
    let (_, total) = hungarian(&cost);
    let mean = (total / n as f64).max(0.0);
    if p == 1 {
        mean
    } else {
        mean.sqrt()
    }
}

/// Exact `W_p`, `p` in {1, 2}, between uniform measures of equal size.
pub fn wasserstein_discrete(p: u32, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if p != 1 && p != 2 {
        return Err(Error::InvalidInput(format!("unsupported exponent p = {p}")));
    }
    check_pair(a, b)?;
    Ok(wasserstein_tokens(p, a.tokens(), b.tokens()))
}

/// Tokens grouped by position, positions sorted.
fn slices(m: &EmpiricalMeasure) -> Result<Vec<(f64, Vec<DVector<f64>>)>> {
    let pos = m
        .positions()
        .ok_or_else(|| Error::InvalidInput("measure has no positions".into()))?;
    let mut order: Vec<usize> = (0..m.n()).collect();
    order.sort_by(|&i, &j| pos[i].total_cmp(&pos[j]));
    let mut out: Vec<(f64, Vec<DVector<f64>>)> = Vec::new();
    for i in order {
        match out.last_mut() {
            Some((p, toks)) if (pos[i] - *p).abs() <= POSITION_TOL => toks.push(m.tokens()[i].clone()),
            _ => out.push((pos[i], vec![m.tokens()[i].clone()])),
        }
    }
    Ok(out)
}

/// `sqrt(sum_tau theta(tau) W_2(mu^tau, nu^tau)^2)` for measures with the
/// same position marginal `theta`.
pub fn conditional_wasserstein(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    check_pair(a, b)?;
    let (pa, pb) = match (a.positions(), b.positions()) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::InvalidInput("measures need positions".into())),
    };
    let mut sa = pa.to_vec();
    let mut sb = pb.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    if sa.iter().zip(&sb).any(|(x, y)| (x - y).abs() > POSITION_TOL) {
        return Err(Error::MarginalMismatch);
    }
    let la = slices(a)?;
    let lb = slices(b)?;
    if la.len() != lb.len() {
        return Err(Error::MarginalMismatch);
    }
    let n = a.n() as f64;
    let mut total = 0.0;
    for ((_, ta), (_, tb)) in la.iter().zip(&lb) {
        if ta.len() != tb.len() {
            return Err(Error::MarginalMismatch);
        }
        let w = wasserstein_tokens(2, ta, tb);
        total += ta.len() as f64 / n * w * w;
    }
    Ok(total.sqrt())
}

/// Entropic transport between two uniform samples for the cost
/// `|Qx - Ky|^2 / (2 eps)`.
#[derive(Debug, Clone)]
pub struct DiscreteEot {
    /// `sum pi c + KL(pi | mu x nu)`.
    pub value: f64,
    /// Empirical `Cov_pi(x, y)`.
    pub cross: DMatrix<f64>,
    pub iterations: usize,
}

pub fn eot_discrete(
    x: &EmpiricalMeasure,
    y: &EmpiricalMeasure,
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    eps: f64,
    max_iters: usize,
    tol: f64,
) -> Result<DiscreteEot> {
    let qx: Vec<DVector<f64>> = x.tokens().iter().map(|t| q * t).collect();
    let ky: Vec<DVector<f64>> = y.tokens().iter().map(|t| k * t).collect();
    let cost = attention_cost(&qx, &ky, eps);
    let sol = solve_uniform(&cost, max_iters, tol)?;
    let (n, m) = cost.shape();
    let mass = 1.0 / (n * m) as f64;
    let mx = x.mean();
    let my = y.mean();
    let d = x.dim();
    let mut value = 0.0;
    let mut cross = DMatrix::zeros(d, y.dim());
    for i in 0..n {
        let xi = &x.tokens()[i] - &mx;
        for j in 0..m {
            let log_k = sol.f[i] + sol.g[j] - cost[(i, j)];
            let kij = log_k.exp();
            value += mass * kij * (cost[(i, j)] + log_k);
            let yj = &y.tokens()[j] - &my;
            cross += &xi * yj.transpose() * (mass * kij);
        }
    }
    Ok(DiscreteEot {
        value,
        cross,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn shifted_measures() {
        let a = EmpiricalMeasure::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let b = EmpiricalMeasure::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!((wasserstein_discrete(2, &a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!((wasserstein_discrete(1, &a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_sizes() {
        let a = EmpiricalMeasure::from_rows(&[vec![0.0]]).unwrap();
        let b = EmpiricalMeasure::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            wasserstein_discrete(2, &a, &b),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn conditional_two_slices() {
        let a = EmpiricalMeasure::with_positions(vec![tok(&[0.0]), tok(&[0.0])], vec![0.25, 0.75])
            .unwrap();
        let b = EmpiricalMeasure::with_positions(vec![tok(&[2.0]), tok(&[1.0])], vec![0.75, 0.25])
            .unwrap();
        let w = conditional_wasserstein(&a, &b).unwrap();
        assert!((w - 2.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn conditional_rejects_other_marginal() {
        let a = EmpiricalMeasure::with_positions(vec![tok(&[0.0])], vec![0.25]).unwrap();
        let b = EmpiricalMeasure::with_positions(vec![tok(&[0.0])], vec![0.5]).unwrap();
        assert_eq!(conditional_wasserstein(&a, &b), Err(Error::MarginalMismatch));
    }
}
