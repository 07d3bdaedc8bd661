//! Bistochastic normalization of attention by Sinkhorn scaling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::params::AttentionParams;

pub const DEFAULT_MAX_ITERS: usize = 10_000;
pub const DEFAULT_TOL: f64 = 1e-10;

const SCALING_LIMIT: f64 = 1e200;

/// Potentials of the entropic coupling between two uniform measures.
///
/// With `cost` already divided by the temperature, the coupling density
/// with respect to the product of uniform weights is
/// `exp(f_i + g_j - cost_ij)`. Its row and column averages are one.
#[derive(Debug, Clone)]
pub struct ScalingSolution {
    pub f: DVector<f64>,
    pub g: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl ScalingSolution {
    /// Density `exp(f_i + g_j - c_ij)`.
    pub fn density(&self, cost: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(cost.nrows(), cost.ncols(), |i, j| {
            (self.f[i] + self.g[j] - cost[(i, j)]).exp()
        })
    }
}

/// Sinkhorn scaling for uniform marginals. Starts with a row
/// normalization and stops when every row average is within `tol` of one
/// after a column normalization.
pub fn solve_uniform(cost: &DMatrix<f64>, max_iters: usize, tol: f64) -> Result<ScalingSolution> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("empty cost matrix".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("non-finite cost".into()));
    }
    let r = DVector::from_fn(n, |i, _| cost.row(i).min());
    let s = DVector::from_fn(m, |j, _| {
        (0..n).map(|i| cost[(i, j)] - r[i]).fold(f64::INFINITY, f64::min)
    });
    let kt = DMatrix::from_fn(n, m, |i, j| (-(cost[(i, j)] - r[i] - s[j])).exp());
    let ktt = kt.transpose();
    let (nf, mf) = (n as f64, m as f64);

    let mut u = DVector::from_element(n, 1.0);
    let mut v = DVector::from_element(m, 1.0);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut stable = true;
    while iterations < max_iters {
        let kv = &kt * &v;
        if iterations > 0 {
            residual = (0..n)
                .map(|i| (u[i] * kv[i] / mf - 1.0).abs())
                .fold(0.0, f64::max);
            if residual <= tol {
                break;
            }
        }
        u = kv.map(|x| mf / x);
        let ku = &ktt * &u;
        v = ku.map(|x| nf / x);
        iterations += 1;
        let bad = |x: &f64| !x.is_finite() || *x > SCALING_LIMIT || *x < 1.0 / SCALING_LIMIT;
        if u.iter().any(bad) || v.iter().any(bad) {
            stable = false;
            break;
        }
    }
    if stable {
        let f = DVector::from_fn(n, |i, _| u[i].ln() + r[i]);
        let g = DVector::from_fn(m, |j, _| v[j].ln() + s[j]);
        if residual > tol {
            return Err(Error::NotConverged {
                iterations,
                residual,
            });
        }
        return Ok(ScalingSolution {
            f,
            g,
            iterations,
            residual,
        });
    }
    log_domain(cost, max_iters, tol)
}

fn log_mean_exp(vals: impl Iterator<Item = f64> + Clone, count: f64) -> f64 {
    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = vals.map(|x| (x - max).exp()).sum();
    max + (sum / count).ln()
}

fn log_domain(cost: &DMatrix<f64>, max_iters: usize, tol: f64) -> Result<ScalingSolution> {
    let (n, m) = cost.shape();
    let mut f: DVector<f64> = DVector::zeros(n);
    let mut g: DVector<f64> = DVector::zeros(m);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        if iterations > 0 {
            residual = (0..n)
                .map(|i| {
                    let lse = log_mean_exp((0..m).map(|j| g[j] - cost[(i, j)]), m as f64);
                    ((f[i] + lse).exp() - 1.0).abs()
                })
                .fold(0.0, f64::max);
            if residual <= tol {
                break;
            }
        }
        for i in 0..n {
            f[i] = -log_mean_exp((0..m).map(|j| g[j] - cost[(i, j)]), m as f64);
        }
        for j in 0..m {
            g[j] = -log_mean_exp((0..n).map(|i| f[i] - cost[(i, j)]), n as f64);
        }
        iterations += 1;
    }
    if residual > tol {
        return Err(Error::NotConverged {
            iterations,
            residual,
        });
    }
    Ok(ScalingSolution {
        f,
        g,
        iterations,
        residual,
    })
}

/// Bistochastic attention kernel of an empirical measure.
#[derive(Debug, Clone)]
pub struct DiscreteKernel {
    /// `kappa_ij`, with every row and column average equal to one.
    pub kappa: DMatrix<f64>,
    /// Column potentials, used to extend the kernel off the support.
    pub g: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
    keys: Vec<DVector<f64>>,
    q: DMatrix<f64>,
    eps: f64,
}

impl DiscreteKernel {
    pub fn n(&self) -> usize {
        self.keys.len()
    }

    /// Normalized weights `kappa(x, x_j) / n` at an arbitrary query.
    pub fn weights_at(&self, x: &DVector<f64>) -> DVector<f64> {
        let qx = &self.q * x;
        let logits: Vec<f64> = self
            .keys
            .iter()
            .zip(self.g.iter())
            .map(|(k, g)| g - (&qx - k).norm_squared() / (2.0 * self.eps))
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        DVector::from_iterator(w.len(), w.into_iter().map(|x| x / total))
    }

    /// Largest deviation of a row or column average from one.
    pub fn bistochastic_residual(&self) -> f64 {
        let n = self.kappa.nrows() as f64;
        let rows = self.kappa.row_iter().map(|r| (r.sum() / n - 1.0).abs());
        let cols = self.kappa.column_iter().map(|c| (c.sum() / n - 1.0).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

/// Cost `|Q x_i - K x_j|^2 / (2 eps)` between queries and keys.
pub fn attention_cost(
    queries: &[DVector<f64>],
    keys: &[DVector<f64>],
    eps: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(queries.len(), keys.len(), |i, j| {
        (&queries[i] - &keys[j]).norm_squared() / (2.0 * eps)
    })
}

pub fn sinkhorn_kernel_discrete(
    mu: &EmpiricalMeasure,
    params: &AttentionParams,
    max_iters: usize,
    tol: f64,
) -> Result<DiscreteKernel> {
    let q = params.q();
    let k = params.k();
    if q.ncols() != mu.dim() {
        return Err(Error::DimensionMismatch {
            context: "sinkhorn kernel",
            expected: q.ncols(),
            found: mu.dim(),
        });
    }
    let queries: Vec<DVector<f64>> = mu.tokens().iter().map(|x| q * x).collect();
    let keys: Vec<DVector<f64>> = mu.tokens().iter().map(|x| k * x).collect();
    let cost = attention_cost(&queries, &keys, params.eps);
    let sol = solve_uniform(&cost, max_iters, tol)?;
    let kappa = sol.density(&cost);
    Ok(DiscreteKernel {
        kappa,
        g: sol.g,
        iterations: sol.iterations,
        residual: sol.residual,
        keys,
        q: q.clone(),
        eps: params.eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Variant;

    #[test]
    fn two_point_kernel() {
        let mu = EmpiricalMeasure::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        let p = AttentionParams::new(Variant::Sinkhorn, one.clone(), one.clone(), one).unwrap();
        let ker = sinkhorn_kernel_discrete(&mu, &p, DEFAULT_MAX_ITERS, 1e-14).unwrap();
        let e2 = 2f64.exp();
        let diag = 2.0 * e2 / (1.0 + e2);
        let off = 2.0 / (1.0 + e2);
        assert!((ker.kappa[(0, 0)] - diag).abs() < 1e-12);
        assert!((ker.kappa[(0, 1)] - off).abs() < 1e-12);
        assert!(ker.bistochastic_residual() < 1e-12);
    }

    #[test]
    fn extreme_costs_stay_finite() {
        let cost = DMatrix::from_row_slice(2, 2, &[0.0, 900.0, 1200.0, 0.0]);
        let sol = solve_uniform(&cost, 1000, 1e-12).unwrap();
        let k = sol.density(&cost);
        for i in 0..2 {
            assert!((k.row(i).sum() / 2.0 - 1.0).abs() < 1e-10);
            assert!((k.column(i).sum() / 2.0 - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let cost = DMatrix::from_fn(5, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 * 3.0);
        assert!(matches!(
            solve_uniform(&cost, 1, 1e-14),
            Err(Error::NotConverged { .. })
        ));
    }
}
