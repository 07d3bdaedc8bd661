//! Attention velocity fields on empirical and Gaussian measures.

mod gaussian;
pub mod sinkhorn;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::params::{AttentionParams, Head, Variant};

pub use gaussian::{
    sinkhorn_gaussian_c, velocity_gaussian, velocity_gaussian_sinkhorn, SinkhornCForm,
    SINGULAR_A_COND,
};
pub use sinkhorn::{sinkhorn_kernel_discrete, DiscreteKernel};

/// Precomputed keys and values of one head over a measure.
struct HeadCache {
    q: DMatrix<f64>,
    kdim: usize,
    d: usize,
    keys: Vec<f64>,
    values: Vec<f64>,
}

impl HeadCache {
    fn new(head: &Head, mu: &EmpiricalMeasure) -> Self {
        let kdim = head.q.nrows();
        let d = head.dim();
        let mut keys = Vec::with_capacity(mu.n() * kdim);
        let mut values = Vec::with_capacity(mu.n() * d);
        for x in mu.tokens() {
            keys.extend((&head.k * x).iter());
            values.extend((&head.v * x).iter());
        }
        Self {
            q: head.q.clone(),
            kdim,
            d,
            keys,
            values,
        }
    }

    fn n(&self) -> usize {
        self.keys.len() / self.kdim.max(1)
    }

    fn key(&self, j: usize) -> &[f64] {
        &self.keys[j * self.kdim..(j + 1) * self.kdim]
    }

    /// `sum_j w_j V x_j / sum_j w_j` for `w_j = exp(logit_j - max)`.
    fn normalized(&self, logits: &[f64]) -> DVector<f64> {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut out = vec![0.0; self.d];
        let mut total = 0.0;
        for (j, l) in logits.iter().enumerate() {
            let w = (l - max).exp();
            total += w;
            let vj = &self.values[j * self.d..(j + 1) * self.d];
            for (o, v) in out.iter_mut().zip(vj) {
                *o += w * v;
            }
        }
        DVector::from_iterator(self.d, out.into_iter().map(|o| o / total))
    }

    /// `(1/n) sum_j phi(s_j) V x_j` for the raw scores `s_j`.
    fn averaged(&self, scores: &[f64], phi: impl Fn(f64) -> f64) -> DVector<f64> {
        let mut out = vec![0.0; self.d];
        for (j, s) in scores.iter().enumerate() {
            let w = phi(*s);
            let vj = &self.values[j * self.d..(j + 1) * self.d];
            for (o, v) in out.iter_mut().zip(vj) {
                *o += w * v;
            }
        }
        let n = self.n() as f64;
        DVector::from_iterator(self.d, out.into_iter().map(|o| o / n))
    }

    fn scores(&self, qx: &DVector<f64>) -> Vec<f64> {
        (0..self.n())
            .map(|j| self.key(j).iter().zip(qx.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn sq_dists(&self, qx: &DVector<f64>) -> Vec<f64> {
        (0..self.n())
            .map(|j| {
                self.key(j)
                    .iter()
                    .zip(qx.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
            .collect()
    }
}

/// Evaluates the velocity field of one (unmasked) measure at many points.
pub struct FieldEvaluator {
    variant: Variant,
    eps: f64,
    heads: Vec<HeadCache>,
    // linear-eps: (1/n) sum V x_j and V Cov A
    mean_value: Option<DVector<f64>>,
    cov_map: Option<DMatrix<f64>>,
    potentials: Option<DVector<f64>>,
    d: usize,
}

impl FieldEvaluator {
    pub fn new(
        params: &AttentionParams,
        mu: &EmpiricalMeasure,
        kernel: Option<&DiscreteKernel>,
    ) -> Result<Self> {
        let d = params.dim();
        if mu.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "measure dimension",
                expected: d,
                found: mu.dim(),
            });
        }
        let heads: Vec<HeadCache> = params
            .effective_heads()
            .iter()
            .map(|h| HeadCache::new(h, mu))
            .collect();
        let mut ev = Self {
            variant: params.variant,
            eps: params.eps,
            heads,
            mean_value: None,
            cov_map: None,
            potentials: None,
            d,
        };
        match params.variant {
            Variant::LinearEps => {
                ev.mean_value = Some(params.v() * mu.mean());
                ev.cov_map = Some(params.v() * mu.covariance() * params.a());
            }
            Variant::Sinkhorn => {
                let ker = kernel.ok_or(Error::MissingKernel)?;
                if ker.n() != mu.n() {
                    return Err(Error::DimensionMismatch {
                        context: "sinkhorn kernel size",
                        expected: mu.n(),
                        found: ker.n(),
                    });
                }
                ev.potentials = Some(ker.g.clone());
            }
            _ => {}
        }
        Ok(ev)
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                context: "query point",
                expected: self.d,
                found: x.len(),
            });
        }
        let h = &self.heads[0];
        let out = match self.variant {
            Variant::Softmax => {
                let qx = &h.q * x;
                h.normalized(&h.scores(&qx))
            }
            Variant::MultiHead => {
                let mut acc = DVector::zeros(self.d);
                for head in &self.heads {
                    let qx = &head.q * x;
                    acc += head.normalized(&head.scores(&qx));
                }
                acc
            }
            Variant::L2 => {
                let qx = &h.q * x;
                let logits: Vec<f64> = h.sq_dists(&qx).into_iter().map(|s| -s).collect();
                h.normalized(&logits)
            }
            Variant::Sinkhorn => {
                let g = self.potentials.as_ref().ok_or(Error::MissingKernel)?;
                let qx = &h.q * x;
                let logits: Vec<f64> = h
                    .sq_dists(&qx)
                    .into_iter()
                    .zip(g.iter())
                    .map(|(s, gj)| gj - s / (2.0 * self.eps))
                    .collect();
                h.normalized(&logits) / self.eps
            }
            Variant::Linear => {
                let qx = &h.q * x;
                h.averaged(&h.scores(&qx), |s| s)
            }
            Variant::LinearEps => {
                let mv = self.mean_value.as_ref().expect("linear-eps cache");
                let cm = self.cov_map.as_ref().expect("linear-eps cache");
                mv / self.eps + cm * x
            }
            Variant::Sigmoid => {
                let qx = &h.q * x;
                h.averaged(&h.scores(&qx), |s| 1.0 / (1.0 + (-s).exp()))
            }
            Variant::Relu => {
                let qx = &h.q * x;
                h.averaged(&h.scores(&qx), |s| s.max(0.0))
            }
            Variant::Exp => {
                let qx = &h.q * x;
                h.averaged(&h.scores(&qx), f64::exp)
            }
        };
        Ok(out)
    }
}

/// `Gamma_mu(x)` for an unmasked layer. The Sinkhorn variant needs the
/// kernel of `mu`.
pub fn velocity_discrete(
    params: &AttentionParams,
    mu: &EmpiricalMeasure,
    x: &DVector<f64>,
    kernel: Option<&DiscreteKernel>,
) -> Result<DVector<f64>> {
    if params.masked {
        return Err(Error::UnsupportedVariant(
            "masked layer (use velocity_masked)".into(),
        ));
    }
    FieldEvaluator::new(params, mu, kernel)?.eval(x)
}

/// Masked field at `(sigma, x)`: the unmasked field of the tokens with
/// position at most `sigma`, with a zero position component prepended.
pub fn velocity_masked(
    params: &AttentionParams,
    mu_bar: &EmpiricalMeasure,
    sigma: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sub = mu_bar.restrict(sigma)?.space_marginal();
    let mut unmasked = params.clone();
    unmasked.masked = false;
    let kernel = if unmasked.variant == Variant::Sinkhorn {
        Some(sinkhorn_kernel_discrete(
            &sub,
            &unmasked,
            sinkhorn::DEFAULT_MAX_ITERS,
            sinkhorn::DEFAULT_TOL,
        )?)
    } else {
        None
    };
    let v = velocity_discrete(&unmasked, &sub, x, kernel.as_ref())?;
    let mut out = DVector::zeros(v.len() + 1);
    out.rows_mut(1, v.len()).copy_from(&v);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }

    #[test]
    fn softmax_two_tokens() {
        let mu = EmpiricalMeasure::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let p = AttentionParams::new(Variant::Softmax, eye(2), eye(2), eye(2)).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let v = velocity_discrete(&p, &mu, &x, None).unwrap();
        assert!((v[0] - 1f64.tanh()).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn softmax_is_stable_for_large_scores() {
        let mu = EmpiricalMeasure::from_rows(&[vec![100.0], vec![-100.0]]).unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        let p = AttentionParams::new(Variant::Softmax, one.clone(), one.clone(), one).unwrap();
        let v = velocity_discrete(&p, &mu, &DVector::from_vec(vec![100.0]), None).unwrap();
        assert_eq!(v[0], 100.0);
    }

    #[test]
    fn sinkhorn_requires_kernel() {
        let mu = EmpiricalMeasure::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        let p = AttentionParams::new(Variant::Sinkhorn, one.clone(), one.clone(), one).unwrap();
        let x = DVector::from_vec(vec![0.0]);
        assert_eq!(
            velocity_discrete(&p, &mu, &x, None),
            Err(Error::MissingKernel)
        );
    }

    #[test]
    fn masked_first_component_is_zero() {
        let mu = EmpiricalMeasure::with_positions(
            vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![0.5, -1.0])],
            vec![0.0, 1.0],
        )
        .unwrap();
        let p = AttentionParams::new(Variant::Softmax, eye(2), eye(2), eye(2)).unwrap();
        let x = DVector::from_vec(vec![0.3, 0.3]);
        let v = velocity_masked(&p, &mu, 0.5, &x).unwrap();
        assert_eq!(v[0], 0.0);
        // single visible token: the field is V x_1
        assert_eq!(v[1], 1.0);
        assert_eq!(v[2], 2.0);
    }
}
