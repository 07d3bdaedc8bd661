//! Attention parameters and time-dependent schedules.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Normalization of the attention kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Softmax,
    Linear,
    LinearEps,
    L2,
    Sinkhorn,
    Sigmoid,
    Relu,
    Exp,
    MultiHead,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Softmax => "softmax",
            Variant::Linear => "linear",
            Variant::LinearEps => "linear-eps",
            Variant::L2 => "l2",
            Variant::Sinkhorn => "sinkhorn",
            Variant::Sigmoid => "sigmoid",
            Variant::Relu => "relu",
            Variant::Exp => "exp",
            Variant::MultiHead => "multi-head",
        };
        f.write_str(s)
    }
}

/// One attention head. `q` and `k` are `k x d`, `v` is `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub q: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl Head {
    pub fn new(q: DMatrix<f64>, k: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let d = v.nrows();
        if v.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "value matrix",
                expected: d,
                found: v.ncols(),
            });
        }
        if q.ncols() != d || k.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "query/key columns",
                expected: d,
                found: q.ncols().min(k.ncols()),
            });
        }
        if q.nrows() != k.nrows() {
            return Err(Error::DimensionMismatch {
                context: "query/key rows",
                expected: q.nrows(),
                found: k.nrows(),
            });
        }
        Ok(Self { q, k, v })
    }

    /// `A = K^T Q`.
    pub fn a(&self) -> DMatrix<f64> {
        self.k.transpose() * &self.q
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }
}

/// Parameters of one attention layer.
///
/// `masked` restricts every token to attend to tokens with position at
/// most its own. Multi-head layers keep their heads in `heads` and use
/// Softmax normalization per head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub variant: Variant,
    pub head: Head,
    pub eps: f64,
    pub heads: Vec<Head>,
    pub masked: bool,
}

impl AttentionParams {
    pub fn new(variant: Variant, q: DMatrix<f64>, k: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if variant == Variant::MultiHead {
            return Err(Error::InvalidInput(
                "use AttentionParams::multi_head for multi-head layers".into(),
            ));
        }
        Ok(Self {
            variant,
            head: Head::new(q, k, v)?,
            eps: 1.0,
            heads: Vec::new(),
            masked: false,
        })
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidInput("eps must be positive".into()));
        }
        self.eps = eps;
        Ok(self)
    }

    pub fn masked(mut self) -> Self {
        self.masked = true;
        self
    }

    /// Sum of Softmax heads. Each head has `d / H` query rows.
    pub fn multi_head(heads: Vec<Head>) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| Error::InvalidInput("no heads".into()))?
            .clone();
        let d = first.dim();
        let h = heads.len();
        if d % h != 0 {
            return Err(Error::InvalidInput(format!(
                "{h} heads do not divide dimension {d}"
            )));
        }
        for head in &heads {
            if head.dim() != d {
                return Err(Error::DimensionMismatch {
                    context: "head dimension",
                    expected: d,
                    found: head.dim(),
                });
            }
            if head.q.nrows() != d / h {
                return Err(Error::DimensionMismatch {
                    context: "head query rows",
                    expected: d / h,
                    found: head.q.nrows(),
                });
            }
        }
        Ok(Self {
            variant: Variant::MultiHead,
            head: first,
            eps: 1.0,
            heads,
            masked: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.head.dim()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.head.q
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.head.k
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.head.v
    }

    pub fn a(&self) -> DMatrix<f64> {
        self.head.a()
    }

    /// Heads whose fields are summed. A single-head layer is its own head.
    pub fn effective_heads(&self) -> &[Head] {
        if self.variant == Variant::MultiHead {
            &self.heads
        } else {
            std::slice::from_ref(&self.head)
        }
    }

    /// Operator-norm bound `L` such that `|Gamma(x)| <= L max_j |x_j|`.
    pub fn value_norm(&self) -> f64 {
        match self.variant {
            Variant::MultiHead => self.heads.iter().map(|h| linalg::spectral_norm(&h.v)).sum(),
            Variant::Sinkhorn => linalg::spectral_norm(self.v()) / self.eps,
            _ => linalg::spectral_norm(self.v()),
        }
    }
}

/// Piecewise-constant parameters in time.
#[derive(Debug, Clone, PartialEq)]
pub enum ParameterSchedule {
    Constant(AttentionParams),
    /// Segments `(start, params)` with increasing start times; the first
    /// segment starts at 0.
    Piecewise(Vec<(f64, AttentionParams)>),
}

impl ParameterSchedule {
    pub fn piecewise(segments: Vec<(f64, AttentionParams)>) -> Result<Self> {
        if segments.is_empty() || segments[0].0 != 0.0 {
            return Err(Error::InvalidInput("first segment must start at 0".into()));
        }
        let d = segments[0].1.dim();
        for w in segments.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidInput("segment starts must increase".into()));
            }
        }
        if segments.iter().any(|(_, p)| p.dim() != d) {
            return Err(Error::InvalidInput("segments differ in dimension".into()));
        }
        Ok(Self::Piecewise(segments))
    }

    pub fn at(&self, t: f64) -> &AttentionParams {
        match self {
            ParameterSchedule::Constant(p) => p,
            ParameterSchedule::Piecewise(segs) => {
                let mut cur = &segs[0].1;
                for (start, p) in segs {
                    if *start <= t {
                        cur = p;
                    } else {
                        break;
                    }
                }
                cur
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.at(0.0).dim()
    }

    /// `int_0^t L(s) ds` with `L` the value norm of the active segment.
    pub fn integrated_value_norm(&self, t: f64) -> f64 {
        match self {
            ParameterSchedule::Constant(p) => p.value_norm() * t,
            ParameterSchedule::Piecewise(segs) => {
                let mut total = 0.0;
                for (i, (start, p)) in segs.iter().enumerate() {
                    if *start >= t {
                        break;
                    }
                    let end = segs.get(i + 1).map(|s| s.0).unwrap_or(f64::INFINITY).min(t);
                    total += p.value_norm() * (end - start);
                }
                total
            }
        }
    }
}

impl From<AttentionParams> for ParameterSchedule {
    fn from(p: AttentionParams) -> Self {
        ParameterSchedule::Constant(p)
    }
}
