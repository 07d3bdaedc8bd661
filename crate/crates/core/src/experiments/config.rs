//! JSON experiment configuration and seeded parameter generation.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Clock, Method, SolverConfig};
use crate::error::{Error, Result};
use crate::experiments::rng::{normal_matrix, wishart};
use crate::linalg;
use crate::measure::GaussianMeasure;
use crate::params::{AttentionParams, Head, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Cone2d,
    RankHistogram,
    MeanField,
    Validate,
    SingleRun,
}

/// Structural constraint imposed on `A = K^T Q` when drawing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    /// `Q`, `K` with i.i.d. standard normal entries.
    #[default]
    None,
    /// `Q` random with `rank` rows (default `floor(d/2)`) and `K = -Q`.
    SymmetricNegative {
        #[serde(default)]
        rank: Option<usize>,
    },
    /// `A + A^T` negative definite: `Q = I`, `K = A^T`.
    NegativeDefinite,
    /// `A + A^T` positive definite: `Q = I`, `K = A^T`.
    PositiveDefinite,
    /// `K = Q`, so `A = Q^T Q` is symmetric; pair with `value: minus-a`.
    GradientFlow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ValueSpec {
    #[default]
    Identity,
    Random,
    MinusA,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParamSpec {
    /// Row-major matrices. For multi-head layers each head is listed.
    Fixed { heads: Vec<FixedHead> },
    Random {
        #[serde(default)]
        constraint: Constraint,
        #[serde(default)]
        value: ValueSpec,
        /// Multiplies `A`.
        #[serde(default = "one")]
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedHead {
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialSpec {
    /// Centered, with Wishart covariance `B B^T / dof` (default `dof = d + 2`).
    Wishart {
        #[serde(default)]
        dof: Option<usize>,
    },
    Fixed {
        alpha: Vec<f64>,
        sigma: Vec<Vec<f64>>,
    },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Wishart { dof: None }
    }
}

/// Equal-trace grid of 2x2 covariances, in cone coordinates
/// `(x, y, z) = (a - b, 2c, a + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// Points per side of the square grid.
    pub points: usize,
    /// Fraction of the cone radius `z` covered by the grid.
    pub radius: f64,
    /// Common trace `z`.
    pub trace: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 9,
            radius: 0.9,
            trace: 1.0,
        }
    }
}

/// Convergence declared once `||dSigma/ds||_F <= tol (offset + ||Sigma||_F)`
/// holds for `window` consecutive steps, `s` being the integration clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceSpec {
    pub tol: f64,
    pub window: usize,
    pub offset: f64,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            window: 100,
            offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    Gaussian,
    Particles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    pub dimension: usize,
    /// Number of heads for the multi-head variant.
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default = "one")]
    pub eps: f64,
    #[serde(default)]
    pub masked: bool,
    pub params: ParamSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_ns")]
    pub ns: Vec<usize>,
    #[serde(default = "default_reference_n")]
    pub reference_n: usize,
    /// Experiment-specific defaults apply when omitted.
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default)]
    pub convergence: ConvergenceSpec,
    #[serde(default)]
    pub mode: RunMode,
    /// Token count for single particle runs.
    #[serde(default = "default_particles")]
    pub particles: usize,
}

fn one() -> f64 {
    1.0
}
fn default_variant() -> Variant {
    Variant::Softmax
}
fn default_runs() -> usize {
    200
}
fn default_ns() -> Vec<usize> {
    vec![256, 512, 1024, 2048, 4096]
}
fn default_reference_n() -> usize {
    2048
}
fn default_rank_tol() -> f64 {
    1e-6
}
fn default_particles() -> usize {
    256
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if d == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if self.variant == Variant::MultiHead {
            let h = self.heads.ok_or_else(|| Error::Config("multi-head needs `heads`".into()))?;
            if h == 0 || !d.is_multiple_of(h) {
                return Err(Error::Config(format!("heads = {h} must divide d = {d}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::Config("rank_tol must lie in (0, 1)".into()));
        }
        if self.convergence.window == 0 || !(self.convergence.tol > 0.0) {
            return Err(Error::Config("convergence needs tol > 0 and window > 0".into()));
        }
        self.solver().validate().map_err(|e| Error::Config(e.to_string()))?;
        match self.experiment {
            ExperimentKind::Cone2d => {
                if d != 2 {
                    return Err(Error::Config("cone2d requires dimension 2".into()));
                }
                if self.grid.points == 0 || !(self.grid.radius > 0.0 && self.grid.radius < 1.0) {
                    return Err(Error::Config("grid needs points > 0 and radius in (0, 1)".into()));
                }
                if !(self.grid.trace > 0.0) {
                    return Err(Error::Config("grid trace must be positive".into()));
                }
            }
            ExperimentKind::RankHistogram => {
                if !matches!(self.variant, Variant::Softmax | Variant::L2) {
                    return Err(Error::Config("rank-hist supports softmax and l2".into()));
                }
                if self.runs == 0 {
                    return Err(Error::Config("runs must be positive".into()));
                }
            }
            ExperimentKind::MeanField => {
                if self.ns.is_empty() || self.ns.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("ns must be non-empty and increasing".into()));
                }
                if self.reference_n == 0 {
                    return Err(Error::Config("reference_n must be positive".into()));
                }
            }
            ExperimentKind::Validate | ExperimentKind::SingleRun => {}
        }
        if let ParamSpec::Random { constraint, value, scale } = &self.params {
            if !(scale.is_finite() && *scale > 0.0) {
                return Err(Error::Config("scale must be positive".into()));
            }
            if *constraint == Constraint::GradientFlow && *value != ValueSpec::MinusA {
                return Err(Error::Config("gradient-flow requires value = minus-a".into()));
            }
            if self.variant == Variant::MultiHead
                && !matches!(constraint, Constraint::None | Constraint::SymmetricNegative { .. })
            {
                return Err(Error::Config(
                    "multi-head supports only none or symmetric-negative constraints".into(),
                ));
            }
            if let Constraint::SymmetricNegative { rank: Some(r) } = constraint {
                if *r == 0 || *r > d {
                    return Err(Error::Config(format!("rank {r} out of range for d = {d}")));
                }
            }
        }
        if let InitialSpec::Fixed { alpha, sigma } = &self.initial {
            if alpha.len() != d || sigma.len() != d || sigma.iter().any(|r| r.len() != d) {
                return Err(Error::Config("initial alpha/sigma have the wrong shape".into()));
            }
        }
        Ok(())
    }

    /// The configured solver, or the experiment's default.
    pub fn solver(&self) -> SolverConfig {
        if let Some(s) = self.solver {
            return s;
        }
        match self.experiment {
            ExperimentKind::RankHistogram => SolverConfig {
                method: Method::Rk4,
                dt: 1e-2,
                t_end: 1e10,
                clock: Clock::Logarithmic,
                max_steps: 20_000,
                ..SolverConfig::default()
            },
            ExperimentKind::Cone2d => SolverConfig {
                method: Method::Euler,
                dt: 1e-2,
                t_end: 1e10,
                record_every: 10,
                clock: Clock::Logarithmic,
                max_steps: 200_000,
                ..SolverConfig::default()
            },
            ExperimentKind::MeanField => SolverConfig::rk4(0.05, 1.0),
            ExperimentKind::Validate | ExperimentKind::SingleRun => SolverConfig::default(),
        }
    }

    /// Draws the layer parameters, then checks the requested constraint.
    pub fn draw_params(&self, rng: &mut impl Rng) -> Result<AttentionParams> {
        let d = self.dimension;
        let heads = match &self.params {
            ParamSpec::Fixed { heads } => heads
                .iter()
                .map(|h| Head::new(rows(&h.q)?, rows(&h.k)?, rows(&h.v)?))
                .collect::<Result<Vec<_>>>()?,
            ParamSpec::Random { constraint, value, scale } => {
                let count = if self.variant == Variant::MultiHead {
                    self.heads.unwrap_or(1)
                } else {
                    1
                };
                (0..count)
                    .map(|_| draw_head(rng, d, d / count, count > 1, *constraint, *value, *scale))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let params = if self.variant == Variant::MultiHead {
            AttentionParams::multi_head(heads)?
        } else {
            if heads.len() != 1 {
                return Err(Error::Config(format!("{} expects one head", self.variant)));
            }
            let h = heads.into_iter().next().unwrap();
            AttentionParams::new(self.variant, h.q, h.k, h.v)?.with_eps(self.eps)?
        };
        if params.dim() != d {
            return Err(Error::Config(format!(
                "parameters have dimension {}, config says {d}",
                params.dim()
            )));
        }
        if let ParamSpec::Random { constraint, .. } = &self.params {
            check_constraint(&params, *constraint)?;
        }
        Ok(if self.masked { params.masked() } else { params })
    }

    pub fn draw_initial(&self, rng: &mut impl Rng) -> Result<GaussianMeasure> {
        let d = self.dimension;
        match &self.initial {
            InitialSpec::Wishart { dof } => {
                GaussianMeasure::centered(wishart(rng, d, dof.unwrap_or(d + 2)))
            }
            InitialSpec::Fixed { alpha, sigma } => {
                GaussianMeasure::new(DVector::from_column_slice(alpha), rows(sigma)?)
            }
        }
    }
}

fn rows(r: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = r.len();
    let m = r.first().map(|x| x.len()).unwrap_or(0);
    if n == 0 || m == 0 || r.iter().any(|x| x.len() != m) {
        return Err(Error::Config("matrix rows are empty or ragged".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| r[i][j]))
}

fn draw_head(
    rng: &mut impl Rng,
    d: usize,
    head_rows: usize,
    multi: bool,
    constraint: Constraint,
    value: ValueSpec,
    scale: f64,
) -> Result<Head> {
    let (q, k) = match constraint {
        Constraint::None => {
            let q = normal_matrix(rng, head_rows, d) * scale;
            (q, normal_matrix(rng, head_rows, d))
        }
        Constraint::SymmetricNegative { rank } => {
            let r = if multi { head_rows } else { rank.unwrap_or(d / 2).max(1) };
            let q = normal_matrix(rng, r, d);
            let k = -&q * scale;
            (q, k)
        }
        Constraint::NegativeDefinite | Constraint::PositiveDefinite => {
            let b = normal_matrix(rng, d, d);
            let s = normal_matrix(rng, d, d);
            let sym = &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1;
            let skew = (&s - s.transpose()) * 0.5;
            let sign = if constraint == Constraint::NegativeDefinite { -1.0 } else { 1.0 };
            let a = (sym * sign + skew) * scale;
            (DMatrix::identity(d, d), a.transpose())
        }
        Constraint::GradientFlow => {
            let q = normal_matrix(rng, d, d) * scale.sqrt();
            (q.clone(), q)
        }
    };
    let v = match value {
        ValueSpec::Identity => DMatrix::identity(d, d),
        ValueSpec::Random => normal_matrix(rng, d, d),
        ValueSpec::MinusA => -(k.transpose() * &q),
    };
    Head::new(q, k, v)
}

fn check_constraint(params: &AttentionParams, constraint: Constraint) -> Result<()> {
    let fail = |what: &str| Err(Error::Config(format!("drawn parameters violate {what}")));
    for h in params.effective_heads() {
        let a = h.a();
        let scale = a.norm().max(1e-300);
        let sym = linalg::symmetrize(&(&a + a.transpose()));
        match constraint {
            Constraint::None => {}
            Constraint::SymmetricNegative { rank } => {
                let eig = linalg::sym_eig(&linalg::symmetrize(&a))?;
                let expected = if params.variant == Variant::MultiHead {
                    h.q.nrows()
                } else {
                    rank.unwrap_or(h.dim() / 2).max(1)
                };
                if linalg::asymmetry(&a) > 1e-12 * scale
                    || eig.max() > 1e-10 * scale
                    || linalg::rank_eps(&(-&a), 1e-10) != expected
                {
                    return fail("symmetric-negative");
                }
            }
            Constraint::NegativeDefinite => {
                if !(linalg::sym_eig(&sym)?.max() < 0.0) {
                    return fail("negative-definite");
                }
            }
            Constraint::PositiveDefinite => {
                if !(linalg::sym_eig(&sym)?.min() > 0.0) {
                    return fail("positive-definite");
                }
            }
            Constraint::GradientFlow => {
                if linalg::asymmetry(&a) > 1e-12 * scale || (&h.v + &a).norm() > 1e-12 * scale {
                    return fail("gradient-flow");
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::rng::stream;

    fn rank_config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{"experiment": "rank-histogram", "variant": "softmax", "dimension": 5,
                "params": {"kind": "random", "constraint": {"symmetric-negative": {}}, "value": "random"}}"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = rank_config();
        assert_eq!(cfg.runs, 200);
        assert_eq!(cfg.solver().clock, Clock::Logarithmic);
        assert_eq!(cfg.rank_tol, 1e-6);
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn symmetric_negative_rank_floor_half() {
        let cfg = rank_config();
        let p = cfg.draw_params(&mut stream(3, 0)).unwrap();
        assert_eq!(p.q().nrows(), 2);
        assert_eq!(linalg::rank_eps(&(-p.a()), 1e-10), 2);
        assert_eq!(p.k(), &(-p.q()));
    }

    #[test]
    fn definite_constraints_hold() {
        for (c, neg) in [("negative-definite", true), ("positive-definite", false)] {
            let text = format!(
                r#"{{"experiment": "cone2d", "dimension": 2,
                    "params": {{"kind": "random", "constraint": "{c}", "value": "random"}}}}"#
            );
            let cfg = ExperimentConfig::from_json(&text).unwrap();
            for i in 0..20 {
                let a = cfg.draw_params(&mut stream(1, i)).unwrap().a();
                let eig = linalg::sym_eig(&(&a + a.transpose())).unwrap();
                assert!(if neg { eig.max() < 0.0 } else { eig.min() > 0.0 });
            }
        }
    }

    #[test]
    fn bad_configs_rejected() {
        let cases = [
            r#"{"experiment": "cone2d", "dimension": 3, "params": {"kind": "random"}}"#,
            r#"{"experiment": "rank-histogram", "variant": "sinkhorn", "dimension": 3, "params": {"kind": "random"}}"#,
            r#"{"experiment": "single-run", "variant": "multi-head", "dimension": 3, "heads": 2, "params": {"kind": "random"}}"#,
            r#"{"experiment": "single-run", "dimension": 2, "params": {"kind": "random", "constraint": "gradient-flow"}}"#,
            r#"{"experiment": "mean-field", "dimension": 2, "ns": [512, 256], "params": {"kind": "random"}}"#,
            r#"{"experiment": "single-run", "dimension": 2}"#,
        ];
        for c in cases {
            assert!(matches!(ExperimentConfig::from_json(c), Err(Error::Config(_))), "{c}");
        }
    }

    #[test]
    fn fixed_params_parse() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment": "single-run", "dimension": 1,
                "params": {"kind": "fixed", "heads": [{"q": [[1.0]], "k": [[-1.0]], "v": [[2.0]]}]}}"#,
        )
        .unwrap();
        let p = cfg.draw_params(&mut stream(0, 0)).unwrap();
        assert_eq!(p.a()[(0, 0)], -1.0);
        assert_eq!(p.v()[(0, 0)], 2.0);
    }
}
