//! Particle systems against the Gaussian moment flow as `n` grows.

use std::path::{Path, PathBuf};

use crate::dynamics::{integrate_moments, integrate_particles, TrajectoryStatus};
use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, ExperimentKind};
use crate::experiments::output::{num, write_csv};
use crate::experiments::rng::{sample_measure, stream};
use crate::measure::EmpiricalMeasure;
use crate::params::ParameterSchedule;
use crate::transport::{wasserstein_discrete, EXACT_CAP};

/// Offset of the sampling streams; stream 0 holds the parameters.
const SAMPLE_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldRow {
    pub n: usize,
    /// `||Cov(mu_n(t)) - Sigma(t)||_F`.
    pub cov_error: f64,
    /// `|mean(mu_n(t)) - alpha(t)|`.
    pub mean_error: f64,
    /// `W_2` to the reference particle run on the first `min(n, n_ref)`
    /// tokens of each; absent above the exact-matching cap.
    pub w2: Option<f64>,
    pub status: TrajectoryStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldResult {
    pub rows: Vec<MeanFieldRow>,
    /// `||Sigma(t)||_F` of the moment flow.
    pub sigma_norm: f64,
    pub t: f64,
}

impl MeanFieldResult {
    /// Number of consecutive pairs of `ns` across which the covariance
    /// error decreased.
    pub fn decreasing_steps(&self) -> usize {
        self.rows
            .windows(2)
            .filter(|w| w[1].cov_error < w[0].cov_error)
            .count()
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    r.w2.map(num).unwrap_or_default(),
                    num(r.cov_error),
                    num(r.mean_error),
                    num(r.cov_error / self.sigma_norm),
                    r.status.label().into(),
                ]
            })
            .collect();
        let path = write_csv(
            dir,
            "meanfield.csv",
            &["n", "w2_error", "cov_error", "mean_error", "cov_rel_error", "status"],
            &rows,
        )?;
        Ok(vec![path])
    }
}

fn sample(cfg: &ExperimentConfig, g: &crate::measure::GaussianMeasure, n: usize) -> Result<EmpiricalMeasure> {
    sample_measure(&mut stream(cfg.seed, SAMPLE_STREAM + n as u64), g, n)
}

pub fn run_meanfield(cfg: &ExperimentConfig) -> Result<MeanFieldResult> {
    run_meanfield_with(cfg, true)
}

/// As [`run_meanfield`]; `with_w2 = false` skips the reference run and the
/// transport distances.
pub fn run_meanfield_with(cfg: &ExperimentConfig, with_w2: bool) -> Result<MeanFieldResult> {
    if cfg.experiment != ExperimentKind::MeanField {
        return Err(Error::Config("not a mean-field config".into()));
    }
    cfg.validate()?;
    let mut rng = stream(cfg.seed, 0);
    let params = cfg.draw_params(&mut rng)?;
    let g0 = cfg.draw_initial(&mut rng)?;
    let schedule = ParameterSchedule::from(params);
    let solver = cfg.solver();
    let moments = integrate_moments(&schedule, &g0, &solver)?;
    if moments.status != TrajectoryStatus::Completed {
        return Err(Error::StepFailure {
            t: moments.final_time(),
            reason: format!("moment flow ended with {}", moments.status.label()),
        });
    }
    let target = moments.last().clone();

    let reference = if with_w2 {
        let mu = sample(cfg, &g0, cfg.reference_n)?;
        Some(integrate_particles(&schedule, &mu, &solver)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for &n in &cfg.ns {
        let mu = sample(cfg, &g0, n)?;
        let tr = integrate_particles(&schedule, &mu, &solver)?;
        let last = tr.last();
        let w2 = match &reference {
            Some(r) if n.min(cfg.reference_n) <= EXACT_CAP => {
                let m = n.min(cfg.reference_n);
                let a = EmpiricalMeasure::new(last.tokens()[..m].to_vec())?;
                let b = EmpiricalMeasure::new(r.last().tokens()[..m].to_vec())?;
                Some(wasserstein_discrete(2, &a, &b)?)
            }
            _ => None,
        };
        rows.push(MeanFieldRow {
            n,
            cov_error: (last.covariance() - &target.sigma).norm(),
            mean_error: (last.mean() - &target.alpha).norm(),
            w2,
            status: tr.status,
        });
    }
    Ok(MeanFieldResult {
        rows,
        sigma_norm: target.sigma.norm(),
        t: moments.final_time(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"experiment": "mean-field", "dimension": 2, "seed": 3, {extra}
                "params": {{"kind": "random", "scale": 0.5}}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn reference_size_matches_itself() {
        let cfg = config(r#""ns": [64], "reference_n": 64,"#);
        let r = run_meanfield(&cfg).unwrap();
        assert_eq!(r.rows[0].w2, Some(0.0));
    }

    #[test]
    fn zero_value_leaves_sampling_error() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment": "mean-field", "dimension": 2, "seed": 3, "ns": [32, 64], "reference_n": 64,
                "params": {"kind": "fixed", "heads": [{"q": [[1, 0], [0, 1]], "k": [[1, 0], [0, 1]], "v": [[0, 0], [0, 0]]}]}}"#,
        )
        .unwrap();
        let r = run_meanfield(&cfg).unwrap();
        let g0 = cfg.draw_initial(&mut stream(3, 0)).unwrap();
        for row in &r.rows {
            let mu = sample(&cfg, &g0, row.n).unwrap();
            let expected = (mu.covariance() - &g0.sigma).norm();
            assert!((row.cov_error - expected).abs() < 1e-12 * g0.sigma.norm());
        }
    }
}
