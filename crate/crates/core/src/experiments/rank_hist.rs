//! Histograms of the rank of limiting covariances.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dynamics::{integrate_moments_observed, Control, TrajectoryStatus};
use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, ExperimentKind};
use crate::experiments::output::{num, write_csv};
use crate::experiments::rng::stream;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Converged { rank: usize },
    NotConverged,
    BlowUp,
    Diverged,
    Failed,
}

impl RunOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            RunOutcome::Converged { .. } => "converged",
            RunOutcome::NotConverged => "not-converged",
            RunOutcome::BlowUp => "blow-up",
            RunOutcome::Diverged => "diverged",
            RunOutcome::Failed => "numerical-failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRun {
    pub index: usize,
    pub outcome: RunOutcome,
    pub status: TrajectoryStatus,
    pub t_final: f64,
    pub sigma_norm: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankHistogram {
    pub d: usize,
    /// `counts[r]` converged runs with limiting rank `r`.
    pub counts: Vec<usize>,
    pub not_converged: usize,
    pub blowup: usize,
    pub diverged: usize,
    pub failed: usize,
    pub runs: Vec<RankRun>,
}

impl RankHistogram {
    pub fn converged(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `ceil(d / 2)`.
    pub fn bound(&self) -> usize {
        self.d.div_ceil(2)
    }

    /// Fraction of converged runs whose rank is at most `ceil(d/2)`;
    /// `None` when nothing converged.
    pub fn fraction_within_bound(&self) -> Option<f64> {
        let c = self.converged();
        (c > 0).then(|| self.counts[..=self.bound()].iter().sum::<usize>() as f64 / c as f64)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut rows: Vec<Vec<String>> = self
            .counts
            .iter()
            .enumerate()
            .map(|(r, c)| vec![format!("rank-{r}"), c.to_string()])
            .collect();
        for (label, c) in [
            ("not-converged", self.not_converged),
            ("blow-up", self.blowup),
            ("diverged", self.diverged),
            ("numerical-failure", self.failed),
        ] {
            rows.push(vec![label.into(), c.to_string()]);
        }
        let hist = write_csv(dir, "histogram.csv", &["outcome", "count"], &rows)?;
        let runs: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|r| {
                vec![
                    r.index.to_string(),
                    r.outcome.label().into(),
                    match r.outcome {
                        RunOutcome::Converged { rank } => rank.to_string(),
                        _ => String::new(),
                    },
                    r.status.label().into(),
                    num(r.t_final),
                    num(r.sigma_norm),
                    r.steps.to_string(),
                ]
            })
            .collect();
        let runs = write_csv(
            dir,
            "runs.csv",
            &["run", "outcome", "rank", "status", "t_final", "sigma_norm", "steps"],
            &runs,
        )?;
        Ok(vec![hist, runs])
    }
}

/// One run: parameters and initial covariance drawn from stream `index`.
pub fn rank_run(cfg: &ExperimentConfig, index: usize) -> Result<RankRun> {
    let mut rng = stream(cfg.seed, index as u64);
    let params = cfg.draw_params(&mut rng)?;
    let g0 = cfg.draw_initial(&mut rng)?;
    let conv = cfg.convergence;
    let mut streak = 0;
    let mut steps = 0;
    let mut converged = false;
    let tr = integrate_moments_observed(&params.into(), &g0, &cfg.solver(), |view, sigma, ds| {
        steps = view.step;
        if ds.norm() <= conv.tol * (conv.offset + sigma.norm()) {
            streak += 1;
        } else {
            streak = 0;
        }
        if streak >= conv.window {
            converged = true;
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    let sigma = &tr.last().sigma;
    let outcome = if converged {
        RunOutcome::Converged {
            rank: linalg::rank_eps(sigma, cfg.rank_tol),
        }
    } else {
        match tr.status {
            TrajectoryStatus::BlowUp { .. } => RunOutcome::BlowUp,
            TrajectoryStatus::Diverged { .. } => RunOutcome::Diverged,
            TrajectoryStatus::NumericalFailure { .. } => RunOutcome::Failed,
            TrajectoryStatus::Completed | TrajectoryStatus::StepLimit { .. } => {
                RunOutcome::NotConverged
            }
        }
    };
    Ok(RankRun {
        index,
        outcome,
        status: tr.status.clone(),
        t_final: tr.final_time(),
        sigma_norm: sigma.norm(),
        steps,
    })
}

/// Runs `cfg.runs` independent seeds in parallel; results are collected in
/// run order, so the histogram does not depend on the thread count.
pub fn run_rank_histogram(cfg: &ExperimentConfig) -> Result<RankHistogram> {
    if cfg.experiment != ExperimentKind::RankHistogram {
        return Err(Error::Config("not a rank-histogram config".into()));
    }
    cfg.validate()?;
    let runs: Vec<RankRun> = (0..cfg.runs)
        .into_par_iter()
        .map(|i| rank_run(cfg, i))
        .collect::<Result<_>>()?;
    let mut hist = RankHistogram {
        d: cfg.dimension,
        counts: vec![0; cfg.dimension + 1],
        not_converged: 0,
        blowup: 0,
        diverged: 0,
        failed: 0,
        runs,
    };
    for r in &hist.runs {
        match r.outcome {
            RunOutcome::Converged { rank } => hist.counts[rank] += 1,
            RunOutcome::NotConverged => hist.not_converged += 1,
            RunOutcome::BlowUp => hist.blowup += 1,
            RunOutcome::Diverged => hist.diverged += 1,
            RunOutcome::Failed => hist.failed += 1,
        }
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_value_respects_bound() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment": "rank-histogram", "dimension": 3, "runs": 20, "seed": 5,
                "params": {"kind": "random", "constraint": {"symmetric-negative": {}}}}"#,
        )
        .unwrap();
        let h = run_rank_histogram(&cfg).unwrap();
        assert_eq!(h.runs.len(), 20);
        assert!(h.converged() >= 18);
        assert_eq!(h.fraction_within_bound(), Some(1.0));
    }
}
