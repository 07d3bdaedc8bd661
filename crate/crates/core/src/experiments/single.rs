//! A single trajectory, either of Gaussian moments or of particles.

use std::path::{Path, PathBuf};

use crate::dynamics::{
    integrate_moments, integrate_particles, MomentTrajectory, ParticleTrajectory, TrajectoryStatus,
};
use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, ExperimentKind, RunMode};
use crate::experiments::output::{num, write_csv};
use crate::experiments::rng::{sample_gaussian, stream};
use crate::measure::EmpiricalMeasure;
use crate::params::ParameterSchedule;

#[derive(Debug, Clone)]
pub enum SingleRun {
    Gaussian(MomentTrajectory),
    Particles(ParticleTrajectory),
}

impl SingleRun {
    pub fn status(&self) -> &TrajectoryStatus {
        match self {
            SingleRun::Gaussian(t) => &t.status,
            SingleRun::Particles(t) => &t.status,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        match self {
            SingleRun::Gaussian(tr) => {
                let d = tr.states[0].dim();
                let mut header = vec!["t".to_string()];
                header.extend((0..d).map(|i| format!("alpha_{i}")));
                for i in 0..d {
                    header.extend((0..d).map(|j| format!("sigma_{i}{j}")));
                }
                header.push("status".into());
                let status = tr.status.label();
                let rows: Vec<Vec<String>> = tr
                    .times
                    .iter()
                    .zip(&tr.states)
                    .map(|(t, g)| {
                        let mut r = vec![num(*t)];
                        r.extend(g.alpha.iter().map(|v| num(*v)));
                        for i in 0..d {
                            r.extend((0..d).map(|j| num(g.sigma[(i, j)])));
                        }
                        r.push(status.into());
                        r
                    })
                    .collect();
                let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
                Ok(vec![write_csv(dir, "moments.csv", &h, &rows)?])
            }
            SingleRun::Particles(tr) => {
                let d = tr.states[0].dim();
                let mut header = vec!["t".to_string(), "token".into(), "position".into()];
                header.extend((0..d).map(|i| format!("x_{i}")));
                header.push("status".into());
                let status = tr.status.label();
                let mut rows = Vec::new();
                for (t, mu) in tr.times.iter().zip(&tr.states) {
                    for (i, x) in mu.tokens().iter().enumerate() {
                        let mut r = vec![
                            num(*t),
                            i.to_string(),
                            mu.positions().map(|p| num(p[i])).unwrap_or_default(),
                        ];
                        r.extend(x.iter().map(|v| num(*v)));
                        r.push(status.into());
                        rows.push(r);
                    }
                }
                let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
                Ok(vec![write_csv(dir, "particles.csv", &h, &rows)?])
            }
        }
    }
}

/// Parameters and the initial Gaussian come from stream 0, particle
/// samples from stream 1. Masked particle runs place token `i` at
/// position `i / n`.
pub fn run_single(cfg: &ExperimentConfig) -> Result<SingleRun> {
    if cfg.experiment != ExperimentKind::SingleRun {
        return Err(Error::Config("not a single-run config".into()));
    }
    cfg.validate()?;
    let mut rng = stream(cfg.seed, 0);
    let params = cfg.draw_params(&mut rng)?;
    let g0 = cfg.draw_initial(&mut rng)?;
    let schedule = ParameterSchedule::from(params);
    let solver = cfg.solver();
    match cfg.mode {
        RunMode::Gaussian => Ok(SingleRun::Gaussian(integrate_moments(&schedule, &g0, &solver)?)),
        RunMode::Particles => {
            let n = cfg.particles;
            let tokens = sample_gaussian(&mut stream(cfg.seed, 1), &g0, n)?;
            let mu = if cfg.masked {
                EmpiricalMeasure::with_positions(tokens, (0..n).map(|i| i as f64 / n as f64).collect())?
            } else {
                EmpiricalMeasure::new(tokens)?
            };
            Ok(SingleRun::Particles(integrate_particles(&schedule, &mu, &solver)?))
        }
    }
}
