//! Covariance trajectories of 2-d Gaussians in cone coordinates.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{integrate_moments, TrajectoryStatus};
use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, ExperimentKind};
use crate::experiments::output::{num, write_csv};
use crate::experiments::rng::stream;
use crate::linalg;
use crate::measure::GaussianMeasure;
use crate::params::ParameterSchedule;

/// `(x, y, z) = (a - b, 2c, a + b)` for `Sigma = [[a, c], [c, b]]`.
pub fn to_cone(s: &DMatrix<f64>) -> [f64; 3] {
    [s[(0, 0)] - s[(1, 1)], s[(0, 1)] + s[(1, 0)], s[(0, 0)] + s[(1, 1)]]
}

pub fn from_cone(x: f64, y: f64, z: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[(z + x) / 2.0, y / 2.0, y / 2.0, (z - x) / 2.0])
}

/// Grid points `(x, y)` on the slice `z = trace`, inside the disc of
/// radius `radius * trace`.
pub fn equal_trace_grid(points: usize, radius: f64, trace: f64) -> Vec<(f64, f64)> {
    let r = radius * trace;
    let coord = |i: usize| {
        if points == 1 {
            0.0
        } else {
            -r + 2.0 * r * i as f64 / (points - 1) as f64
        }
    };
    let mut out = Vec::new();
    for i in 0..points {
        for j in 0..points {
            let (x, y) = (coord(i), coord(j));
            if x * x + y * y <= r * r * (1.0 + 1e-12) {
                out.push((x, y));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeTrajectory {
    pub index: usize,
    pub times: Vec<f64>,
    /// Cone coordinates of each recorded covariance.
    pub points: Vec<[f64; 3]>,
    pub status: TrajectoryStatus,
    pub final_rank: usize,
}

impl ConeTrajectory {
    pub fn initial(&self) -> [f64; 3] {
        self.points[0]
    }

    pub fn last(&self) -> [f64; 3] {
        *self.points.last().unwrap()
    }

    /// Frobenius norm of the final covariance.
    pub fn final_norm(&self) -> f64 {
        let [x, y, z] = self.last();
        from_cone(x, y, z).norm()
    }

    /// `Sigma / tr(Sigma)` in the `(x, y)` plane of the trace-1 slice.
    pub fn projection(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|[x, y, z]| [x / z, y / z]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cone2dResult {
    pub trajectories: Vec<ConeTrajectory>,
}

impl Cone2dResult {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        let mut summary = Vec::new();
        for tr in &self.trajectories {
            let status = tr.status.label();
            let rows: Vec<Vec<String>> = tr
                .times
                .iter()
                .zip(&tr.points)
                .map(|(t, p)| vec![num(*t), num(p[0]), num(p[1]), num(p[2]), status.into()])
                .collect();
            let name = format!("traj_{:04}.csv", tr.index);
            files.push(write_csv(dir, &name, &["t", "x", "y", "z", "status"], &rows)?);
            if matches!(
                tr.status,
                TrajectoryStatus::BlowUp { .. } | TrajectoryStatus::Diverged { .. }
            ) {
                let rows: Vec<Vec<String>> = tr
                    .times
                    .iter()
                    .zip(tr.projection())
                    .map(|(t, p)| vec![num(*t), num(p[0]), num(p[1]), status.into()])
                    .collect();
                let name = format!("proj_{:04}.csv", tr.index);
                files.push(write_csv(dir, &name, &["t", "x", "y", "status"], &rows)?);
            }
            let (p0, p1) = (tr.initial(), tr.last());
            summary.push(vec![
                tr.index.to_string(),
                num(p0[0]),
                num(p0[1]),
                num(p0[2]),
                status.into(),
                num(*tr.times.last().unwrap()),
                num(p1[0]),
                num(p1[1]),
                num(p1[2]),
                tr.final_rank.to_string(),
            ]);
        }
        files.push(write_csv(
            dir,
            "summary.csv",
            &["index", "x0", "y0", "z0", "status", "t_final", "x", "y", "z", "rank"],
            &summary,
        )?);
        Ok(files)
    }
}

/// Integrates the covariance ODE from every grid point. Parameters come
/// from stream 0 of the seed; the mean starts at 0.
pub fn run_cone2d(cfg: &ExperimentConfig) -> Result<Cone2dResult> {
    if cfg.experiment != ExperimentKind::Cone2d {
        return Err(Error::Config("not a cone2d config".into()));
    }
    cfg.validate()?;
    let params = cfg.draw_params(&mut stream(cfg.seed, 0))?;
    let schedule = ParameterSchedule::from(params);
    let solver = cfg.solver();
    let grid = equal_trace_grid(cfg.grid.points, cfg.grid.radius, cfg.grid.trace);
    let trajectories = grid
        .par_iter()
        .enumerate()
        .map(|(index, &(x, y))| {
            let g0 = GaussianMeasure::new(DVector::zeros(2), from_cone(x, y, cfg.grid.trace))?;
            let tr = integrate_moments(&schedule, &g0, &solver)?;
            Ok(ConeTrajectory {
                index,
                times: tr.times.clone(),
                points: tr.states.iter().map(|g| to_cone(&g.sigma)).collect(),
                final_rank: linalg::rank_eps(&tr.last().sigma, cfg.rank_tol),
                status: tr.status,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Cone2dResult { trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cone_coordinates_round_trip() {
        let s = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.5]);
        let [x, y, z] = to_cone(&s);
        assert_eq!((x, y, z), (1.0, 0.4, 2.0));
        assert_eq!(from_cone(x, y, z), s);
    }

    #[test]
    fn grid_stays_inside_cone() {
        let g = equal_trace_grid(9, 0.9, 2.0);
        assert!(g.len() > 40);
        for (x, y) in g {
            let eig = linalg::sym_eig(&from_cone(x, y, 2.0)).unwrap();
            assert!(eig.min() > 0.0);
            assert!((eig.values.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        }
    }
}
