//! Token flows: particle systems, moment ODEs and their closed forms.

pub mod closed_form;
pub mod moments;
pub mod particles;
pub mod solver;

pub use closed_form::{
    blowup_time_dim1, closed_form_commuting, closed_form_dim1, predict_stationary_rank_bound,
    rank1_flow, support_radius_bound, ClosedForm, Dim1Variant,
};
pub use moments::{integrate_moments, integrate_moments_observed, MomentSystem, MomentTrajectory};
pub use particles::{integrate_particles, ParticleTrajectory};
pub use solver::{
    integrate_flat, Clock, Control, FlowSystem, Method, SolverConfig, StepView, Trajectory,
    TrajectoryStatus,
};
