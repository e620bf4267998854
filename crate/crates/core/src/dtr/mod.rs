//! Visit records, strata, and the backward-recursive regime estimator.

mod engine;
mod record;
mod strata;

pub use engine::{
    apply_policy, backward_sweep, fit_dtr, BaselineCriterion, DtrEstimate, DtrParams, FrozenStrata, IterationEntry, Sweep,
    ESTIMATE_VERSION,
};
pub use record::{group_trajectories, Trajectory, VisitRecord};
pub use strata::{assign_strata, choose_cutpoint, StrataSpec, pool_stratum, PooledRow, StrataLabels, StrataPlan, CUTPOINT_GRID};
