//! Cumulative-time strata, cutpoint selection and per-stratum pooling.
//!
//! Strata use a reversed index: with cutpoints `c_1 < … < c_{W−1}` the
//! latest interval `[c_{W−1}, τ]` is stratum 1 and the earliest `[0, c_1)` is
//! stratum `W`. A visit belongs to the stratum containing its `B_k`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::record::Trajectory;
use crate::forest::TrainingRow;
use crate::{Error, Result};

/// Resolution of the cutpoint search grid (`τ·i/CUTPOINT_GRID`).
pub const CUTPOINT_GRID: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataPlan {
    pub tau: f64,
    /// Strictly increasing cutpoints in `(0, τ)`.
    pub cutpoints: Vec<f64>,
    /// `M_l` for `l = 1..=W` (stored at `l − 1`).
    pub max_visits: Vec<usize>,
}

impl StrataPlan {
    pub fn n_strata(&self) -> usize {
        self.cutpoints.len() + 1
    }

    /// Stratum `l` (1 = latest) containing cumulative time `b`.
    pub fn stratum_of(&self, b: f64) -> usize {
        let earlier = self.cutpoints.partition_point(|&c| c <= b);
        self.n_strata() - earlier
    }

    /// Lower bound of stratum `l`'s cumulative-time interval.
    pub fn lower(&self, l: usize) -> f64 {
        let p = self.n_strata() - l;
        if p == 0 {
            0.0
        } else {
            self.cutpoints[p - 1]
        }
    }

    /// Longest remaining time `τ_l = τ − lower(l)` of any visit in stratum `l`.
    pub fn horizon(&self, l: usize) -> f64 {
        self.tau - self.lower(l)
    }

    pub fn m(&self, l: usize) -> usize {
        self.max_visits[l - 1]
    }

    /// Total refit iterations `J = Σ_l M_l`.
    pub fn total_iterations(&self) -> usize {
        self.max_visits.iter().sum()
    }
}

/// Per-visit stratum labels, `labels[i][v]` for visit `v` of trajectory `i`.
pub type StrataLabels = Vec<Vec<usize>>;

/// Labels every visit by the stratum of its `B_k` and computes `M_l`.
pub fn assign_strata(trajectories: &[Trajectory], tau: f64, cutpoints: &[f64]) -> Result<(StrataPlan, StrataLabels)> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidHorizon(tau));
    }
    let mut prev = 0.0;
    for &c in cutpoints {
        if !(c > prev && c < tau) {
            return Err(Error::InvalidCutpoint { cut: c, tau });
        }
        prev = c;
    }
    let mut plan = StrataPlan {
        tau,
        cutpoints: cutpoints.to_vec(),
        max_visits: alloc::vec![0; cutpoints.len() + 1],
    };
    let mut labels = Vec::with_capacity(trajectories.len());
    let mut counts = alloc::vec![0usize; plan.n_strata()];
    for t in trajectories {
        counts.iter_mut().for_each(|c| *c = 0);
        let row: Vec<usize> = t.visits.iter().map(|v| plan.stratum_of(v.b)).collect();
        for &l in &row {
            counts[l - 1] += 1;
        }
        for (m, &c) in plan.max_visits.iter_mut().zip(&counts) {
            *m = (*m).max(c);
        }
        labels.push(row);
    }
    Ok((plan, labels))
}

/// Latest grid cutpoint whose later stratum still holds at least
/// `min_event_share` of all failures, or `None` when no grid point qualifies
/// and a single stratum should be used. Failures are counted at their
/// failure time, so a later stratum may still pool few failing visits; see
/// [`pool_stratum`].
pub fn choose_cutpoint(trajectories: &[Trajectory], tau: f64, min_event_share: f64) -> Option<f64> {
    let times: Vec<f64> = trajectories.iter().filter(|t| t.failed()).map(|t| t.total_time()).collect();
    if times.is_empty() {
        log::warn!("no failures observed; using a single stratum");
        return None;
    }
    let total = times.len() as f64;
    for i in (1..CUTPOINT_GRID).rev() {
        let c = tau * i as f64 / CUTPOINT_GRID as f64;
        let later = times.iter().filter(|&&t| t >= c).count() as f64;
        if later / total >= min_event_share {
            return Some(c);
        }
    }
    log::warn!("no cutpoint leaves {min_event_share} of failures in the later stratum; using a single stratum");
    None
}

/// How the strata cutpoints of a fit are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrataSpec {
    /// One stratum covering `[0, τ]`.
    Single,
    /// [`choose_cutpoint`] with the given minimum share of failures in the
    /// later stratum.
    Auto { min_event_share: f64 },
    /// Explicit increasing cutpoints in `(0, τ)`.
    Cutpoints(Vec<f64>),
}

impl Default for StrataSpec {
    fn default() -> Self {
        StrataSpec::Single
    }
}

impl StrataSpec {
    pub fn resolve(&self, trajectories: &[Trajectory], tau: f64) -> Result<Vec<f64>> {
        match self {
            StrataSpec::Single => Ok(Vec::new()),
            StrataSpec::Auto { min_event_share } => {
                if !(0.0..=1.0).contains(min_event_share) {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "min_event_share must lie in [0, 1], got {min_event_share}"
                    )));
                }
                Ok(choose_cutpoint(trajectories, tau, *min_event_share).into_iter().collect())
            }
            StrataSpec::Cutpoints(c) => Ok(c.clone()),
        }
    }
}

/// A pooled training row with a back-reference to its visit.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledRow {
    /// Index into the trajectory slice.
    pub patient: usize,
    /// 0-based visit position within the trajectory.
    pub visit: usize,
    pub row: TrainingRow,
}

/// One indicator-outcome row per visit record in stratum `l`.
pub fn pool_stratum(
    trajectories: &[Trajectory],
    labels: &StrataLabels,
    l: usize,
    min_events: f64,
) -> Result<Vec<PooledRow>> {
    let mut rows = Vec::new();
    let mut failures = 0usize;
    for (i, t) in trajectories.iter().enumerate() {
        for (v, rec) in t.visits.iter().enumerate() {
            if labels[i][v] != l {
                continue;
            }
            let mut features = Vec::with_capacity(rec.history.len() + 1);
            features.extend_from_slice(&rec.history);
            features.push(rec.action as f64);
            failures += rec.is_failure() as usize;
            rows.push(PooledRow {
                patient: i,
                visit: v,
                row: TrainingRow {
                    features,
                    outcome: rec.indicator_outcome()?,
                    weight: 1.0,
                },
            });
        }
    }
    let required = min_events.max(1.0);
    if (failures as f64) < required {
        return Err(Error::InsufficientEvents {
            available: failures as f64,
            required,
            stratum: Some(l),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtr::record::VisitRecord;
    use alloc::vec;

    /// Visits of lengths `xs`; the last one fails.
    fn traj(id: u64, xs: &[f64]) -> Trajectory {
        let mut b = 0.0;
        let n = xs.len();
        let visits = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let v = VisitRecord {
                    patient: id,
                    k: i + 1,
                    history: vec![b],
                    action: 0,
                    x,
                    delta: true,
                    gamma: i + 1 == n,
                    b,
                };
                b += x;
                v
            })
            .collect();
        Trajectory::new(id, visits, 1000.0, 10).unwrap()
    }

    #[test]
    fn single_stratum_counts_max_visits() {
        let ts = vec![traj(1, &[10.0, 10.0]), traj(2, &[5.0, 5.0, 5.0])];
        let (plan, labels) = assign_strata(&ts, 1000.0, &[]).unwrap();
        assert_eq!(plan.max_visits, vec![3]);
        assert!(labels.iter().flatten().all(|&l| l == 1));
    }

    #[test]
    fn reversed_index_convention() {
        let ts = vec![traj(1, &[300.0, 400.0, 100.0])];
        let (plan, labels) = assign_strata(&ts, 1000.0, &[500.0]).unwrap();
        assert_eq!(plan.stratum_of(300.0), 2);
        assert_eq!(plan.stratum_of(700.0), 1);
        assert_eq!(labels[0], vec![2, 2, 1]);
        assert_eq!(plan.max_visits, vec![1, 2]);
        assert_eq!(plan.horizon(1), 500.0);
        assert_eq!(plan.horizon(2), 1000.0);
    }

    #[test]
    fn rejects_bad_cutpoints() {
        let ts = vec![traj(1, &[10.0])];
        assert!(assign_strata(&ts, 1000.0, &[0.0]).is_err());
        assert!(assign_strata(&ts, 1000.0, &[1000.0]).is_err());
        assert!(assign_strata(&ts, 1000.0, &[600.0, 500.0]).is_err());
    }

    #[test]
    fn cutpoint_fallback_and_vacuous_share() {
        let early: Vec<Trajectory> = (0..10).map(|i| traj(i, &[20.0 + i as f64])).collect();
        assert_eq!(choose_cutpoint(&early, 1000.0, 0.3), None);
        assert_eq!(choose_cutpoint(&early, 1000.0, 0.0), Some(950.0));
    }

    #[test]
    fn failures_count_at_their_failure_time() {
        // fails at 700 during a visit that starts at 600
        let ts = vec![traj(1, &[600.0, 100.0])];
        assert_eq!(choose_cutpoint(&ts, 1000.0, 1.0), Some(700.0));
    }

    #[test]
    fn pooling_counts_rows() {
        let ts = vec![traj(1, &[10.0, 10.0]), traj(2, &[5.0, 5.0, 5.0])];
        let (_, labels) = assign_strata(&ts, 1000.0, &[]).unwrap();
        let rows = pool_stratum(&ts, &labels, 1, 2.0).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(pool_stratum(&ts, &labels, 1, 3.0).is_err());
    }
}
