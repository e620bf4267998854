//! Per-visit observations and per-patient trajectories.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::curve::OutcomeCurve;
use crate::{Error, Result};

/// Relative tolerance on the `B_k = Σ_{j<k} X_j` bookkeeping.
const TELESCOPE_TOL: f64 = 1e-9;

/// One patient-visit: the summarized history, the action taken and how the
/// visit ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub patient: u64,
    /// 1-based visit index.
    pub k: usize,
    pub history: Vec<f64>,
    pub action: usize,
    /// Observed visit length `min(T, U, C)`.
    pub x: f64,
    /// 1 unless the visit was censored.
    pub delta: bool,
    /// 1 when failure preceded the next visit.
    pub gamma: bool,
    /// Cumulative time from baseline at the start of the visit.
    pub b: f64,
}

impl VisitRecord {
    pub fn is_failure(&self) -> bool {
        self.delta && self.gamma
    }

    /// Uncensored visit that ended by advancing to the next one.
    pub fn is_advancement(&self) -> bool {
        self.delta && !self.gamma
    }

    /// Indicator outcome used when pooling: censored rows stay censored,
    /// failures and advancements are events at `X`.
    pub fn indicator_outcome(&self) -> Result<OutcomeCurve> {
        if self.delta {
            OutcomeCurve::event(self.x)
        } else {
            OutcomeCurve::censored(self.x)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub patient: u64,
    pub visits: Vec<VisitRecord>,
}

impl Trajectory {
    /// Builds and validates a trajectory against the horizon `tau` and the
    /// visit cap `k_max`.
    pub fn new(patient: u64, visits: Vec<VisitRecord>, tau: f64, k_max: usize) -> Result<Self> {
        let t = Self { patient, visits };
        t.validate(tau, k_max)?;
        Ok(t)
    }

    pub fn n_visits(&self) -> usize {
        self.visits.len()
    }

    pub fn last(&self) -> &VisitRecord {
        self.visits.last().expect("validated trajectories are nonempty")
    }

    /// Overall observed time `B_K + X_K`.
    pub fn total_time(&self) -> f64 {
        let l = self.last();
        l.b + l.x
    }

    /// Overall censoring indicator (0 when the final visit was censored).
    pub fn delta(&self) -> bool {
        self.last().delta
    }

    pub fn failed(&self) -> bool {
        self.last().is_failure()
    }

    pub fn validate(&self, tau: f64, k_max: usize) -> Result<()> {
        let bad = |k: usize, reason: alloc::string::String| Error::InvalidRecord {
            patient: self.patient,
            k,
            reason,
        };
        if self.visits.is_empty() {
            return Err(bad(0, "trajectory has no visits".into()));
        }
        if self.visits.len() > k_max {
            return Err(bad(
                self.visits.len(),
                format!("{} visits exceed the cap of {k_max}", self.visits.len()),
            ));
        }
        let dim = self.visits[0].history.len();
        let last = self.visits.len() - 1;
        let mut cum = 0.0;
        for (i, v) in self.visits.iter().enumerate() {
            let k = i + 1;
            if v.patient != self.patient {
                return Err(bad(k, format!("record belongs to patient {}", v.patient)));
            }
            if v.k != k {
                return Err(bad(v.k, format!("visit index {} where {k} was expected", v.k)));
            }
            if v.history.len() != dim {
                return Err(bad(k, format!("history has {} entries, expected {dim}", v.history.len())));
            }
            if v.history.iter().any(|h| !h.is_finite()) {
                return Err(bad(k, "history contains a non-finite value".into()));
            }
            if !v.x.is_finite() || v.x <= 0.0 {
                return Err(bad(k, format!("visit length {} is not positive", v.x)));
            }
            if (v.b - cum).abs() > TELESCOPE_TOL * tau.max(1.0) {
                return Err(bad(k, format!("B = {} but previous visit lengths sum to {cum}", v.b)));
            }
            if v.b + v.x > tau * (1.0 + TELESCOPE_TOL) {
                return Err(bad(k, format!("B + X = {} exceeds the horizon {tau}", v.b + v.x)));
            }
            if i < last && !v.is_advancement() {
                return Err(bad(k, "non-final visit must have delta = 1 and gamma = 0".into()));
            }
            if i == last && v.is_advancement() {
                return Err(bad(k, "final visit must end in failure or censoring".into()));
            }
            cum += v.x;
        }
        Ok(())
    }
}

/// Groups records by patient (in order of first appearance), sorts each
/// group by visit index and validates it.
pub fn group_trajectories(records: Vec<VisitRecord>, tau: f64, k_max: usize) -> Result<Vec<Trajectory>> {
    let mut order: Vec<u64> = Vec::new();
    let mut groups: alloc::collections::BTreeMap<u64, Vec<VisitRecord>> = alloc::collections::BTreeMap::new();
    for r in records {
        let g = groups.entry(r.patient).or_default();
        if g.is_empty() {
            order.push(r.patient);
        }
        g.push(r);
    }
    order
        .into_iter()
        .map(|p| {
            let mut visits = groups.remove(&p).unwrap_or_default();
            visits.sort_by_key(|v| v.k);
            Trajectory::new(p, visits, tau, k_max)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn visit(k: usize, b: f64, x: f64, delta: bool, gamma: bool) -> VisitRecord {
        VisitRecord {
            patient: 7,
            k,
            history: vec![0.0],
            action: 0,
            x,
            delta,
            gamma,
            b,
        }
    }

    #[test]
    fn valid_trajectory() {
        let t = Trajectory::new(
            7,
            vec![visit(1, 0.0, 10.0, true, false), visit(2, 10.0, 5.0, true, true)],
            100.0,
            10,
        )
        .unwrap();
        assert_eq!(t.total_time(), 15.0);
        assert!(t.failed());
    }

    #[test]
    fn rejects_broken_telescoping() {
        let e = Trajectory::new(
            7,
            vec![visit(1, 0.0, 10.0, true, false), visit(2, 11.0, 5.0, false, false)],
            100.0,
            10,
        )
        .unwrap_err();
        assert!(matches!(e, Error::InvalidRecord { k: 2, .. }));
    }

    #[test]
    fn rejects_terminal_rules_and_cap() {
        assert!(Trajectory::new(7, vec![visit(1, 0.0, 10.0, true, false)], 100.0, 10).is_err());
        assert!(Trajectory::new(
            7,
            vec![visit(1, 0.0, 10.0, true, true), visit(2, 10.0, 5.0, true, true)],
            100.0,
            10
        )
        .is_err());
        assert!(Trajectory::new(
            7,
            vec![visit(1, 0.0, 10.0, true, false), visit(2, 10.0, 5.0, true, true)],
            100.0,
            1
        )
        .is_err());
        assert!(Trajectory::new(7, vec![visit(1, 0.0, 200.0, false, false)], 100.0, 10).is_err());
    }
}
