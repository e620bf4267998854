//! Right-continuous step survival curves and the restricted-mean criterion.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A right-continuous, nonincreasing step function on `[0, ∞)` that equals 1
/// before its first jump.
///
/// `values[i]` is the survival probability on `[times[i], times[i + 1])`.
/// Construction drops flat steps, so consecutive values are strictly
/// decreasing and two curves describing the same function compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve")]
pub struct StepSurvivalCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawCurve> for StepSurvivalCurve {
    type Error = Error;

    fn try_from(raw: RawCurve) -> Result<Self> {
        StepSurvivalCurve::new(raw.times, raw.values)
    }
}

impl Default for StepSurvivalCurve {
    fn default() -> Self {
        Self::one()
    }
}

impl StepSurvivalCurve {
    /// The curve that never drops.
    pub fn one() -> Self {
        Self {
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Validates and canonicalizes a curve from its jump times and the values
    /// taken at (and after) each jump.
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::MalformedCurve("times and values differ in length"));
        }
        let mut prev_t = 0.0;
        let mut prev_v = 1.0;
        for (i, (&t, &v)) in times.iter().zip(&values).enumerate() {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::MalformedCurve("jump times must be finite and positive"));
            }
            if i > 0 && t <= prev_t {
                return Err(Error::MalformedCurve("jump times must be strictly increasing"));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::MalformedCurve("values must lie in [0, 1]"));
            }
            if v > prev_v {
                return Err(Error::MalformedCurve("values must be nonincreasing"));
            }
            prev_t = t;
            prev_v = v;
        }
        Ok(Self::from_sorted_unchecked(times, values))
    }

    /// Builds from already-ordered jumps, dropping flat steps. Callers
    /// guarantee increasing times and nonincreasing values in `[0, 1]`.
    pub(crate) fn from_sorted_unchecked(times: Vec<f64>, values: Vec<f64>) -> Self {
        let mut out_t = Vec::with_capacity(times.len());
        let mut out_v = Vec::with_capacity(values.len());
        let mut last = 1.0;
        for (t, v) in times.into_iter().zip(values) {
            if v < last {
                out_t.push(t);
                out_v.push(v);
                last = v;
            }
        }
        Self {
            times: out_t,
            values: out_v,
        }
    }

    /// `1` on `[0, x)` and `0` from `x` on.
    pub fn indicator(x: f64) -> Result<Self> {
        if !x.is_finite() || x <= 0.0 {
            return Err(Error::NonPositiveVisitLength(x));
        }
        Ok(Self {
            times: alloc::vec![x],
            values: alloc::vec![0.0],
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_jumps(&self) -> usize {
        self.times.len()
    }

    /// Value after the last jump.
    pub fn last_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(1.0)
    }

    /// `S(t)`, right-continuous.
    pub fn eval(&self, t: f64) -> f64 {
        // number of jumps at or before t
        let n = self.times.partition_point(|&s| s <= t);
        if n == 0 {
            1.0
        } else {
            self.values[n - 1]
        }
    }

    /// `S(t⁻)`, the value just before `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let n = self.times.partition_point(|&s| s < t);
        if n == 0 {
            1.0
        } else {
            self.values[n - 1]
        }
    }

    /// Iterates `(time, S(t⁻) − S(t))` for every jump.
    pub fn decrements(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mut prev = 1.0;
        self.times.iter().zip(&self.values).map(move |(&t, &v)| {
            let d = prev - v;
            prev = v;
            (t, d)
        })
    }

    /// Restricted mean `∫₀^τ S(t) dt`, exact over the step segments.
    pub fn restricted_mean(&self, tau: f64) -> Result<f64> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidHorizon(tau));
        }
        let mut area = 0.0;
        let mut start = 0.0;
        let mut level = 1.0;
        for (&t, &v) in self.times.iter().zip(&self.values) {
            if t >= tau {
                break;
            }
            area += level * (t - start);
            start = t;
            level = v;
        }
        area += level * (tau - start);
        Ok(area)
    }

    /// Drops jumps after `horizon`; the curve holds its value from there on.
    pub fn truncated(&self, horizon: f64) -> Self {
        let n = self.times.partition_point(|&s| s <= horizon);
        Self {
            times: self.times[..n].to_vec(),
            values: self.values[..n].to_vec(),
        }
    }

    /// Projects onto an increasing grid of positive times: the result jumps
    /// only at grid points and agrees with `self` at every grid point.
    /// Mass beyond the last grid point is held at its value there.
    pub fn on_grid(&self, grid: &[f64]) -> Self {
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut j = 0;
        let mut level = 1.0;
        for &g in grid {
            while j < self.times.len() && self.times[j] <= g {
                level = self.values[j];
                j += 1;
            }
            times.push(g);
            values.push(level);
        }
        Self::from_sorted_unchecked(times, values)
    }

    /// Pointwise arithmetic mean of several curves on their merged jump grid.
    pub fn mean_of<'a, I>(curves: I) -> Self
    where
        I: IntoIterator<Item = &'a StepSurvivalCurve>,
    {
        let curves: Vec<&StepSurvivalCurve> = curves.into_iter().collect();
        if curves.is_empty() {
            return Self::one();
        }
        let mut grid: Vec<f64> = curves.iter().flat_map(|c| c.times.iter().copied()).collect();
        grid.sort_unstable_by(f64::total_cmp);
        grid.dedup();
        let n = curves.len() as f64;
        let mut sums = alloc::vec![0.0; grid.len()];
        for c in &curves {
            let mut j = 0;
            let mut level = 1.0;
            for (slot, &g) in sums.iter_mut().zip(&grid) {
                while j < c.times.len() && c.times[j] <= g {
                    level = c.values[j];
                    j += 1;
                }
                *slot += level;
            }
        }
        let values: Vec<f64> = sums.into_iter().map(|s| (s / n).clamp(0.0, 1.0)).collect();
        // averaging may produce ulp-level upticks; enforce monotonicity
        let mut values = values;
        for i in 1..values.len() {
            if values[i] > values[i - 1] {
                values[i] = values[i - 1];
            }
        }
        Self::from_sorted_unchecked(grid, values)
    }

    /// Re-checks the type invariants; used by tests and after deserialization.
    pub fn check_invariants(&self) -> Result<()> {
        Self::new(self.times.clone(), self.values.clone()).map(|_| ())
    }
}

/// Restricted mean survival time `∫₀^τ S(t) dt`.
pub fn restricted_mean(curve: &StepSurvivalCurve, tau: f64) -> Result<f64> {
    curve.restricted_mean(tau)
}

/// How an outcome curve was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Observed event (failure, or the end of a visit that advanced) at `time`.
    Event { time: f64 },
    /// Right-censored at `time`.
    Censored { time: f64 },
    /// Visit of length `visit_length` followed by a carried-back remaining-life curve.
    Augmented { visit_length: f64 },
}

/// Outcome of one training row: a survival curve plus its censoring flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCurve {
    pub kind: OutcomeKind,
    pub curve: StepSurvivalCurve,
}

impl OutcomeCurve {
    pub fn event(time: f64) -> Result<Self> {
        Ok(Self {
            kind: OutcomeKind::Event { time },
            curve: StepSurvivalCurve::indicator(time)?,
        })
    }

    pub fn censored(time: f64) -> Result<Self> {
        Ok(Self {
            kind: OutcomeKind::Censored { time },
            curve: StepSurvivalCurve::indicator(time)?,
        })
    }

    /// `δ`: false only for censored indicator outcomes.
    pub fn delta(&self) -> bool {
        !matches!(self.kind, OutcomeKind::Censored { .. })
    }

    pub fn is_augmented(&self) -> bool {
        matches!(self.kind, OutcomeKind::Augmented { .. })
    }

    /// Event mass `δ · (1 − S(∞))`: 1 for an observed event, the total drop
    /// for an augmented curve, 0 when censored.
    pub fn event_mass(&self) -> f64 {
        if self.delta() {
            1.0 - self.curve.last_value()
        } else {
            0.0
        }
    }
}

/// Time-shifts an optimized next-visit curve behind a visit of length
/// `visit_length`: 1 on `[0, X]`, then `next(t − X)`. Jumps beyond `horizon`
/// are dropped when a horizon is given.
pub fn shift_augment(
    next_curve: &StepSurvivalCurve,
    visit_length: f64,
    horizon: Option<f64>,
) -> Result<OutcomeCurve> {
    if !visit_length.is_finite() || visit_length <= 0.0 {
        return Err(Error::NonPositiveVisitLength(visit_length));
    }
    let limit = horizon.unwrap_or(f64::INFINITY);
    let mut times: Vec<f64> = Vec::with_capacity(next_curve.n_jumps());
    let mut values: Vec<f64> = Vec::with_capacity(next_curve.n_jumps());
    for (&t, &v) in next_curve.times().iter().zip(next_curve.values()) {
        let s = visit_length + t;
        if s > limit {
            break;
        }
        match times.last().map(|&p| s.partial_cmp(&p)) {
            // distinct jumps may coincide after rounding; keep the later value
            Some(Some(Ordering::Equal)) => *values.last_mut().unwrap() = v,
            _ => {
                times.push(s);
                values.push(v);
            }
        }
    }
    Ok(OutcomeCurve {
        kind: OutcomeKind::Augmented { visit_length },
        curve: StepSurvivalCurve::from_sorted_unchecked(times, values),
    })
}

/// Overall study length and the per-stratum maximal remaining lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub tau: f64,
    pub strata_taus: Vec<f64>,
}

impl Horizon {
    pub fn new(tau: f64, strata_taus: Vec<f64>) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidHorizon(tau));
        }
        if let Some(&bad) = strata_taus.iter().find(|&&t| !(t > 0.0 && t <= tau)) {
            return Err(Error::InvalidHorizon(bad));
        }
        Ok(Self { tau, strata_taus })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn curve(times: &[f64], values: &[f64]) -> StepSurvivalCurve {
        StepSurvivalCurve::new(times.to_vec(), values.to_vec()).unwrap()
    }

    #[test]
    fn rmst_of_constant_one_is_tau() {
        assert_eq!(StepSurvivalCurve::one().restricted_mean(1000.0).unwrap(), 1000.0);
    }

    #[test]
    fn rmst_piecewise() {
        let c = curve(&[2.0, 4.0], &[0.5, 0.0]);
        assert_eq!(restricted_mean(&c, 4.0).unwrap(), 3.0);
        assert_eq!(restricted_mean(&c, 3.0).unwrap(), 2.5);
        assert_eq!(restricted_mean(&c, 10.0).unwrap(), 3.0);
    }

    #[test]
    fn rmst_rejects_bad_tau() {
        assert!(restricted_mean(&StepSurvivalCurve::one(), 0.0).is_err());
        assert!(restricted_mean(&StepSurvivalCurve::one(), -1.0).is_err());
        assert!(restricted_mean(&StepSurvivalCurve::one(), f64::NAN).is_err());
    }

    #[test]
    fn construction_rejects_malformed() {
        assert!(StepSurvivalCurve::new(vec![1.0, 2.0], vec![0.5, 0.7]).is_err());
        assert!(StepSurvivalCurve::new(vec![2.0, 1.0], vec![0.5, 0.4]).is_err());
        assert!(StepSurvivalCurve::new(vec![0.0], vec![0.5]).is_err());
        assert!(StepSurvivalCurve::new(vec![1.0], vec![1.5]).is_err());
        assert!(StepSurvivalCurve::new(vec![1.0], vec![]).is_err());
    }

    #[test]
    fn flat_steps_are_dropped() {
        let c = curve(&[1.0, 2.0, 3.0], &[1.0, 0.5, 0.5]);
        assert_eq!(c.times(), &[2.0]);
        assert_eq!(c.eval(0.0), 1.0);
    }

    #[test]
    fn right_continuity() {
        let c = curve(&[1.0], &[0.4]);
        assert_eq!(c.eval(1.0), 0.4);
        assert_eq!(c.eval_left(1.0), 1.0);
        assert_eq!(c.eval(0.999), 1.0);
    }

    #[test]
    fn shift_of_one_is_one() {
        let out = shift_augment(&StepSurvivalCurve::one(), 5.0, None).unwrap();
        assert_eq!(out.curve, StepSurvivalCurve::one());
        assert!(out.delta());
        assert!(out.is_augmented());
    }

    #[test]
    fn shift_is_pure_translation() {
        let next = curve(&[1.0], &[0.4]);
        let out = shift_augment(&next, 5.0, None).unwrap();
        assert_eq!(out.curve, curve(&[6.0], &[0.4]));
        assert_eq!(out.curve.eval(5.999), 1.0);
    }

    #[test]
    fn shift_truncates_at_horizon() {
        let next = curve(&[1.0, 10.0], &[0.4, 0.1]);
        let out = shift_augment(&next, 5.0, Some(12.0)).unwrap();
        assert_eq!(out.curve, curve(&[6.0], &[0.4]));
    }

    #[test]
    fn shift_rejects_nonpositive_length() {
        assert!(shift_augment(&StepSurvivalCurve::one(), 0.0, None).is_err());
        assert!(shift_augment(&StepSurvivalCurve::one(), -2.0, None).is_err());
    }

    #[test]
    fn mean_of_two_indicators() {
        let a = StepSurvivalCurve::indicator(1.0).unwrap();
        let b = StepSurvivalCurve::indicator(3.0).unwrap();
        let m = StepSurvivalCurve::mean_of([&a, &b]);
        assert_eq!(m, curve(&[1.0, 3.0], &[0.5, 0.0]));
    }

    #[test]
    fn on_grid_agrees_at_grid_points() {
        let c = curve(&[0.5, 1.5, 2.2], &[0.9, 0.6, 0.2]);
        let grid = [1.0, 2.0, 3.0];
        let g = c.on_grid(&grid);
        for &t in &grid {
            assert_eq!(g.eval(t), c.eval(t));
        }
        assert_eq!(g.times(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn indicator_outcomes() {
        let e = OutcomeCurve::event(2.0).unwrap();
        assert!(e.delta());
        assert_eq!(e.event_mass(), 1.0);
        let c = OutcomeCurve::censored(2.0).unwrap();
        assert!(!c.delta());
        assert_eq!(c.event_mass(), 0.0);
        assert_eq!(c.curve.eval(1.99), 1.0);
        assert_eq!(c.curve.eval(2.0), 0.0);
    }

    #[test]
    fn horizon_validation() {
        assert!(Horizon::new(1000.0, vec![400.0, 1000.0]).is_ok());
        assert!(Horizon::new(1000.0, vec![1200.0]).is_err());
        assert!(Horizon::new(0.0, vec![]).is_err());
    }
}
