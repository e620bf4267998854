//! Product-limit estimation over curve-valued outcomes.
//!
//! Each observation contributes fractional at-risk mass `w·S_i(s⁻)` and, when
//! `δ_i = 1`, fractional deaths `w·(S_i(s⁻) − S_i(s))` at every decrement
//! point `s` of its curve. With indicator outcomes this is the classical
//! Kaplan–Meier estimator.

use alloc::vec::Vec;

use crate::curve::{OutcomeCurve, StepSurvivalCurve};
use crate::{Error, Result};

/// At-risk denominators below this freeze the curve.
pub const RISK_FLOOR: f64 = 1e-12;

/// Fitted curve plus the time at which it froze, if the at-risk mass was
/// exhausted while deaths were still pending.
#[derive(Debug, Clone, PartialEq)]
pub struct KmFit {
    pub curve: StepSurvivalCurve,
    pub frozen_at: Option<f64>,
}

/// Modified Kaplan–Meier estimator. See [`modified_km_detailed`].
pub fn modified_km(observations: &[(OutcomeCurve, f64)]) -> Result<StepSurvivalCurve> {
    modified_km_detailed(observations.iter().map(|(o, w)| (o, *w))).map(|fit| fit.curve)
}

/// Modified Kaplan–Meier estimator with freeze diagnostics.
pub fn modified_km_detailed<'a, I>(observations: I) -> Result<KmFit>
where
    I: IntoIterator<Item = (&'a OutcomeCurve, f64)>,
{
    // (time, at-risk decrement, death decrement)
    let mut events: Vec<(f64, f64, f64)> = Vec::new();
    let mut total = 0.0;
    for (outcome, w) in observations {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidWeight);
        }
        if w == 0.0 {
            continue;
        }
        total += w;
        let delta = outcome.delta();
        for (t, drop) in outcome.curve.decrements() {
            let mass = w * drop;
            events.push((t, mass, if delta { mass } else { 0.0 }));
        }
    }
    if total <= 0.0 {
        return Err(Error::EmptySample);
    }
    events.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut at_risk = total;
    let mut surv = 1.0;
    let mut frozen_at = None;
    let mut i = 0;
    while i < events.len() {
        let s = events[i].0;
        let mut leaving = 0.0;
        let mut deaths = 0.0;
        while i < events.len() && events[i].0 == s {
            leaving += events[i].1;
            deaths += events[i].2;
            i += 1;
        }
        if deaths > 0.0 {
            if at_risk < RISK_FLOOR {
                frozen_at = Some(s);
                break;
            }
            let factor = (1.0 - deaths / at_risk).max(0.0);
            let next = surv * factor;
            if next < surv {
                surv = next;
                times.push(s);
                values.push(surv);
            }
        }
        at_risk -= leaving;
    }
    Ok(KmFit {
        curve: StepSurvivalCurve::from_sorted_unchecked(times, values),
        frozen_at,
    })
}

/// Estimating-function contribution `ψ_{S,t}` of one observation.
///
/// `δ = 1`: `S_i(t) − S(t)` (for indicators `S_i(t) = I(X > t)`).
/// `δ = 0`, censored at `X`: `min(S(t)/S(X), 1) − S(t)`, with `0/0 := 0`.
pub fn psi(curve: &StepSurvivalCurve, outcome: &OutcomeCurve, t: f64) -> f64 {
    let fitted = curve.eval(t);
    if outcome.delta() {
        return outcome.curve.eval(t) - fitted;
    }
    let x = match outcome.kind {
        crate::curve::OutcomeKind::Censored { time } => time,
        _ => unreachable!("only indicator outcomes can be censored"),
    };
    if t < x {
        return 1.0 - fitted;
    }
    let at_x = curve.eval(x);
    let ratio = if at_x > 0.0 { (fitted / at_x).min(1.0) } else { 0.0 };
    ratio - fitted
}

/// Weighted mean of `ψ_{S,t}` over the observations; zero at every `t` for
/// the curve fitted by [`modified_km`] on the same sample.
pub fn psi_residual(
    curve: &StepSurvivalCurve,
    observations: &[(OutcomeCurve, f64)],
    t: f64,
    tau: f64,
) -> Result<f64> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidHorizon(tau));
    }
    if !(0.0..=tau).contains(&t) {
        return Err(Error::TimeOutOfRange { t, tau });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (o, w) in observations {
        if *w > 0.0 {
            num += w * psi(curve, o, t);
            den += w;
        }
    }
    if den <= 0.0 {
        return Err(Error::EmptySample);
    }
    Ok(num / den)
}
