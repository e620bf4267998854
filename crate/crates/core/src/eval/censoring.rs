//! Censoring-clock survival model: the survival forest with the roles of
//! failure and censoring swapped.

use alloc::vec::Vec;

use crate::curve::{OutcomeCurve, StepSurvivalCurve};
use crate::dtr::{Trajectory, VisitRecord};
use crate::forest::{fit_forest, FeatureRegistry, ForestModel, ForestParams, TrainingRow};
use crate::{Error, Result};

/// Whether the record's follow-up ended at the horizon rather than by a
/// censoring event.
pub fn is_administrative(v: &VisitRecord, tau: f64) -> bool {
    !v.delta && v.b + v.x >= tau * (1.0 - 1e-9)
}

/// `Ĝ(t | H, A)`; `None` is the degenerate model `Ĝ ≡ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoringModel {
    pub forest: Option<ForestModel>,
}

impl CensoringModel {
    pub fn degenerate() -> Self {
        Self { forest: None }
    }

    pub fn is_degenerate(&self) -> bool {
        self.forest.is_none()
    }

    /// `Ĝ(x⁻ | H, A)`.
    pub fn survival_left(&self, history: &[f64], action: usize, x: f64) -> Result<f64> {
        match &self.forest {
            Some(f) => f.survival_at(history, action, x, true),
            None => Ok(1.0),
        }
    }

    pub fn curve(&self, history: &[f64], action: usize) -> Result<StepSurvivalCurve> {
        match &self.forest {
            Some(f) => f.predict_curve(history, action),
            None => Ok(StepSurvivalCurve::one()),
        }
    }
}

/// Fits the censoring model on every visit: a censoring event is an event,
/// while failures, advancements and horizon truncation censor the clock.
/// Too few censoring events yield `Ĝ ≡ 1` with a warning.
pub fn fit_censoring(trajectories: &[Trajectory], registry: &FeatureRegistry, params: &ForestParams, tau: f64) -> Result<CensoringModel> {
    let mut rows = Vec::new();
    let mut events = 0usize;
    for t in trajectories {
        for v in &t.visits {
            let censored_here = !v.delta && !is_administrative(v, tau);
            events += censored_here as usize;
            let outcome = if censored_here {
                OutcomeCurve::event(v.x)?
            } else {
                OutcomeCurve::censored(v.x)?
            };
            rows.push(TrainingRow {
                features: registry.row(&v.history, v.action)?,
                outcome,
                weight: 1.0,
            });
        }
    }
    if (events as f64) < params.min_events.max(1.0) {
        log::warn!("only {events} censoring events; using the degenerate censoring model G = 1");
        return Ok(CensoringModel::degenerate());
    }
    match fit_forest(&rows, registry, params) {
        Ok(forest) => Ok(CensoringModel { forest: Some(forest) }),
        Err(Error::InsufficientEvents { .. }) => {
            log::warn!("censoring forest could not be fitted; using the degenerate censoring model G = 1");
            Ok(CensoringModel::degenerate())
        }
        Err(e) => Err(e),
    }
}
