//! Policy value estimation: Monte-Carlo ground truth on the simulator,
//! inverse-probability weighted estimates on observed data, and the
//! cross-validation harness.
//!
//! The IPCW weight of patient `i` under policy `π` is
//!
//! ```text
//! W_i = Π_k 1(π(H_k) = A_k) · δ*_i / Π_k [ p̂(A_k | H_k) · Ĝ_k(X_k⁻ | H_k, A_k) ]
//! ```
//!
//! with both factors floored at [`PROB_FLOOR`], and the value is the
//! self-normalized mean `Σ W_i (T_i ∧ τ) / Σ W_i`. `δ*_i` is one for an
//! observed failure and for follow-up that reached `τ` (whose truncated time
//! is fully known), zero otherwise.

mod censoring;
mod cv;
mod logistic;

pub use censoring::{fit_censoring, is_administrative, CensoringModel};
pub use cv::{cross_validate, fold_split, trees_sweep, CvFold, CvParams, CvReport, SweepPoint, ZeroOrder};
pub use logistic::{fit_logistic, fit_propensity, LogisticFit, PropensityModel, PROB_FLOOR};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dtr::Trajectory;
use crate::sim::{simulate_under_policy, SimConfig, TreatmentPolicy};
use crate::{math, Error, Result};

/// Default Monte-Carlo sample size.
pub const MC_DEFAULT_N: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MC")]
    Mc,
    #[serde(rename = "IPCW")]
    Ipcw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub n: usize,
    pub nonzero: usize,
    /// Largest single weight over the weight total.
    pub max_weight_share: f64,
    /// Kish effective sample size `(ΣW)² / ΣW²`.
    pub effective_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    /// Estimated value in time units, within `[0, τ]`.
    pub value: f64,
    pub std_error: Option<f64>,
    pub tau: f64,
    pub per_fold: Vec<f64>,
    pub diagnostics: Option<WeightDiagnostics>,
    /// Free-form echo of the configuration that produced the report.
    pub config: Option<String>,
}

/// Monte-Carlo value of `policy`: mean of `T ∧ τ` over `n` uncensored
/// simulated patients, with its standard error.
pub fn mc_value(policy: &dyn TreatmentPolicy, config: &SimConfig, n: usize) -> Result<EvalReport> {
    let cfg = SimConfig {
        n_patients: n,
        ..config.clone()
    };
    let data = simulate_under_policy(&cfg, policy, true)?;
    let y: Vec<f64> = data.trajectories.iter().map(Trajectory::total_time).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(EvalReport {
        method: Method::Mc,
        value: mean,
        std_error: Some(math::sqrt(var / n as f64)),
        tau: cfg.tau,
        per_fold: Vec::new(),
        diagnostics: None,
        config: None,
    })
}

/// Treatment and censoring probabilities used by the weights.
pub trait Nuisance: Sync {
    /// `P(A = action | H)` at visit `k` (1-based).
    fn action_prob(&self, k: usize, history: &[f64], action: usize) -> Result<f64>;
    /// Probability that visit `k`'s censoring clock exceeds `x`.
    fn uncensored(&self, k: usize, history: &[f64], action: usize, x: f64) -> Result<f64>;
}

/// Nuisance models fitted on training data.
#[derive(Debug, Clone)]
pub struct FittedNuisance {
    pub propensity: PropensityModel,
    pub censoring: CensoringModel,
}

impl Nuisance for FittedNuisance {
    fn action_prob(&self, k: usize, history: &[f64], action: usize) -> Result<f64> {
        Ok(self.propensity.prob(k, history, action))
    }

    fn uncensored(&self, _k: usize, history: &[f64], action: usize, x: f64) -> Result<f64> {
        self.censoring.survival_left(history, action, x)
    }
}

/// The simulator's own propensity and censoring laws.
#[derive(Debug, Clone, Copy)]
pub struct TrueNuisance<'c>(pub &'c SimConfig);

impl Nuisance for TrueNuisance<'_> {
    fn action_prob(&self, _k: usize, history: &[f64], action: usize) -> Result<f64> {
        let p = self.0.propensity(history);
        Ok(if action == 1 { p } else { 1.0 - p })
    }

    fn uncensored(&self, _k: usize, history: &[f64], action: usize, x: f64) -> Result<f64> {
        Ok(math::exp(-self.0.hazards(history, action).c * x))
    }
}

fn check_k_max(test: &[Trajectory], k_max: usize) -> Result<()> {
    if let Some(t) = test.iter().find(|t| t.n_visits() > k_max) {
        return Err(Error::InvalidRecord {
            patient: t.patient,
            k: t.n_visits(),
            reason: alloc::format!("trajectory has more than K_max = {k_max} visits"),
        });
    }
    Ok(())
}

/// Censoring factor `Π_k Ĝ_k` of one trajectory, or zero when its truncated
/// survival time is not observed.
fn inverse_censoring(t: &Trajectory, nuisance: &dyn Nuisance, tau: f64) -> Result<f64> {
    if !(t.failed() || is_administrative(t.last(), tau)) {
        return Ok(0.0);
    }
    let mut w = 1.0;
    for v in &t.visits {
        w /= nuisance.uncensored(v.k, &v.history, v.action, v.x)?.max(PROB_FLOOR);
    }
    Ok(w)
}

/// IPCW weights of every test trajectory. Deterministic policies are
/// queried with `u = 0.5`.
pub fn ipcw_weights(test: &[Trajectory], policy: &dyn TreatmentPolicy, nuisance: &dyn Nuisance, tau: f64, k_max: usize) -> Result<Vec<f64>> {
    check_k_max(test, k_max)?;
    test.iter()
        .map(|t| {
            let mut w = 1.0;
            for v in &t.visits {
                if policy.choose(&v.history, 0.5)? != v.action {
                    return Ok(0.0);
                }
                w /= nuisance.action_prob(v.k, &v.history, v.action)?.max(PROB_FLOOR);
            }
            Ok(w * inverse_censoring(t, nuisance, tau)?)
        })
        .collect()
}

/// Self-normalized weighted mean of `T ∧ τ` with its diagnostics.
pub fn weighted_value(test: &[Trajectory], weights: &[f64], tau: f64) -> Result<EvalReport> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoMatchingTrajectories);
    }
    let y: Vec<f64> = test.iter().map(|t| t.total_time().min(tau)).collect();
    let value = weights.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / total;
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    let resid: f64 = weights.iter().zip(&y).map(|(w, y)| w * w * (y - value) * (y - value)).sum();
    let max_w = weights.iter().copied().fold(0.0, f64::max);
    Ok(EvalReport {
        method: Method::Ipcw,
        value: value.clamp(0.0, tau),
        std_error: Some(math::sqrt(resid) / total),
        tau,
        per_fold: Vec::new(),
        diagnostics: Some(WeightDiagnostics {
            n: test.len(),
            nonzero: weights.iter().filter(|&&w| w > 0.0).count(),
            max_weight_share: max_w / total,
            effective_n: total * total / sq,
        }),
        config: None,
    })
}

/// IPCW value of `policy` on a test set.
pub fn ipcw_value(test: &[Trajectory], policy: &dyn TreatmentPolicy, nuisance: &dyn Nuisance, tau: f64, k_max: usize) -> Result<EvalReport> {
    let w = ipcw_weights(test, policy, nuisance, tau, k_max)?;
    weighted_value(test, &w, tau)
}

/// Value of the regime that generated the data: every trajectory matches,
/// so only the censoring factors remain.
pub fn observed_value(test: &[Trajectory], nuisance: &dyn Nuisance, tau: f64, k_max: usize) -> Result<EvalReport> {
    check_k_max(test, k_max)?;
    let w = test.iter().map(|t| inverse_censoring(t, nuisance, tau)).collect::<Result<Vec<_>>>()?;
    weighted_value(test, &w, tau)
}
