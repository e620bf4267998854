//! Repeated random-split cross-validation of the fitted regime.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit_censoring, fit_propensity, ipcw_value, observed_value, EvalReport, FittedNuisance, Method};
use crate::dtr::{assign_strata, fit_dtr, DtrParams, StrataSpec, Trajectory};
use crate::forest::{FeatureRegistry, ForestParams};
use crate::sim::ConstantPolicy;
use crate::{derive_seed, math, par, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvParams {
    pub folds: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub dtr: DtrParams,
    pub strata: StrataSpec,
    /// History columns of the propensity model; `None` uses all of them.
    pub propensity_covariates: Option<Vec<usize>>,
    pub censoring: ForestParams,
}

impl Default for CvParams {
    fn default() -> Self {
        Self {
            folds: 10,
            train_fraction: 0.8,
            seed: 0,
            dtr: DtrParams::default(),
            strata: StrataSpec::Single,
            propensity_covariates: None,
            censoring: ForestParams::default(),
        }
    }
}

impl CvParams {
    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::InvalidConfig("folds must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        self.dtr.validate()?;
        self.censoring.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFold {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub estimated: Option<f64>,
    pub observed: Option<f64>,
    /// IPCW value of each constant action.
    pub constant: Vec<Option<f64>>,
    pub nonzero_weights: Option<usize>,
    pub max_weight_share: Option<f64>,
    /// Why the fold produced no estimate.
    pub skipped: Option<String>,
}

/// Best single constant action and its mean cross-validated value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroOrder {
    pub action: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<CvFold>,
    pub estimated: EvalReport,
    pub observed: Option<EvalReport>,
    pub zero_order: Option<ZeroOrder>,
}

/// Train and test indices of fold `fold`: a seeded shuffle with the first
/// `round((1 − train_fraction)·n)` positions held out.
pub fn fold_split(n: usize, fold: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, fold as u64)));
    let n_test = (math::floor((1.0 - train_fraction) * n as f64 + 0.5) as usize).clamp(1.min(n), n);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

fn recoverable(e: &Error) -> bool {
    matches!(e, Error::InsufficientEvents { .. } | Error::EmptySample | Error::NoMatchingTrajectories)
        || matches!(e, Error::Fit { source, .. } if recoverable(source))
}

fn run_fold(
    trajectories: &[Trajectory],
    registry: &FeatureRegistry,
    tau: f64,
    k_max: usize,
    params: &CvParams,
    fold: usize,
) -> Result<CvFold> {
    let (train_idx, test_idx) = fold_split(trajectories.len(), fold, params.train_fraction, params.seed);
    let train: Vec<Trajectory> = train_idx.iter().map(|&i| trajectories[i].clone()).collect();
    let test: Vec<Trajectory> = test_idx.iter().map(|&i| trajectories[i].clone()).collect();
    let mut out = CvFold {
        fold,
        n_train: train.len(),
        n_test: test.len(),
        estimated: None,
        observed: None,
        constant: alloc::vec![None; registry.n_actions],
        nonzero_weights: None,
        max_weight_share: None,
        skipped: None,
    };
    let skip = |mut out: CvFold, e: Error| -> Result<CvFold> {
        if recoverable(&e) {
            log::warn!("fold {fold} skipped: {e}");
            out.skipped = Some(e.to_string());
            Ok(out)
        } else {
            Err(e)
        }
    };
    if !train.iter().any(Trajectory::failed) {
        return skip(out, Error::InsufficientEvents {
            available: 0.0,
            required: params.dtr.forest.min_events.max(1.0),
            stratum: None,
        });
    }

    let cutpoints = params.strata.resolve(&train, tau)?;
    let (plan, labels) = assign_strata(&train, tau, &cutpoints)?;
    let mut dtr = params.dtr.clone();
    dtr.forest.seed = derive_seed(params.seed, 1000 + fold as u64);
    let estimate = match fit_dtr(&train, &plan, &labels, registry, &dtr) {
        Ok(e) => e,
        Err(e) => return skip(out, e),
    };
    let covariates: Vec<usize> = params
        .propensity_covariates
        .clone()
        .unwrap_or_else(|| (0..registry.history_dim()).collect());
    let mut cens = params.censoring.clone();
    cens.seed = derive_seed(params.seed, 2000 + fold as u64);
    let nuisance = FittedNuisance {
        propensity: fit_propensity(&train, &covariates)?,
        censoring: fit_censoring(&train, registry, &cens, tau)?,
    };

    let policy = estimate.policy()?;
    match ipcw_value(&test, &policy, &nuisance, tau, k_max) {
        Ok(r) => {
            out.estimated = Some(r.value);
            if let Some(d) = r.diagnostics {
                out.nonzero_weights = Some(d.nonzero);
                out.max_weight_share = Some(d.max_weight_share);
            }
        }
        Err(e) => out = skip(out, e)?,
    }
    out.observed = observed_value(&test, &nuisance, tau, k_max).ok().map(|r| r.value);
    for a in 0..registry.n_actions {
        out.constant[a] = ipcw_value(&test, &ConstantPolicy(a), &nuisance, tau, k_max).ok().map(|r| r.value);
    }
    Ok(out)
}

fn pooled(method: Method, values: Vec<f64>, tau: f64) -> Option<EvalReport> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = (values.len() > 1).then(|| {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        math::sqrt(var / n)
    });
    Some(EvalReport {
        method,
        value: mean,
        std_error: se,
        tau,
        per_fold: values,
        diagnostics: None,
        config: None,
    })
}

/// Per fold: fit the regime and the nuisance models on the training part
/// and estimate values on the held-out part. Pooled values are fold means.
pub fn cross_validate(
    trajectories: &[Trajectory],
    registry: &FeatureRegistry,
    tau: f64,
    k_max: usize,
    params: &CvParams,
) -> Result<CvReport> {
    params.validate()?;
    if trajectories.len() < 2 {
        return Err(Error::EmptySample);
    }
    let folds = par::map_indexed(params.folds, |f| run_fold(trajectories, registry, tau, k_max, params, f))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let estimated = pooled(Method::Ipcw, folds.iter().filter_map(|f| f.estimated).collect(), tau)
        .ok_or(Error::NoMatchingTrajectories)?;
    let observed = pooled(Method::Ipcw, folds.iter().filter_map(|f| f.observed).collect(), tau);
    let zero_order = (0..registry.n_actions)
        .filter_map(|a| {
            let v: Vec<f64> = folds.iter().filter_map(|f| f.constant[a]).collect();
            (!v.is_empty()).then(|| ZeroOrder {
                action: a,
                value: v.iter().sum::<f64>() / v.len() as f64,
            })
        })
        .fold(None, |best: Option<ZeroOrder>, z| match best {
            Some(b) if b.value >= z.value => Some(b),
            _ => Some(z),
        });
    Ok(CvReport {
        folds,
        estimated,
        observed,
        zero_order,
    })
}

/// One row of the value-versus-ensemble-size table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_trees: usize,
    pub estimated: f64,
    pub observed: Option<f64>,
    pub zero_order: Option<f64>,
}

/// Cross-validated value for each ensemble size, with identical folds.
pub fn trees_sweep(
    trajectories: &[Trajectory],
    registry: &FeatureRegistry,
    tau: f64,
    k_max: usize,
    params: &CvParams,
    n_trees: &[usize],
) -> Result<Vec<SweepPoint>> {
    n_trees
        .iter()
        .map(|&n| {
            let mut p = params.clone();
            p.dtr.forest.n_trees = n;
            let r = cross_validate(trajectories, registry, tau, k_max, &p)?;
            Ok(SweepPoint {
                n_trees: n,
                estimated: r.estimated.value,
                observed: r.observed.map(|o| o.value),
                zero_order: r.zero_order.map(|z| z.value),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_seeded_and_disjoint() {
        let (tr, te) = fold_split(418, 3, 0.8, 7);
        assert_eq!(te.len(), 84);
        assert_eq!(tr.len() + te.len(), 418);
        assert!(te.iter().all(|i| tr.binary_search(i).is_err()));
        assert_eq!(fold_split(418, 3, 0.8, 7), (tr.clone(), te.clone()));
        assert_ne!(fold_split(418, 4, 0.8, 7).1, te);
    }
}
