//! Backward-recursive fitting with stochastic augmentation.

use alloc::boxed::Box;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::record::Trajectory;
use super::strata::{pool_stratum, PooledRow, StrataLabels, StrataPlan};
use crate::curve::{shift_augment, OutcomeCurve, OutcomeKind, StepSurvivalCurve};
use crate::forest::{fit_forest, CriterionTable, FeatureRegistry, ForestModel, ForestParams, TrainingRow};
use crate::{derive_seed, par, Error, Result};

/// Format version written into serialized estimates.
pub const ESTIMATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtrParams {
    pub forest: ForestParams,
    /// Augmented curves are read off this many equally spaced points of the
    /// stratum horizon; `None` keeps the exact shifted ensemble curves.
    pub augment_grid: Option<usize>,
}

impl Default for DtrParams {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            augment_grid: Some(100),
        }
    }
}

impl DtrParams {
    pub fn validate(&self) -> Result<()> {
        self.forest.validate()?;
        if self.augment_grid == Some(0) {
            return Err(Error::InvalidConfig("augment_grid must be at least 1".into()));
        }
        Ok(())
    }
}

/// Models of strata that have finished all their refits.
#[derive(Debug, Clone, Default)]
pub struct FrozenStrata {
    models: Vec<Option<ForestModel>>,
}

impl FrozenStrata {
    pub fn new(n_strata: usize) -> Self {
        Self {
            models: alloc::vec![None; n_strata],
        }
    }

    pub fn freeze(&mut self, l: usize, model: ForestModel) {
        self.models[l - 1] = Some(model);
    }

    pub fn is_frozen(&self, l: usize) -> bool {
        self.models.get(l.wrapping_sub(1)).is_some_and(Option::is_some)
    }

    /// Model of a later stratum `requested`, as seen from stratum `current`.
    pub fn provider(&self, current: usize, requested: usize) -> Result<&ForestModel> {
        if requested >= current {
            return Err(Error::Sequencing { current, requested });
        }
        self.models
            .get(requested - 1)
            .and_then(Option::as_ref)
            .ok_or(Error::Sequencing { current, requested })
    }
}

/// Result of one backward sweep over a stratum.
#[derive(Debug, Clone)]
pub struct Sweep {
    /// Training rows for the refit, in pooled order.
    pub rows: Vec<TrainingRow>,
    /// Criterion-maximizing action for every pooled row's own history.
    pub actions: Vec<usize>,
    /// Visit indices touched, latest first.
    pub visit_order: Vec<usize>,
    pub n_augmented: usize,
    /// Later strata whose frozen models supplied next-visit curves.
    pub providers_used: Vec<usize>,
}

/// One line of the refit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEntry {
    /// Global refit counter, 1-based.
    pub j: usize,
    pub stratum: usize,
    /// Refit counter within the stratum, 1-based.
    pub iteration: usize,
    pub visits: Vec<usize>,
    pub n_rows: usize,
    pub n_augmented: usize,
    pub providers: Vec<usize>,
}

/// Mean over patients of the estimated optimal baseline criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineCriterion {
    pub initial: f64,
    pub r#final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtrEstimate {
    pub version: u32,
    pub plan: StrataPlan,
    pub registry: FeatureRegistry,
    pub params: DtrParams,
    /// Last refit of the earliest stratum: the deployed regime.
    pub final_model: ForestModel,
    /// Last refit of every stratum, stratum `l` at `l − 1`.
    pub strata_models: Vec<ForestModel>,
    pub iteration_log: Vec<IterationEntry>,
    pub baseline_criterion: BaselineCriterion,
}

impl DtrEstimate {
    pub fn total_iterations(&self) -> usize {
        self.iteration_log.len()
    }

    /// Fast form of [`apply_policy`] for repeated queries.
    pub fn policy(&self) -> Result<CriterionTable<'_>> {
        self.final_model.criterion_table(self.plan.tau)
    }
}

/// The regime's action for history `h`, maximizing the criterion over `[0, τ]`.
pub fn apply_policy(estimate: &DtrEstimate, h: &[f64]) -> Result<usize> {
    estimate.final_model.policy_argmax(h, estimate.plan.tau).map(|(a, _)| a)
}

fn stratum_seed(params: &DtrParams, l: usize) -> ForestParams {
    ForestParams {
        seed: derive_seed(params.forest.seed, l as u64),
        ..params.forest.clone()
    }
}

fn grid(horizon: f64, m: usize) -> Vec<f64> {
    (1..=m).map(|i| horizon * i as f64 / m as f64).collect()
}

/// One backward sweep of stratum `l` with its current `model`: every
/// advancement row's outcome is replaced by the next visit's optimized curve
/// shifted by the visit length; failure and censored rows keep their
/// indicator outcomes.
#[allow(clippy::too_many_arguments)]
pub fn backward_sweep(
    model: &ForestModel,
    l: usize,
    plan: &StrataPlan,
    trajectories: &[Trajectory],
    labels: &StrataLabels,
    pooled: &[PooledRow],
    frozen: &FrozenStrata,
    params: &DtrParams,
) -> Result<Sweep> {
    let horizon = plan.horizon(l);
    let own = model.criterion_table(horizon)?;

    // tables for every later stratum that supplies a next-visit curve
    let mut providers_used = Vec::new();
    for p in pooled {
        let t = &trajectories[p.patient];
        if t.visits[p.visit].is_advancement() {
            let next_l = labels[p.patient][p.visit + 1];
            if next_l != l && !providers_used.contains(&next_l) {
                frozen.provider(l, next_l)?;
                providers_used.push(next_l);
            }
        }
    }
    providers_used.sort_unstable();
    let mut tables: Vec<Option<CriterionTable<'_>>> = (0..plan.n_strata()).map(|_| None).collect();
    for &p in &providers_used {
        tables[p - 1] = Some(frozen.provider(l, p)?.criterion_table(plan.horizon(p))?);
    }
    let grid = params.augment_grid.map(|m| grid(horizon, m));

    let out: Vec<Result<(TrainingRow, usize, bool)>> = par::map_indexed(pooled.len(), |r| {
        let p = &pooled[r];
        let rec = &trajectories[p.patient].visits[p.visit];
        let (action, _) = own.argmax(&rec.history)?;
        if !rec.is_advancement() {
            return Ok((p.row.clone(), action, false));
        }
        let next = &trajectories[p.patient].visits[p.visit + 1];
        let next_l = labels[p.patient][p.visit + 1];
        let table = if next_l == l {
            &own
        } else {
            tables[next_l - 1].as_ref().ok_or(Error::Sequencing {
                current: l,
                requested: next_l,
            })?
        };
        let (a_star, _) = table.argmax(&next.history)?;
        let outcome = match &grid {
            Some(g) => {
                let x = table.model().registry.row(&next.history, a_star)?;
                let values = table.model().grid_values_shifted(&x, rec.x, g);
                OutcomeCurve {
                    kind: OutcomeKind::Augmented { visit_length: rec.x },
                    curve: StepSurvivalCurve::from_sorted_unchecked(g.clone(), values),
                }
            }
            None => {
                let next_curve = table.model().predict_curve(&next.history, a_star)?;
                shift_augment(&next_curve, rec.x, Some(horizon))?
            }
        };
        let row = TrainingRow {
            features: p.row.features.clone(),
            outcome,
            weight: p.row.weight,
        };
        Ok((row, action, true))
    });

    let mut rows = Vec::with_capacity(pooled.len());
    let mut actions = Vec::with_capacity(pooled.len());
    let mut n_augmented = 0;
    for o in out {
        let (row, a, aug) = o?;
        rows.push(row);
        actions.push(a);
        n_augmented += aug as usize;
    }
    let mut visit_order: Vec<usize> = pooled.iter().map(|p| trajectories[p.patient].visits[p.visit].k).collect();
    visit_order.sort_unstable_by(|a, b| b.cmp(a));
    visit_order.dedup();
    Ok(Sweep {
        rows,
        actions,
        visit_order,
        n_augmented,
        providers_used,
    })
}

fn fit_context(rows: &[TrainingRow], registry: &FeatureRegistry, params: &ForestParams, l: usize, j: usize) -> Result<ForestModel> {
    fit_forest(rows, registry, params).map_err(|e| Error::Fit {
        stratum: l,
        iteration: j,
        source: Box::new(e),
    })
}

fn baseline_criterion(model: &ForestModel, trajectories: &[Trajectory], tau: f64) -> Result<f64> {
    let table = model.criterion_table(tau)?;
    let mut sum = 0.0;
    for t in trajectories {
        sum += table.argmax(&t.visits[0].history)?.1;
    }
    Ok(sum / trajectories.len().max(1) as f64)
}

/// Fits the regime stratum by stratum, latest first: pooled initialization,
/// then `M_l` rounds of backward sweep and refit per stratum.
pub fn fit_dtr(
    trajectories: &[Trajectory],
    plan: &StrataPlan,
    labels: &StrataLabels,
    registry: &FeatureRegistry,
    params: &DtrParams,
) -> Result<DtrEstimate> {
    params.validate()?;
    if trajectories.is_empty() {
        return Err(Error::EmptySample);
    }
    for t in trajectories {
        for v in &t.visits {
            registry.check_history(&v.history)?;
            registry.check_action(v.action)?;
        }
    }
    let w = plan.n_strata();
    let mut frozen = FrozenStrata::new(w);
    let mut log = Vec::with_capacity(plan.total_iterations());
    let mut initial_earliest = None;
    let mut j = 0;

    for l in 1..=w {
        let pooled = pool_stratum(trajectories, labels, l, params.forest.min_events)?;
        let fp = stratum_seed(params, l);
        let init_rows: Vec<TrainingRow> = pooled.iter().map(|p| p.row.clone()).collect();
        let mut model = fit_context(&init_rows, registry, &fp, l, 0)?;
        drop(init_rows);
        if l == w {
            initial_earliest = Some(baseline_criterion(&model, trajectories, plan.horizon(l))?);
        }
        for it in 1..=plan.m(l) {
            j += 1;
            let sweep = backward_sweep(&model, l, plan, trajectories, labels, &pooled, &frozen, params)?;
            model = fit_context(&sweep.rows, registry, &fp, l, it)?;
            log::info!(
                "stratum {l} iteration {it}/{} (j = {j}): {} rows, {} augmented",
                plan.m(l),
                sweep.rows.len(),
                sweep.n_augmented
            );
            log.push(IterationEntry {
                j,
                stratum: l,
                iteration: it,
                visits: sweep.visit_order,
                n_rows: sweep.rows.len(),
                n_augmented: sweep.n_augmented,
                providers: sweep.providers_used,
            });
        }
        frozen.freeze(l, model);
    }
    debug_assert_eq!(j, plan.total_iterations());

    let strata_models: Vec<ForestModel> = frozen.models.into_iter().map(|m| m.expect("every stratum is frozen")).collect();
    let final_model = strata_models[w - 1].clone();
    let final_criterion = baseline_criterion(&final_model, trajectories, plan.horizon(w))?;
    Ok(DtrEstimate {
        version: ESTIMATE_VERSION,
        plan: plan.clone(),
        registry: registry.clone(),
        params: params.clone(),
        final_model,
        strata_models,
        iteration_log: log,
        baseline_criterion: BaselineCriterion {
            initial: initial_earliest.unwrap_or(final_criterion),
            r#final: final_criterion,
        },
    })
}
