//! Generalized random survival forest over mixed indicator/augmented outcomes.

pub mod split;
pub mod tree;

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use split::{logrank_split_score, SplitConstraints, SplitScore};
pub use tree::{AuditFailure, Node, Tree};

use crate::curve::{OutcomeCurve, StepSurvivalCurve};
use crate::{math, par, Error, Result};

/// Column names of the summarized history plus the action column, which is
/// always the last feature of a training row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    pub history: Vec<String>,
    pub action: String,
    pub n_actions: usize,
}

impl FeatureRegistry {
    pub fn new(history: Vec<String>, n_actions: usize) -> Self {
        Self {
            history,
            action: String::from("A"),
            n_actions,
        }
    }

    /// Full feature dimension including the action column.
    pub fn dim(&self) -> usize {
        self.history.len() + 1
    }

    pub fn history_dim(&self) -> usize {
        self.history.len()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.history.iter().position(|h| h == name)
    }

    pub fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.n_actions {
            return Err(Error::UnknownAction {
                action,
                n_actions: self.n_actions,
            });
        }
        Ok(())
    }

    pub fn check_history(&self, history: &[f64]) -> Result<()> {
        if history.len() != self.history.len() {
            return Err(Error::DimensionMismatch {
                expected: self.history.len(),
                actual: history.len(),
            });
        }
        Ok(())
    }

    /// Concatenates a history vector with an encoded action.
    pub fn row(&self, history: &[f64], action: usize) -> Result<Vec<f64>> {
        self.check_history(history)?;
        self.check_action(action)?;
        let mut x = Vec::with_capacity(self.dim());
        x.extend_from_slice(history);
        x.push(action as f64);
        Ok(x)
    }
}

/// One pooled training observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    /// History followed by the action.
    pub features: Vec<f64>,
    pub outcome: OutcomeCurve,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Minimum rows per terminal node.
    pub n_min: usize,
    /// Minimum event mass per terminal node.
    pub min_events: f64,
    /// Every daughter keeps at least this fraction of its parent's rows.
    pub alpha: f64,
    /// Probability that a node draws its split feature uniformly at random.
    pub split_rand: f64,
    /// Features examined per node otherwise; `None` is `⌈√d⌉`.
    pub mtry: Option<usize>,
    /// Per-tree subsample fraction, drawn without replacement.
    pub subsample: f64,
    pub seed: u64,
    pub max_cutpoints: usize,
    pub split_on_action: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            n_min: 5,
            min_events: 2.0,
            alpha: 0.1,
            split_rand: 0.2,
            mtry: None,
            subsample: 0.632,
            seed: 0,
            max_cutpoints: 32,
            split_on_action: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(String::from(msg)));
        if self.n_trees == 0 {
            return bad("n_trees must be at least 1");
        }
        if self.n_min == 0 {
            return bad("n_min must be at least 1");
        }
        if !(self.min_events >= 0.0) {
            return bad("min_events must be non-negative");
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return bad("alpha must lie in (0, 0.5]");
        }
        if !(self.split_rand > 0.0 && self.split_rand < 1.0) {
            return bad("split_rand must lie in (0, 1)");
        }
        if self.mtry == Some(0) {
            return bad("mtry must be at least 1");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if self.max_cutpoints == 0 {
            return bad("max_cutpoints must be at least 1");
        }
        Ok(())
    }

    pub fn constraints(&self) -> SplitConstraints {
        SplitConstraints {
            n_min: self.n_min,
            min_events: self.min_events,
            alpha: self.alpha,
        }
    }
}

/// A fitted ensemble. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub registry: FeatureRegistry,
    pub trees: Vec<Tree>,
}

/// Grows one tree on the rows given by `members`, with its own RNG stream.
pub fn grow_tree(rows: &[TrainingRow], members: Vec<usize>, params: &ForestParams, rng: ChaCha8Rng) -> Tree {
    let n_features = rows.first().map_or(0, |r| r.features.len());
    let prepared = tree::Prepared::new(rows);
    tree::Grower::new(&prepared, params, n_features, rng).grow(members)
}

/// RNG stream for tree `index` of a forest seeded with `seed`.
pub fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Fits `n_trees` trees on independent seeded subsamples.
pub fn fit_forest(rows: &[TrainingRow], registry: &FeatureRegistry, params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    for r in rows {
        if r.features.len() != registry.dim() {
            return Err(Error::DimensionMismatch {
                expected: registry.dim(),
                actual: r.features.len(),
            });
        }
        if !r.weight.is_finite() || r.weight < 0.0 {
            return Err(Error::InvalidWeight);
        }
    }
    if !rows.iter().any(|r| r.weight > 0.0) {
        return Err(Error::EmptySample);
    }
    let mass: f64 = rows.iter().map(|r| r.weight * r.outcome.event_mass()).sum();
    let required = params.min_events.max(f64::MIN_POSITIVE);
    if mass + split::MASS_TOL < required {
        return Err(Error::InsufficientEvents {
            available: mass,
            required,
            stratum: None,
        });
    }

    let prepared = tree::Prepared::new(rows);
    let n = rows.len();
    let take = (math::floor(params.subsample * n as f64) as usize).clamp(1, n);
    let trees = par::map_indexed(params.n_trees, |t| {
        let mut rng = tree_rng(params.seed, t);
        let members: Vec<usize> = if take == n {
            (0..n).collect()
        } else {
            let mut m = sample(&mut rng, n, take).into_vec();
            m.sort_unstable();
            m
        };
        tree::Grower::new(&prepared, params, registry.dim(), rng).grow(members)
    });
    Ok(ForestModel {
        params: params.clone(),
        registry: registry.clone(),
        trees,
    })
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Terminal curves reached by `(history, action)`, one per tree.
    pub fn terminal_curves(&self, history: &[f64], action: usize) -> Result<Vec<&StepSurvivalCurve>> {
        let x = self.registry.row(history, action)?;
        Ok(self.trees.iter().map(|t| t.leaf_curve(&x)).collect())
    }

    /// Ensemble survival curve: pointwise mean of the member trees' terminal
    /// curves on their merged jump grid.
    pub fn predict_curve(&self, history: &[f64], action: usize) -> Result<StepSurvivalCurve> {
        Ok(StepSurvivalCurve::mean_of(self.terminal_curves(history, action)?))
    }

    /// Ensemble survival at `t`, or just before `t` when `left` is set,
    /// without materializing the merged curve.
    pub fn survival_at(&self, history: &[f64], action: usize, t: f64, left: bool) -> Result<f64> {
        let x = self.registry.row(history, action)?;
        let sum: f64 = self
            .trees
            .iter()
            .map(|tree| {
                let c = tree.leaf_curve(&x);
                if left {
                    c.eval_left(t)
                } else {
                    c.eval(t)
                }
            })
            .sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Criterion-maximizing action, ties to the smallest index.
    pub fn policy_argmax(&self, history: &[f64], tau_active: f64) -> Result<(usize, f64)> {
        let mut best = (0usize, f64::NEG_INFINITY);
        for a in 0..self.registry.n_actions {
            let value = self.predict_curve(history, a)?.restricted_mean(tau_active)?;
            if value > best.1 {
                best = (a, value);
            }
        }
        Ok(best)
    }

    /// Precomputes the restricted mean of every terminal curve at `tau`, so
    /// that argmax queries reduce to tree traversals. The ensemble criterion
    /// is the mean of per-tree criteria because the integral is linear.
    pub fn criterion_table(&self, tau: f64) -> Result<CriterionTable<'_>> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidHorizon(tau));
        }
        let per_node = self
            .trees
            .iter()
            .map(|t| {
                t.nodes
                    .iter()
                    .map(|n| match n {
                        Node::Terminal { curve, .. } => curve.restricted_mean(tau).unwrap_or(0.0),
                        Node::Internal { .. } => 0.0,
                    })
                    .collect()
            })
            .collect();
        Ok(CriterionTable {
            model: self,
            tau,
            per_node,
        })
    }

    /// `mean_tree S_tree(g − offset)` at every grid point: the ensemble curve
    /// shifted right by `offset` and read off the grid.
    pub fn grid_values_shifted(&self, x: &[f64], offset: f64, grid: &[f64]) -> Vec<f64> {
        let mut sums = alloc::vec![0.0; grid.len()];
        for t in &self.trees {
            let c = t.leaf_curve(x);
            let (times, values) = (c.times(), c.values());
            let mut j = 0;
            let mut level = 1.0;
            for (slot, &g) in sums.iter_mut().zip(grid) {
                let u = g - offset;
                while j < times.len() && times[j] <= u {
                    level = values[j];
                    j += 1;
                }
                *slot += level;
            }
        }
        let n = self.trees.len() as f64;
        sums.iter_mut().for_each(|s| *s = (*s / n).clamp(0.0, 1.0));
        sums
    }
}

/// Per-terminal restricted means for one horizon.
pub struct CriterionTable<'m> {
    model: &'m ForestModel,
    tau: f64,
    per_node: Vec<Vec<f64>>,
}

impl CriterionTable<'_> {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn model(&self) -> &ForestModel {
        self.model
    }

    /// Ensemble criterion for one full feature row.
    pub fn criterion_row(&self, x: &[f64]) -> f64 {
        let sum: f64 = self
            .model
            .trees
            .iter()
            .zip(&self.per_node)
            .map(|(t, v)| v[t.leaf_index(x)])
            .sum();
        sum / self.model.trees.len() as f64
    }

    pub fn criterion(&self, history: &[f64], action: usize) -> Result<f64> {
        let x = self.model.registry.row(history, action)?;
        Ok(self.criterion_row(&x))
    }

    /// Criterion-maximizing action for a history, ties to the smallest index.
    pub fn argmax(&self, history: &[f64]) -> Result<(usize, f64)> {
        let mut x = self.model.registry.row(history, 0)?;
        let col = x.len() - 1;
        let mut best = (0usize, f64::NEG_INFINITY);
        for a in 0..self.model.registry.n_actions {
            x[col] = a as f64;
            let v = self.criterion_row(&x);
            if v > best.1 {
                best = (a, v);
            }
        }
        Ok(best)
    }
}

/// Free-function form of [`ForestModel::predict_curve`].
pub fn predict_curve(model: &ForestModel, history: &[f64], action: usize) -> Result<StepSurvivalCurve> {
    model.predict_curve(history, action)
}

/// Free-function form of [`ForestModel::policy_argmax`].
pub fn policy_argmax(model: &ForestModel, history: &[f64], tau_active: f64) -> Result<(usize, f64)> {
    model.policy_argmax(history, tau_active)
}
