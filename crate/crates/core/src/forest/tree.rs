//! α-regular, random-split survival trees stored as flat node arenas.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::split::{ChildAccumulator, NodeTable, PointCoefs, SplitConstraints, MASS_TOL};
use super::{ForestParams, TrainingRow};
use crate::curve::StepSurvivalCurve;
use crate::km::RISK_FLOOR;
use crate::math;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Internal {
        feature: usize,
        cut: f64,
        left: usize,
        right: usize,
        n_rows: usize,
        event_mass: f64,
    },
    Terminal {
        curve: StepSurvivalCurve,
        n_rows: usize,
        event_mass: f64,
    },
}

impl Node {
    pub fn n_rows(&self) -> usize {
        match self {
            Node::Internal { n_rows, .. } | Node::Terminal { n_rows, .. } => *n_rows,
        }
    }

    pub fn event_mass(&self) -> f64 {
        match self {
            Node::Internal { event_mass, .. } | Node::Terminal { event_mass, .. } => *event_mass,
        }
    }
}

/// One fitted tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// A structural rule violated by a fitted tree.
#[derive(Debug, Clone, PartialEq)]
pub enum AuditFailure {
    NotAlphaRegular { node: usize, child: usize },
    TerminalTooSmall { node: usize, n_rows: usize },
    TerminalTooFewEvents { node: usize, event_mass: f64 },
    RowCountMismatch { node: usize, stored: usize, routed: usize },
}

impl Tree {
    /// Index of the terminal node that `x` falls into.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Internal {
                    feature, cut, left, right, ..
                } => i = if x[*feature] <= *cut { *left } else { *right },
                Node::Terminal { .. } => return i,
            }
        }
    }

    pub fn leaf_curve(&self, x: &[f64]) -> &StepSurvivalCurve {
        match &self.nodes[self.leaf_index(x)] {
            Node::Terminal { curve, .. } => curve,
            Node::Internal { .. } => unreachable!(),
        }
    }

    pub fn n_terminals(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Terminal { .. })).count()
    }

    pub fn root_feature(&self) -> Option<usize> {
        match self.nodes.first() {
            Some(Node::Internal { feature, .. }) => Some(*feature),
            _ => None,
        }
    }

    /// Checks α-regularity of every split and the size/event floors of every
    /// terminal using the stored node counts.
    pub fn audit(&self, constraints: &SplitConstraints) -> Result<(), AuditFailure> {
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Internal { left, right, n_rows, .. } => {
                    for &c in [left, right] {
                        let child = self.nodes[c].n_rows();
                        if (child as f64) < constraints.alpha * *n_rows as f64 || child < constraints.n_min {
                            return Err(AuditFailure::NotAlphaRegular { node: i, child: c });
                        }
                    }
                }
                Node::Terminal { n_rows, event_mass, .. } => {
                    if *n_rows < constraints.n_min {
                        return Err(AuditFailure::TerminalTooSmall { node: i, n_rows: *n_rows });
                    }
                    if *event_mass + MASS_TOL < constraints.min_events {
                        return Err(AuditFailure::TerminalTooFewEvents {
                            node: i,
                            event_mass: *event_mass,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Re-routes the training rows and checks that every node's stored row
    /// count matches how many rows actually reach it.
    pub fn audit_routing(&self, rows: &[&[f64]]) -> Result<(), AuditFailure> {
        let mut reached = alloc::vec![0usize; self.nodes.len()];
        for x in rows {
            let mut i = 0;
            loop {
                reached[i] += 1;
                match &self.nodes[i] {
                    Node::Internal {
                        feature, cut, left, right, ..
                    } => i = if x[*feature] <= *cut { *left } else { *right },
                    Node::Terminal { .. } => break,
                }
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.n_rows() != reached[i] {
                return Err(AuditFailure::RowCountMismatch {
                    node: i,
                    stored: node.n_rows(),
                    routed: reached[i],
                });
            }
        }
        Ok(())
    }
}

/// Row data flattened once per tree fit.
pub(crate) struct Prepared {
    pub weight: Vec<f64>,
    pub mass: Vec<f64>,
    pub delta: Vec<bool>,
    /// Jumps per row as (global time index, weighted drop).
    pub jump_off: Vec<u32>,
    pub jumps: Vec<(u32, f64)>,
    /// Distinct jump times of all rows, ascending.
    pub times: Vec<f64>,
    pub n_times: usize,
    /// Column-major copy of the features.
    pub cols: Vec<Vec<f64>>,
}

impl Prepared {
    pub fn new(rows: &[TrainingRow]) -> Self {
        let mut times: Vec<f64> = rows.iter().flat_map(|r| r.outcome.curve.times().iter().copied()).collect();
        times.sort_unstable_by(f64::total_cmp);
        times.dedup();
        let mut jump_off = Vec::with_capacity(rows.len() + 1);
        let mut jumps = Vec::new();
        jump_off.push(0u32);
        for r in rows {
            for (t, drop) in r.outcome.curve.decrements() {
                let g = times.partition_point(|&s| s < t) as u32;
                jumps.push((g, r.weight * drop));
            }
            jump_off.push(jumps.len() as u32);
        }
        let d = rows.first().map_or(0, |r| r.features.len());
        let cols = (0..d).map(|f| rows.iter().map(|r| r.features[f]).collect()).collect();
        Self {
            weight: rows.iter().map(|r| r.weight).collect(),
            mass: rows.iter().map(|r| r.weight * r.outcome.event_mass()).collect(),
            delta: rows.iter().map(|r| r.outcome.delta()).collect(),
            jump_off,
            jumps,
            n_times: times.len(),
            times,
            cols,
        }
    }

    fn row_jumps(&self, i: usize) -> &[(u32, f64)] {
        &self.jumps[self.jump_off[i] as usize..self.jump_off[i + 1] as usize]
    }

    /// Product-limit curve of `members`, computed on the shared time index;
    /// same estimator as [`crate::km::modified_km`].
    pub fn terminal_curve(&self, members: &[usize]) -> StepSurvivalCurve {
        // (time index, at-risk decrement, death decrement)
        let mut events: Vec<(u32, f64, f64)> = Vec::new();
        let mut at_risk = 0.0;
        for &i in members {
            let w = self.weight[i];
            if w <= 0.0 {
                continue;
            }
            at_risk += w;
            for &(g, m) in self.row_jumps(i) {
                events.push((g, m, if self.delta[i] { m } else { 0.0 }));
            }
        }
        events.sort_unstable_by_key(|e| e.0);
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut surv = 1.0;
        let mut i = 0;
        while i < events.len() {
            let g = events[i].0;
            let (mut leaving, mut deaths) = (0.0, 0.0);
            while i < events.len() && events[i].0 == g {
                leaving += events[i].1;
                deaths += events[i].2;
                i += 1;
            }
            if deaths > 0.0 {
                if at_risk < RISK_FLOOR {
                    break;
                }
                let next = surv * (1.0 - deaths / at_risk).max(0.0);
                if next < surv {
                    surv = next;
                    times.push(self.times[g as usize]);
                    values.push(surv);
                }
            }
            at_risk -= leaving;
        }
        StepSurvivalCurve::from_sorted_unchecked(times, values)
    }

    /// Builds the node table for `members`; `scratch` must have length
    /// `n_times` and be all `u32::MAX` on entry; it is restored on exit.
    fn node_table(&self, members: &[usize], scratch: &mut [u32]) -> NodeTable {
        let live = |i: usize| self.delta[i] && self.weight[i] > 0.0;
        let n_jumps: usize = members.iter().filter(|&&i| live(i)).map(|&i| self.row_jumps(i).len()).sum();
        let mut points: Vec<u32> = Vec::new();
        if n_jumps * 8 < self.n_times {
            for &i in members {
                if live(i) {
                    points.extend(self.row_jumps(i).iter().map(|j| j.0));
                }
            }
            points.sort_unstable();
            points.dedup();
            for (p, &g) in points.iter().enumerate() {
                scratch[g as usize] = p as u32;
            }
        } else {
            for &i in members {
                if live(i) {
                    for j in self.row_jumps(i) {
                        scratch[j.0 as usize] = 0;
                    }
                }
            }
            for (g, slot) in scratch.iter_mut().enumerate() {
                if *slot != u32::MAX {
                    *slot = points.len() as u32;
                    points.push(g as u32);
                }
            }
        }
        let n_points = points.len();
        let mut table = NodeTable {
            deaths: alloc::vec![0.0; n_points],
            cens: alloc::vec![0.0; n_points + 1],
            total_weight: 0.0,
            row_off: Vec::with_capacity(members.len() + 1),
            entries: Vec::with_capacity(n_jumps + members.len()),
            row_delta: Vec::with_capacity(members.len()),
        };
        table.row_off.push(0);
        for &i in members {
            table.total_weight += self.weight[i];
            table.row_delta.push(self.delta[i]);
            if self.weight[i] > 0.0 {
                for &(g, m) in self.row_jumps(i) {
                    if self.delta[i] {
                        let p = scratch[g as usize];
                        table.entries.push((p, m));
                        table.deaths[p as usize] += m;
                    } else {
                        // first death point strictly after this jump
                        let b = points.partition_point(|&q| q <= g) as u32;
                        table.entries.push((b, m));
                        table.cens[b as usize] += m;
                    }
                }
            }
            table.row_off.push(table.entries.len() as u32);
        }
        for &g in &points {
            scratch[g as usize] = u32::MAX;
        }
        table
    }
}

struct Best {
    feature: usize,
    cut: f64,
    score: f64,
}

pub(crate) struct Grower<'p, R: Rng> {
    data: &'p Prepared,
    params: &'p ForestParams,
    constraints: SplitConstraints,
    n_features: usize,
    mtry: usize,
    rng: R,
    scratch: Vec<u32>,
    nodes: Vec<Node>,
}

impl<'p, R: Rng> Grower<'p, R> {
    pub fn new(data: &'p Prepared, params: &'p ForestParams, n_features: usize, rng: R) -> Self {
        let mtry = params.mtry.unwrap_or_else(|| math::ceil(math::sqrt(n_features as f64)) as usize);
        Self {
            data,
            params,
            constraints: params.constraints(),
            n_features,
            mtry: mtry.clamp(1, n_features),
            rng,
            scratch: alloc::vec![u32::MAX; data.n_times],
            nodes: Vec::new(),
        }
    }

    pub fn grow(mut self, members: Vec<usize>) -> Tree {
        self.build(members);
        Tree { nodes: self.nodes }
    }

    fn build(&mut self, members: Vec<usize>) -> usize {
        let id = self.nodes.len();
        let n = members.len();
        let mass: f64 = members.iter().map(|&i| self.data.mass[i]).sum();
        self.nodes.push(Node::Terminal {
            curve: StepSurvivalCurve::one(),
            n_rows: n,
            event_mass: mass,
        });

        let splittable = n >= 2 * self.constraints.n_min && mass + MASS_TOL >= 2.0 * self.constraints.min_events;
        let best = if splittable { self.choose_split(&members, mass) } else { None };

        match best {
            Some(best) => {
                let (left, right): (Vec<usize>, Vec<usize>) = members
                    .into_iter()
                    .partition(|&i| self.data.cols[best.feature][i] <= best.cut);
                let l = self.build(left);
                let r = self.build(right);
                self.nodes[id] = Node::Internal {
                    feature: best.feature,
                    cut: best.cut,
                    left: l,
                    right: r,
                    n_rows: n,
                    event_mass: mass,
                };
            }
            None => {
                let curve = self.data.terminal_curve(&members);
                self.nodes[id] = Node::Terminal {
                    curve,
                    n_rows: n,
                    event_mass: mass,
                };
            }
        }
        id
    }

    fn eligible_features(&self) -> usize {
        if self.params.split_on_action {
            self.n_features
        } else {
            self.n_features - 1
        }
    }

    fn choose_split(&mut self, members: &[usize], mass: f64) -> Option<Best> {
        let d = self.eligible_features();
        if d == 0 {
            return None;
        }
        let table = self.data.node_table(members, &mut self.scratch);
        if table.n_points() == 0 {
            return None;
        }
        let coefs = table.coefficients();
        let mut acc = ChildAccumulator::new(table.n_points());

        let uniform = self.rng.random::<f64>() < self.params.split_rand;
        if uniform {
            let f = self.rng.random_range(0..d);
            if let Some(b) = self.best_cut(f, members, mass, &table, &coefs, &mut acc) {
                return Some(b);
            }
        }
        let k = self.mtry.min(d);
        let mut candidates: Vec<usize> = sample(&mut self.rng, d, k).into_vec();
        candidates.sort_unstable();
        let mut best: Option<Best> = None;
        for f in candidates {
            if let Some(b) = self.best_cut(f, members, mass, &table, &coefs, &mut acc) {
                if best.as_ref().is_none_or(|cur| b.score > cur.score) {
                    best = Some(b);
                }
            }
        }
        best
    }

    fn best_cut(
        &self,
        feature: usize,
        members: &[usize],
        mass: f64,
        table: &NodeTable,
        coefs: &PointCoefs,
        acc: &mut ChildAccumulator,
    ) -> Option<Best> {
        let col = &self.data.cols[feature];
        let n = members.len();
        // (value, local position) sorted by value
        let mut order: Vec<(f64, u32)> = members.iter().enumerate().map(|(l, &i)| (col[i], l as u32)).collect();
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let value = |pos: usize| order[pos].0;
        let cuts = quantile_cuts(n, self.params.max_cutpoints, value);
        if cuts.is_empty() {
            return None;
        }

        acc.reset();
        let mut n_left = 0usize;
        let mut mass_left = 0.0;
        let mut best: Option<Best> = None;
        for cut in cuts {
            while n_left < n && value(n_left) <= cut {
                let local = order[n_left].1 as usize;
                let i = members[local];
                acc.add(table, local, self.data.weight[i]);
                mass_left += self.data.mass[i];
                n_left += 1;
            }
            let c = &self.constraints;
            if !c.child_ok(n_left, mass_left, n) || !c.child_ok(n - n_left, mass - mass_left, n) {
                continue;
            }
            let score = acc.score(coefs);
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Best { feature, cut, score });
            }
        }
        best
    }
}

/// Up to `max_cuts` distinct empirical quantiles of the sorted values,
/// excluding the maximum (which would leave the right child empty).
fn quantile_cuts(n: usize, max_cuts: usize, value: impl Fn(usize) -> f64) -> Vec<f64> {
    if n < 2 {
        return Vec::new();
    }
    let max = value(n - 1);
    let mut cuts = Vec::new();
    let mut distinct = 0usize;
    let mut prev = f64::NAN;
    for pos in 0..n {
        let v = value(pos);
        if v != prev {
            distinct += 1;
            prev = v;
        }
    }
    if distinct - 1 <= max_cuts {
        let mut prev = f64::NAN;
        for pos in 0..n {
            let v = value(pos);
            if v != prev && v < max {
                cuts.push(v);
            }
            prev = v;
        }
        return cuts;
    }
    for q in 1..=max_cuts {
        let pos = math::ceil((q * n) as f64 / (max_cuts + 1) as f64) as usize;
        let v = value(pos.saturating_sub(1).min(n - 1));
        if v < max && cuts.last().is_none_or(|&last| v > last) {
            cuts.push(v);
        }
    }
    cuts
}
