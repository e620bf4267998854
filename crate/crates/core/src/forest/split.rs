//! Log-rank split statistic over fractional risk sets.
//!
//! For child `L` of a candidate split, at every decrement point `s` of the
//! node with pooled deaths `d(s) > 0` and at-risk mass `Y(s) > 1`:
//!
//! ```text
//! U = Σ_s d_L(s) − Y_L(s)·d(s)/Y(s)
//! V = Σ_s d(s)·(Y_L/Y)·(1 − Y_L/Y)·(Y − d)/(Y − 1)
//! score = U² / V   (0 when V = 0)
//! ```

use alloc::vec::Vec;

use crate::curve::OutcomeCurve;

/// Node-level admissibility rules for candidate children.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConstraints {
    pub n_min: usize,
    pub min_events: f64,
    pub alpha: f64,
}

/// Tolerance used when comparing accumulated event mass against `min_events`.
pub(crate) const MASS_TOL: f64 = 1e-9;

impl SplitConstraints {
    /// Whether a child with `n_child` rows and `mass_child` event mass is a
    /// legal daughter of a parent with `n_parent` rows.
    pub fn child_ok(&self, n_child: usize, mass_child: f64, n_parent: usize) -> bool {
        n_child >= self.n_min
            && (n_child as f64) >= self.alpha * n_parent as f64
            && mass_child + MASS_TOL >= self.min_events
    }
}

/// Result of scoring one candidate split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitScore {
    Feasible(f64),
    Infeasible,
}

impl SplitScore {
    pub fn value(self) -> Option<f64> {
        match self {
            SplitScore::Feasible(v) => Some(v),
            SplitScore::Infeasible => None,
        }
    }
}

/// Squared standardized log-rank statistic for sending rows with
/// `features[feature] <= cut` left. Direct evaluation, O(rows · points).
pub fn logrank_split_score(
    rows: &[(&[f64], &OutcomeCurve, f64)],
    feature: usize,
    cut: f64,
    constraints: &SplitConstraints,
) -> SplitScore {
    let n = rows.len();
    let (mut n_left, mut mass_left, mut mass_total) = (0usize, 0.0, 0.0);
    for (x, o, w) in rows {
        let m = w * o.event_mass();
        mass_total += m;
        if x[feature] <= cut {
            n_left += 1;
            mass_left += m;
        }
    }
    if !constraints.child_ok(n_left, mass_left, n) || !constraints.child_ok(n - n_left, mass_total - mass_left, n) {
        return SplitScore::Infeasible;
    }

    let mut points: Vec<f64> = rows
        .iter()
        .filter(|(_, o, w)| o.delta() && *w > 0.0)
        .flat_map(|(_, o, _)| o.curve.times().iter().copied())
        .collect();
    points.sort_unstable_by(f64::total_cmp);
    points.dedup();

    let (mut u, mut v) = (0.0, 0.0);
    for &s in &points {
        let (mut y, mut y_l, mut d, mut d_l) = (0.0, 0.0, 0.0, 0.0);
        for (x, o, w) in rows {
            let before = o.curve.eval_left(s);
            let risk = w * before;
            let death = if o.delta() { w * (before - o.curve.eval(s)) } else { 0.0 };
            y += risk;
            d += death;
            if x[feature] <= cut {
                y_l += risk;
                d_l += death;
            }
        }
        if let Some((du, dv)) = point_terms(y, y_l, d, d_l) {
            u += du;
            v += dv;
        }
    }
    SplitScore::Feasible(finish(u, v))
}

#[inline]
pub(crate) fn point_terms(y: f64, y_l: f64, d: f64, d_l: f64) -> Option<(f64, f64)> {
    if d <= 0.0 || y <= 1.0 {
        return None;
    }
    let frac = y_l / y;
    let du = d_l - frac * d;
    let dv = d * frac * (1.0 - frac) * (y - d) / (y - 1.0);
    Some((du, dv))
}

#[inline]
pub(crate) fn finish(u: f64, v: f64) -> f64 {
    if v > 0.0 {
        u * u / v
    } else {
        0.0
    }
}

/// Flattened per-node view used by the tree grower. Rows with `δ = 1` only
/// drop at death points of the node, so their at-risk decrements are the
/// death masses shifted by one point and need no separate bookkeeping;
/// censored rows carry explicit decrements bucketed at the first death point
/// strictly after their jump.
pub(crate) struct NodeTable {
    /// Pooled deaths per death point.
    pub deaths: Vec<f64>,
    /// Pooled censored-row at-risk drops per bucket (`P + 1` buckets).
    pub cens: Vec<f64>,
    pub total_weight: f64,
    /// Per node-row ranges into `entries`.
    pub row_off: Vec<u32>,
    /// Death point (δ rows) or drop bucket (censored rows) with its mass.
    pub entries: Vec<(u32, f64)>,
    pub row_delta: Vec<bool>,
}

impl NodeTable {
    pub fn n_points(&self) -> usize {
        self.deaths.len()
    }

    /// Pooled at-risk mass `Y` at every death point.
    pub fn at_risk(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.deaths.len());
        let mut acc = self.total_weight;
        for p in 0..self.deaths.len() {
            acc -= self.cens[p];
            y.push(acc);
            acc -= self.deaths[p];
        }
        y
    }

    /// Per-point constants of the score, so the sweep needs no divisions.
    pub fn coefficients(&self) -> PointCoefs {
        let n = self.deaths.len();
        let mut k = PointCoefs {
            on: alloc::vec![0.0; n],
            inv_y: alloc::vec![0.0; n],
            d: alloc::vec![0.0; n],
            c: alloc::vec![0.0; n],
        };
        for (p, y) in self.at_risk().into_iter().enumerate() {
            let d = self.deaths[p];
            if d > 0.0 && y > 1.0 {
                k.on[p] = 1.0;
                k.inv_y[p] = 1.0 / y;
                k.d[p] = d;
                k.c[p] = d * (y - d) / (y - 1.0);
            }
        }
        k
    }
}

/// Per-point score constants; `on = 0` marks a skipped point and
/// `c = d·(Y − d)/(Y − 1)`.
pub(crate) struct PointCoefs {
    on: Vec<f64>,
    inv_y: Vec<f64>,
    d: Vec<f64>,
    c: Vec<f64>,
}

/// Sweep state for one child while rows are moved into it.
pub(crate) struct ChildAccumulator {
    pub deaths: Vec<f64>,
    pub cens: Vec<f64>,
    pub weight: f64,
    y_buf: Vec<f64>,
}

impl ChildAccumulator {
    pub fn new(points: usize) -> Self {
        Self {
            deaths: alloc::vec![0.0; points],
            cens: alloc::vec![0.0; points + 1],
            weight: 0.0,
            y_buf: alloc::vec![0.0; points],
        }
    }

    pub fn reset(&mut self) {
        self.deaths.iter_mut().for_each(|x| *x = 0.0);
        self.cens.iter_mut().for_each(|x| *x = 0.0);
        self.weight = 0.0;
    }

    pub fn add(&mut self, table: &NodeTable, local: usize, weight: f64) {
        self.weight += weight;
        let (a, b) = (table.row_off[local] as usize, table.row_off[local + 1] as usize);
        let target = if table.row_delta[local] { &mut self.deaths } else { &mut self.cens };
        for &(p, m) in &table.entries[a..b] {
            target[p as usize] += m;
        }
    }

    /// Score of this accumulator as the left child.
    pub fn score(&mut self, k: &PointCoefs) -> f64 {
        let n = k.on.len();
        let y_buf = &mut self.y_buf[..n];
        let mut y_l = self.weight;
        for p in 0..n {
            y_l -= self.cens[p];
            y_buf[p] = y_l;
            y_l -= self.deaths[p];
        }
        // four independent lanes so the loop vectorizes
        let (mut u, mut v) = ([0.0f64; 4], [0.0f64; 4]);
        let body = n - n % 4;
        for base in (0..body).step_by(4) {
            for lane in 0..4 {
                let p = base + lane;
                let frac = y_buf[p] * k.inv_y[p];
                u[lane] += k.on[p] * self.deaths[p] - frac * k.d[p];
                v[lane] += k.c[p] * frac * (1.0 - frac);
            }
        }
        for p in body..n {
            let frac = y_buf[p] * k.inv_y[p];
            u[0] += k.on[p] * self.deaths[p] - frac * k.d[p];
            v[0] += k.c[p] * frac * (1.0 - frac);
        }
        finish((u[0] + u[1]) + (u[2] + u[3]), (v[0] + v[1]) + (v[2] + v[3]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn loose() -> SplitConstraints {
        SplitConstraints {
            n_min: 1,
            min_events: 0.0,
            alpha: 0.0,
        }
    }

    #[test]
    fn identical_children_score_zero() {
        let outs: Vec<OutcomeCurve> = [1.0, 2.0, 1.0, 2.0].iter().map(|&t| OutcomeCurve::event(t).unwrap()).collect();
        let xs = [[0.0], [0.0], [1.0], [1.0]];
        let rows: Vec<(&[f64], &OutcomeCurve, f64)> = xs.iter().zip(&outs).map(|(x, o)| (&x[..], o, 1.0)).collect();
        let s = logrank_split_score(&rows, 0, 0.5, &loose()).value().unwrap();
        assert!(s.abs() < 1e-15);
    }

    #[test]
    fn infeasible_children_are_not_scored() {
        let outs: Vec<OutcomeCurve> = [1.0, 2.0, 3.0].iter().map(|&t| OutcomeCurve::event(t).unwrap()).collect();
        let xs = [[0.0], [1.0], [2.0]];
        let rows: Vec<(&[f64], &OutcomeCurve, f64)> = xs.iter().zip(&outs).map(|(x, o)| (&x[..], o, 1.0)).collect();
        let strict = SplitConstraints {
            n_min: 2,
            min_events: 0.0,
            alpha: 0.0,
        };
        assert_eq!(logrank_split_score(&rows, 0, 0.5, &strict), SplitScore::Infeasible);
        let massy = SplitConstraints {
            n_min: 1,
            min_events: 2.0,
            alpha: 0.0,
        };
        assert_eq!(logrank_split_score(&rows, 0, 0.5, &massy), SplitScore::Infeasible);
        let regular = SplitConstraints {
            n_min: 1,
            min_events: 0.0,
            alpha: 0.4,
        };
        assert_eq!(logrank_split_score(&rows, 0, 0.5, &regular), SplitScore::Infeasible);
        assert!(logrank_split_score(&rows, 0, 0.5, &loose()).value().is_some());
    }

    #[test]
    fn zero_variance_scores_zero() {
        let outs = vec![OutcomeCurve::censored(1.0).unwrap(), OutcomeCurve::censored(2.0).unwrap()];
        let xs = [[0.0], [1.0]];
        let rows: Vec<(&[f64], &OutcomeCurve, f64)> = xs.iter().zip(&outs).map(|(x, o)| (&x[..], o, 1.0)).collect();
        assert_eq!(logrank_split_score(&rows, 0, 0.5, &loose()), SplitScore::Feasible(0.0));
    }
}
