//! Logistic regression by iteratively reweighted least squares and the
//! per-visit propensity models built on it.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dtr::Trajectory;
use crate::{math, Error, Result};

/// Propensity floor; probabilities are kept in `[FLOOR, 1 − FLOOR]`.
pub const PROB_FLOOR: f64 = 0.01;

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;
/// Linear predictors beyond this magnitude signal (quasi-)separation.
const ETA_CAP: f64 = 30.0;
const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Intercept first, then one slope per covariate.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The outcome is (nearly) perfectly separated; coefficients were
    /// capped and probabilities rely on the floor.
    pub separated: bool,
    pub n: usize,
}

impl LogisticFit {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients[0] + self.coefficients[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// Unfloored `P(y = 1 | x)`.
    pub fn prob_raw(&self, x: &[f64]) -> f64 {
        math::sigmoid(self.linear_predictor(x))
    }
}

/// Cholesky factor of a symmetric positive-definite matrix (row-major,
/// `p × p`); `None` if not positive definite.
fn cholesky(a: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = alloc::vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * p + i] = math::sqrt(s);
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..p {
        for k in 0..i {
            y[i] -= l[i * p + k] * y[k];
        }
        y[i] /= l[i * p + i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            y[i] -= l[k * p + i] * y[k];
        }
        y[i] /= l[i * p + i];
    }
    y
}

/// Maximum-likelihood logistic regression of `y` on `x` (intercept added).
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool]) -> Result<LogisticFit> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::EmptySample);
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.len(),
        });
    }
    let p = d + 1;
    let ones = y.iter().filter(|&&v| v).count();
    if ones == 0 || ones == n {
        log::warn!("logistic fit: outcome is constant over {n} rows; using a capped intercept-only model");
        let mut coefficients = alloc::vec![0.0; p];
        coefficients[0] = if ones == 0 { -ETA_CAP } else { ETA_CAP };
        return Ok(LogisticFit {
            coefficients,
            std_errors: alloc::vec![f64::INFINITY; p],
            iterations: 0,
            converged: false,
            separated: true,
            n,
        });
    }

    let row = |i: usize, j: usize| if j == 0 { 1.0 } else { x[i][j - 1] };
    let mut beta = alloc::vec![0.0; p];
    let mean = ones as f64 / n as f64;
    beta[0] = math::ln(mean / (1.0 - mean));
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    let mut info = alloc::vec![0.0; p * p];
    while iterations < MAX_ITER {
        iterations += 1;
        info.iter_mut().for_each(|v| *v = 0.0);
        let mut score = alloc::vec![0.0; p];
        for i in 0..n {
            let eta: f64 = (0..p).map(|j| beta[j] * row(i, j)).sum();
            let mu = math::sigmoid(eta);
            let w = (mu * (1.0 - mu)).max(1e-12);
            let r = (y[i] as u8 as f64) - mu;
            for j in 0..p {
                let xj = row(i, j);
                score[j] += xj * r;
                for k in 0..=j {
                    info[j * p + k] += w * xj * row(i, k);
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                info[k * p + j] = info[j * p + k];
            }
            info[j * p + j] += RIDGE;
        }
        let Some(l) = cholesky(&info, p) else {
            separated = true;
            break;
        };
        let step = cholesky_solve(&l, p, &score);
        let mut max_step: f64 = 0.0;
        for j in 0..p {
            beta[j] += step[j];
            max_step = max_step.max(step[j].abs());
        }
        let max_eta = (0..n)
            .map(|i| (0..p).map(|j| beta[j] * row(i, j)).sum::<f64>().abs())
            .fold(0.0, f64::max);
        if max_eta > ETA_CAP {
            separated = true;
            break;
        }
        if max_step < TOL * (1.0 + beta.iter().map(|b| b.abs()).fold(0.0, f64::max)) {
            converged = true;
            break;
        }
    }
    if separated {
        log::warn!("logistic fit: outcome appears separated; coefficients are capped");
    }
    let std_errors = match cholesky(&info, p) {
        Some(l) => (0..p)
            .map(|j| {
                let mut e = alloc::vec![0.0; p];
                e[j] = 1.0;
                math::sqrt(cholesky_solve(&l, p, &e)[j].max(0.0))
            })
            .collect(),
        None => alloc::vec![f64::INFINITY; p],
    };
    Ok(LogisticFit {
        coefficients: beta,
        std_errors,
        iterations,
        converged,
        separated,
        n,
    })
}

/// One logistic treatment model per visit position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    /// History columns used as covariates.
    pub covariates: Vec<usize>,
    /// Model for visit `k` at `k − 1`; later visits reuse the last one.
    pub per_visit: Vec<LogisticFit>,
}

impl PropensityModel {
    fn select(&self, history: &[f64]) -> Vec<f64> {
        self.covariates.iter().map(|&c| history[c]).collect()
    }

    /// Floored `P(A = 1 | H)` at visit `k`.
    pub fn prob_treated(&self, k: usize, history: &[f64]) -> f64 {
        let m = &self.per_visit[(k.max(1) - 1).min(self.per_visit.len() - 1)];
        m.prob_raw(&self.select(history)).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }

    /// Floored probability of `action` (binary actions).
    pub fn prob(&self, k: usize, history: &[f64], action: usize) -> f64 {
        let p = self.prob_treated(k, history);
        if action == 1 {
            p
        } else {
            1.0 - p
        }
    }

    pub fn any_separated(&self) -> bool {
        self.per_visit.iter().any(|m| m.separated)
    }
}

/// Fits a treatment model at every visit position present in the data.
pub fn fit_propensity(trajectories: &[Trajectory], covariates: &[usize]) -> Result<PropensityModel> {
    let k_max = trajectories.iter().map(Trajectory::n_visits).max().ok_or(Error::EmptySample)?;
    let mut per_visit: Vec<LogisticFit> = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for t in trajectories {
            if let Some(v) = t.visits.get(k - 1) {
                if v.action > 1 {
                    return Err(Error::UnknownAction {
                        action: v.action,
                        n_actions: 2,
                    });
                }
                x.push(covariates.iter().map(|&c| v.history[c]).collect());
                y.push(v.action == 1);
            }
        }
        per_visit.push(fit_logistic(&x, &y)?);
    }
    Ok(PropensityModel {
        covariates: covariates.to_vec(),
        per_visit,
    })
}
