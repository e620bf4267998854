//! Exponential-clock generative model for multi-visit survival studies.
//!
//! Each visit draws three competing exponential clocks — failure `T`, next
//! visit `U` and censoring `C` — with log-hazards linear in a declared
//! design vector of the current state, action and visit bookkeeping. Two
//! latent states evolve between visits according to the action taken.

mod presets;

use alloc::string::String;
use alloc::vec::Vec;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use presets::{preset, CLAIMS_PRESET, PRESET_IDS};

use crate::dtr::{Trajectory, VisitRecord};
use crate::forest::{CriterionTable, FeatureRegistry};
use crate::{derive_seed, math, par, Error, Result};

/// Column names of the simulated history, in storage order.
pub const HISTORY_NAMES: [&str; 9] = ["V1", "V2", "n_a0", "n_a1", "G", "X_prev", "S1", "S2", "B"];

/// Positions inside the simulated history vector.
pub mod col {
    pub const V1: usize = 0;
    pub const V2: usize = 1;
    pub const N_A0: usize = 2;
    pub const N_A1: usize = 3;
    pub const G: usize = 4;
    pub const X_PREV: usize = 5;
    pub const S1: usize = 6;
    pub const S2: usize = 7;
    pub const B: usize = 8;
}

/// The feature registry of simulated data: the history columns plus `A`.
pub fn registry() -> FeatureRegistry {
    FeatureRegistry::new(HISTORY_NAMES.iter().map(|s| String::from(*s)).collect(), 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    S1,
    S2,
    A,
    G,
    B,
    XPrev,
}

/// One entry of the design vector: the product of its factors divided by
/// `scale`. No factors gives the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTerm {
    #[serde(default)]
    pub factors: Vec<Covariate>,
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl DesignTerm {
    pub fn new(factors: &[Covariate], scale: f64) -> Self {
        Self {
            factors: factors.to_vec(),
            scale,
        }
    }

    fn eval(&self, history: &[f64], action: usize) -> f64 {
        let mut v = 1.0;
        for f in &self.factors {
            v *= match f {
                Covariate::S1 => history[col::S1],
                Covariate::S2 => history[col::S2],
                Covariate::A => action as f64,
                Covariate::G => history[col::G],
                Covariate::B => history[col::B],
                Covariate::XPrev => history[col::X_PREV],
            };
        }
        v / self.scale
    }
}

/// `(1, S1, S2, A, B, G, X_{k−1}/30, G·B·X_{k−1}/τ²)`.
pub fn default_design(tau: f64) -> Vec<DesignTerm> {
    use Covariate::*;
    alloc::vec![
        DesignTerm::new(&[], 1.0),
        DesignTerm::new(&[S1], 1.0),
        DesignTerm::new(&[S2], 1.0),
        DesignTerm::new(&[A], 1.0),
        DesignTerm::new(&[B], 1.0),
        DesignTerm::new(&[G], 1.0),
        DesignTerm::new(&[XPrev], 30.0),
        DesignTerm::new(&[G, B, XPrev], tau * tau),
    ]
}

/// Between-visit state dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    pub rho: f64,
    pub delta0: f64,
    pub delta1: f64,
    pub g: f64,
    /// Clamp updated states to `[0, 1]`. Off by default: the update is
    /// applied literally.
    #[serde(default)]
    pub clamp: bool,
}

impl Default for TransitionParams {
    fn default() -> Self {
        Self {
            rho: 0.5,
            delta0: 0.0,
            delta1: 1.0,
            g: 1.0,
            clamp: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_patients: usize,
    pub k_max: usize,
    pub tau: f64,
    pub beta_t: Vec<f64>,
    pub beta_u: Vec<f64>,
    pub beta_c: Vec<f64>,
    pub beta_pi: [f64; 3],
    #[serde(default)]
    pub transition: TransitionParams,
    pub design: Vec<DesignTerm>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_replicate")]
    pub replicates: usize,
}

fn one_replicate() -> usize {
    1
}

/// Clock hazards for one visit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hazards {
    pub t: f64,
    pub u: f64,
    pub c: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_patients == 0 {
            return bad("n_patients must be at least 1".into());
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1".into());
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return bad(alloc::format!("tau must be positive and finite, got {}", self.tau));
        }
        let d = self.design.len();
        for (name, beta) in [("beta_t", &self.beta_t), ("beta_u", &self.beta_u), ("beta_c", &self.beta_c)] {
            if beta.len() != d {
                return bad(alloc::format!("{name} has {} entries but the design has {d} terms", beta.len()));
            }
            if beta.iter().any(|b| !b.is_finite()) {
                return bad(alloc::format!("{name} contains a non-finite coefficient"));
            }
        }
        if self.design.iter().any(|t| !t.scale.is_finite() || t.scale == 0.0) {
            return bad("design scales must be finite and nonzero".into());
        }
        if self.beta_pi.iter().any(|b| !b.is_finite()) {
            return bad("beta_pi contains a non-finite coefficient".into());
        }
        let tr = &self.transition;
        if [tr.rho, tr.delta0, tr.delta1, tr.g].iter().any(|v| !v.is_finite()) || !(-1.0..=1.0).contains(&tr.rho) {
            return bad("transition constants must be finite with |rho| <= 1".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        Ok(())
    }

    pub fn design_vector(&self, history: &[f64], action: usize) -> Vec<f64> {
        self.design.iter().map(|t| t.eval(history, action)).collect()
    }

    pub fn hazards(&self, history: &[f64], action: usize) -> Hazards {
        let (mut t, mut u, mut c) = (0.0, 0.0, 0.0);
        for (i, term) in self.design.iter().enumerate() {
            let x = term.eval(history, action);
            t += x * self.beta_t[i];
            u += x * self.beta_u[i];
            c += x * self.beta_c[i];
        }
        Hazards {
            t: math::exp(t),
            u: math::exp(u),
            c: math::exp(c),
        }
    }

    /// Probability that the observed regime treats at this history.
    pub fn propensity(&self, history: &[f64]) -> f64 {
        propensity(history[col::S1], history[col::S2], &self.beta_pi)
    }

    /// Config for replicate `r`, with its own derived seed.
    pub fn replicate(&self, r: usize) -> SimConfig {
        SimConfig {
            seed: derive_seed(self.seed, r as u64),
            ..self.clone()
        }
    }
}

/// `P(A = 1 | S1, S2)` under the logistic propensity model.
pub fn propensity(s1: f64, s2: f64, beta_pi: &[f64; 3]) -> f64 {
    math::sigmoid(beta_pi[0] + beta_pi[1] * s1 + beta_pi[2] * s2)
}

/// State update with an explicit uniform draw `u`:
/// `ρ·s + 1{s > 0.5}(Δ0 − a·Δ1) + 1{s ≤ 0.5}(Δ0² + a·Δ1²) + ½·g·√(1 − ρ²)·u`.
pub fn transition_with(s: f64, a: usize, p: &TransitionParams, u: f64) -> f64 {
    let a = a as f64;
    let shift = if s > 0.5 {
        p.delta0 - a * p.delta1
    } else {
        p.delta0 * p.delta0 + a * p.delta1 * p.delta1
    };
    let next = p.rho * s + shift + 0.5 * p.g * math::sqrt(1.0 - p.rho * p.rho) * u;
    if p.clamp {
        next.clamp(0.0, 1.0)
    } else {
        next
    }
}

/// State update drawing its own uniform.
pub fn transition_state<R: Rng + ?Sized>(s: f64, a: usize, p: &TransitionParams, rng: &mut R) -> f64 {
    transition_with(s, a, p, rng.random::<f64>())
}

fn exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -math::ln(u) / rate
}

/// Outcome of one visit's competing clocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisitDraw {
    pub t: f64,
    pub u: f64,
    pub c: f64,
    pub x: f64,
    pub delta: bool,
    pub gamma: bool,
    /// The visit was cut at the horizon.
    pub administrative: bool,
}

/// Draws `T`, `U`, `C` and derives `X = min(T, U, C)`, `δ = 1{min(T, U) ≤ C}`
/// and `γ = 1{T ≤ U}`. A visit reaching `remaining` (time left before the
/// horizon) is cut there and censored.
pub fn draw_visit<R: Rng + ?Sized>(h: Hazards, remaining: f64, rng: &mut R) -> Result<VisitDraw> {
    for rate in [h.t, h.u, h.c] {
        if !(rate > 0.0) || rate.is_nan() {
            return Err(Error::InvalidConfig(alloc::format!("clock hazard {rate} is not positive")));
        }
    }
    let t = exponential(h.t, rng);
    let u = exponential(h.u, rng);
    let c = exponential(h.c, rng);
    Ok(resolve(t, u, c, remaining))
}

fn resolve(t: f64, u: f64, c: f64, remaining: f64) -> VisitDraw {
    let v = t.min(u);
    let x = v.min(c);
    let gamma = t <= u;
    if x >= remaining {
        return VisitDraw {
            t,
            u,
            c,
            x: remaining,
            delta: false,
            gamma,
            administrative: true,
        };
    }
    VisitDraw {
        t,
        u,
        c,
        x,
        delta: v <= c,
        gamma,
        administrative: false,
    }
}

/// A treatment rule queried once per visit. `u` is the visit's dedicated
/// uniform draw, available to stochastic rules.
pub trait TreatmentPolicy: Sync {
    fn choose(&self, history: &[f64], u: f64) -> Result<usize>;
}

/// The observed (logistic propensity) regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedPolicy {
    pub beta_pi: [f64; 3],
}

impl TreatmentPolicy for ObservedPolicy {
    fn choose(&self, history: &[f64], u: f64) -> Result<usize> {
        Ok((u < propensity(history[col::S1], history[col::S2], &self.beta_pi)) as usize)
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy(pub usize);

impl TreatmentPolicy for ConstantPolicy {
    fn choose(&self, _: &[f64], _: f64) -> Result<usize> {
        Ok(self.0)
    }
}

/// Any deterministic rule given as a closure.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&[f64]) -> usize + Sync> TreatmentPolicy for FnPolicy<F> {
    fn choose(&self, history: &[f64], _: f64) -> Result<usize> {
        Ok((self.0)(history))
    }
}

impl TreatmentPolicy for CriterionTable<'_> {
    fn choose(&self, history: &[f64], _: f64) -> Result<usize> {
        self.argmax(history).map(|(a, _)| a)
    }
}

/// Latent clocks of one simulated visit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentVisit {
    pub patient: u64,
    pub k: usize,
    pub t: f64,
    pub u: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub config: SimConfig,
    pub trajectories: Vec<Trajectory>,
    pub latent: Vec<LatentVisit>,
    pub censoring_rate: f64,
}

impl SimDataset {
    /// Mean of the overall observed time `B_K + X_K`, which is `T ∧ τ` when
    /// censoring is disabled.
    pub fn mean_total_time(&self) -> f64 {
        let n = self.trajectories.len() as f64;
        self.trajectories.iter().map(Trajectory::total_time).sum::<f64>() / n
    }
}

/// Fraction of trajectories whose final visit is censored.
pub fn censoring_rate(trajectories: &[Trajectory]) -> f64 {
    if trajectories.is_empty() {
        return 0.0;
    }
    trajectories.iter().filter(|t| !t.delta()).count() as f64 / trajectories.len() as f64
}

/// Cohort under the observed regime.
pub fn simulate_cohort(config: &SimConfig) -> Result<SimDataset> {
    simulate_under_policy(config, &ObservedPolicy { beta_pi: config.beta_pi }, false)
}

/// Cohort whose actions come from `policy`; with `disable_censoring` the
/// censoring clock never rings (horizon truncation still applies). The
/// random streams are identical across policies, so contrasts between
/// policies use common random numbers.
pub fn simulate_under_policy(config: &SimConfig, policy: &dyn TreatmentPolicy, disable_censoring: bool) -> Result<SimDataset> {
    config.validate()?;
    let patients = par::map_indexed(config.n_patients, |i| simulate_patient(config, policy, disable_censoring, i));
    let mut trajectories = Vec::with_capacity(config.n_patients);
    let mut latent = Vec::new();
    for p in patients {
        let (t, l) = p?;
        trajectories.push(t);
        latent.extend(l);
    }
    let censoring_rate = censoring_rate(&trajectories);
    Ok(SimDataset {
        config: config.clone(),
        trajectories,
        latent,
        censoring_rate,
    })
}

/// RNG stream of patient `i`.
pub fn patient_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn simulate_patient(
    config: &SimConfig,
    policy: &dyn TreatmentPolicy,
    disable_censoring: bool,
    i: usize,
) -> Result<(Trajectory, Vec<LatentVisit>)> {
    let mut rng = patient_rng(config.seed, i);
    let id = i as u64 + 1;
    let mut h = alloc::vec![0.0; HISTORY_NAMES.len()];
    h[col::S1] = rng.random::<f64>();
    h[col::S2] = rng.random::<f64>();
    h[col::V1] = rng.random::<f64>();
    h[col::V2] = rng.random_bool(0.5) as u8 as f64;

    let mut visits = Vec::new();
    let mut latent = Vec::new();
    for k in 1..=config.k_max {
        let u_a = rng.random::<f64>();
        let a = policy.choose(&h, u_a)?;
        if a >= 2 {
            return Err(Error::UnknownAction { action: a, n_actions: 2 });
        }
        let hz = config.hazards(&h, a);
        let t = exponential(hz.t, &mut rng);
        let mut u = exponential(hz.u, &mut rng);
        let mut c = exponential(hz.c, &mut rng);
        if k == config.k_max {
            u = f64::INFINITY;
        }
        if disable_censoring {
            c = f64::INFINITY;
        }
        let u1 = rng.random::<f64>();
        let u2 = rng.random::<f64>();

        let b = h[col::B];
        let d = resolve(t, u, c, config.tau - b);
        latent.push(LatentVisit { patient: id, k, t, u, c });
        visits.push(VisitRecord {
            patient: id,
            k,
            history: h.clone(),
            action: a,
            x: d.x,
            delta: d.delta,
            gamma: d.gamma,
            b,
        });
        if d.administrative || !d.delta || d.gamma {
            break;
        }
        h[col::N_A0 + a] += 1.0;
        h[col::G] += 1.0;
        h[col::X_PREV] = d.x;
        h[col::B] = b + d.x;
        h[col::S1] = transition_with(h[col::S1], a, &config.transition, u1);
        h[col::S2] = transition_with(h[col::S2], a, &config.transition, u2);
    }
    let traj = Trajectory::new(id, visits, config.tau, config.k_max)?;
    Ok((traj, latent))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propensity_values() {
        let b = [0.0, -0.5, -0.5];
        assert_eq!(propensity(0.0, 0.0, &b), 0.5);
        assert!((propensity(1.0, 1.0, &b) - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert_eq!(propensity(0.3, 0.9, &[0.0; 3]), 0.5);
    }

    #[test]
    fn transition_examples() {
        let p = TransitionParams::default();
        let u = 0.37;
        let expected = -0.6 + 0.5 * libm::sqrt(0.75) * u;
        assert!((transition_with(0.8, 1, &p, u) - expected).abs() < 1e-15);
        assert!((transition_with(0.2, 0, &p, 0.0) - 0.1).abs() < 1e-15);
        let diff = transition_with(0.8, 1, &p, u) - transition_with(0.8, 0, &p, u);
        assert!((diff + 1.0).abs() < 1e-15);
        let clamped = TransitionParams { clamp: true, ..p };
        assert_eq!(transition_with(0.8, 1, &clamped, u), 0.0);
    }

    #[test]
    fn resolve_indicators() {
        let d = resolve(1.0, 2.0, 3.0, 100.0);
        assert!(d.delta && d.gamma && d.x == 1.0);
        let d = resolve(2.0, 1.0, 3.0, 100.0);
        assert!(d.delta && !d.gamma);
        let d = resolve(2.0, 3.0, 1.0, 100.0);
        assert!(!d.delta && d.gamma);
        let d = resolve(200.0, 300.0, 400.0, 100.0);
        assert!(!d.delta && d.administrative && d.x == 100.0);
    }

    #[test]
    fn draw_visit_rejects_bad_hazards() {
        let mut rng = patient_rng(1, 0);
        let h = Hazards { t: 0.0, u: 1.0, c: 1.0 };
        assert!(draw_visit(h, 10.0, &mut rng).is_err());
    }

    #[test]
    fn single_visit_cap() {
        let mut cfg = preset("10v-mod-300").unwrap();
        cfg.k_max = 1;
        cfg.n_patients = 200;
        let ds = simulate_cohort(&cfg).unwrap();
        assert!(ds.trajectories.iter().all(|t| t.n_visits() == 1));
    }

    #[test]
    fn deterministic_per_seed() {
        let mut cfg = preset("10v-mod-500").unwrap();
        cfg.n_patients = 50;
        assert_eq!(simulate_cohort(&cfg).unwrap(), simulate_cohort(&cfg).unwrap());
    }
}
