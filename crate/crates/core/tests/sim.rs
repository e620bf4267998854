use grsf_dtr_core::eval::mc_value;
use grsf_dtr_core::sim::{
    preset, simulate_cohort, simulate_under_policy, ConstantPolicy, DesignTerm, SimConfig, TransitionParams,
};

/// One visit, intercept-only hazards.
fn exponential_world(rate: f64, tau: f64) -> SimConfig {
    SimConfig {
        n_patients: 1,
        k_max: 1,
        tau,
        beta_t: vec![rate.ln()],
        beta_u: vec![0.0],
        beta_c: vec![-5.0],
        beta_pi: [0.0; 3],
        transition: TransitionParams::default(),
        design: vec![DesignTerm::new(&[], 1.0)],
        seed: 4,
        replicates: 1,
    }
}

#[test]
fn mc_value_matches_truncated_exponential_mean() {
    let (rate, tau) = (1.0 / 500.0, 1000.0);
    let r = mc_value(&ConstantPolicy(0), &exponential_world(rate, tau), 10_000).unwrap();
    let truth = (1.0 - (-rate * tau).exp()) / rate;
    let se = r.std_error.unwrap();
    assert!((r.value - truth).abs() < 3.0 * se, "{} vs {truth} (se {se})", r.value);
}

#[test]
fn mc_value_saturates_at_horizon() {
    let r = mc_value(&ConstantPolicy(1), &exponential_world(1e-12, 100.0), 500).unwrap();
    assert_eq!(r.value, 100.0);
}

#[test]
fn actions_without_effect_give_equal_values() {
    let mut cfg = preset("10v-mod-500").unwrap();
    // remove every action channel
    for beta in [&mut cfg.beta_t, &mut cfg.beta_u, &mut cfg.beta_c] {
        beta[3] = 0.0;
    }
    cfg.transition.delta0 = 0.0;
    cfg.transition.delta1 = 0.0;
    let a = mc_value(&ConstantPolicy(0), &cfg, 10_000).unwrap();
    cfg.seed = 77;
    let b = mc_value(&ConstantPolicy(1), &cfg, 10_000).unwrap();
    let se = (a.std_error.unwrap().powi(2) + b.std_error.unwrap().powi(2)).sqrt();
    assert!((a.value - b.value).abs() < 3.0 * se);
}

#[test]
fn cohorts_are_reproducible_and_valid() {
    let mut cfg = preset("15v-mod-500").unwrap();
    cfg.n_patients = 200;
    cfg.seed = 9;
    let a = simulate_cohort(&cfg).unwrap();
    let b = simulate_cohort(&cfg).unwrap();
    assert_eq!(a, b);
    for t in &a.trajectories {
        t.validate(cfg.tau, cfg.k_max).unwrap();
        assert!(t.total_time() <= cfg.tau);
    }
    cfg.seed = 10;
    assert_ne!(simulate_cohort(&cfg).unwrap().trajectories, a.trajectories);
}

#[test]
fn moderate_preset_censors_about_a_quarter() {
    let mut cfg = preset("10v-mod-500").unwrap();
    cfg.n_patients = 5000;
    let rate = simulate_cohort(&cfg).unwrap().censoring_rate;
    assert!((0.23..=0.33).contains(&rate), "{rate}");
}

#[test]
fn disabled_censoring_leaves_only_horizon_truncation() {
    let mut cfg = preset("10v-high-500").unwrap();
    cfg.n_patients = 500;
    let d = simulate_under_policy(&cfg, &ConstantPolicy(0), true).unwrap();
    for t in &d.trajectories {
        assert!(t.failed() || (t.total_time() - cfg.tau).abs() < 1e-9);
    }
}
