use grsf_dtr_core::forest::{fit_forest, logrank_split_score, FeatureRegistry, ForestParams, Node, SplitConstraints, TrainingRow};
use grsf_dtr_core::{shift_augment, OutcomeCurve, StepSurvivalCurve};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loose() -> SplitConstraints {
    SplitConstraints {
        n_min: 1,
        min_events: 0.0,
        alpha: 0.0,
    }
}

/// Two-sample log-rank chi-square from risk-set counts.
fn textbook_logrank(data: &[(f64, bool, bool)]) -> f64 {
    let mut times: Vec<f64> = data.iter().filter(|d| d.1).map(|d| d.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let (mut o_minus_e, mut var) = (0.0, 0.0);
    for t in times {
        let n = data.iter().filter(|d| d.0 >= t).count() as f64;
        let n1 = data.iter().filter(|d| d.2 && d.0 >= t).count() as f64;
        let d = data.iter().filter(|d| d.1 && d.0 == t).count() as f64;
        let d1 = data.iter().filter(|d| d.2 && d.1 && d.0 == t).count() as f64;
        if n < 2.0 {
            continue;
        }
        o_minus_e += d1 - d * n1 / n;
        var += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
    }
    if var > 0.0 {
        o_minus_e * o_minus_e / var
    } else {
        0.0
    }
}

#[test]
fn indicator_split_score_is_the_logrank_statistic() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let n = rng.random_range(4..40);
        let data: Vec<(f64, bool, bool)> = (0..n)
            .map(|_| (rng.random_range(1..=10) as f64, rng.random_bool(0.7), rng.random_bool(0.5)))
            .collect();
        if data.iter().all(|d| d.2) || data.iter().all(|d| !d.2) {
            continue;
        }
        let xs: Vec<[f64; 1]> = data.iter().map(|d| [if d.2 { 0.0 } else { 1.0 }]).collect();
        let outs: Vec<OutcomeCurve> = data
            .iter()
            .map(|d| if d.1 { OutcomeCurve::event(d.0) } else { OutcomeCurve::censored(d.0) }.unwrap())
            .collect();
        let rows: Vec<(&[f64], &OutcomeCurve, f64)> = xs.iter().zip(&outs).map(|(x, o)| (&x[..], o, 1.0)).collect();
        let ours = logrank_split_score(&rows, 0, 0.5, &loose()).value().unwrap();
        let oracle = textbook_logrank(&data);
        assert!((ours - oracle).abs() <= 1e-9 * (1.0 + oracle), "{ours} vs {oracle}");
    }
}

fn random_outcome(rng: &mut ChaCha8Rng) -> OutcomeCurve {
    let x = rng.random_range(1..=30) as f64 * 0.25;
    match rng.random_range(0..3) {
        0 => OutcomeCurve::event(x).unwrap(),
        1 => OutcomeCurve::censored(x).unwrap(),
        _ => {
            let k = rng.random_range(1..4);
            let mut ts: Vec<f64> = (0..k).map(|_| rng.random_range(1..=12) as f64 * 0.25).collect();
            ts.sort_by(f64::total_cmp);
            ts.dedup();
            let mut v = 1.0;
            let vs = ts.iter().map(|_| {
                v *= rng.random_range(0.1..0.9);
                v
            });
            let c = StepSurvivalCurve::new(ts.clone(), vs.collect()).unwrap();
            shift_augment(&c, x, None).unwrap()
        }
    }
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<TrainingRow> {
    (0..n)
        .map(|_| TrainingRow {
            features: (0..d).map(|_| rng.random_range(0.0..1.0)).collect(),
            outcome: random_outcome(rng),
            weight: rng.random_range(0.5..2.0),
        })
        .collect()
}

/// With every feature a candidate, all distinct values as cuts and the
/// whole sample at the root, the root split must be the best split found by
/// direct evaluation.
#[test]
fn root_split_maximizes_direct_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let registry = FeatureRegistry::new(vec!["x0".into(), "x1".into()], 2);
    for trial in 0..40 {
        let mut rows = random_rows(&mut rng, 30, 3);
        for r in &mut rows {
            r.features[2] = rng.random_range(0..2) as f64;
        }
        let params = ForestParams {
            n_trees: 1,
            n_min: 3,
            min_events: 1.0,
            alpha: 0.1,
            split_rand: 1e-12,
            mtry: Some(3),
            subsample: 1.0,
            seed: trial,
            ..ForestParams::default()
        };
        let model = match fit_forest(&rows, &registry, &params) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let view: Vec<(&[f64], &OutcomeCurve, f64)> =
            rows.iter().map(|r| (&r.features[..], &r.outcome, r.weight)).collect();
        let c = params.constraints();
        let mut best = f64::NEG_INFINITY;
        for f in 0..3 {
            for r in &rows {
                if let Some(s) = logrank_split_score(&view, f, r.features[f], &c).value() {
                    best = best.max(s);
                }
            }
        }
        match &model.trees[0].nodes[0] {
            Node::Internal { feature, cut, .. } => {
                let s = logrank_split_score(&view, *feature, *cut, &c).value().unwrap();
                assert!((s - best).abs() <= 1e-9 * (1.0 + best), "trial {trial}: root {s} vs best {best}");
            }
            Node::Terminal { .. } => assert_eq!(best, f64::NEG_INFINITY, "trial {trial}: feasible split missed"),
        }
    }
}

#[test]
fn fitted_trees_pass_audits_and_route_their_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let registry = FeatureRegistry::new((0..4).map(|i| format!("x{i}")).collect(), 2);
    for (n_min, alpha, min_events, subsample) in [(5, 0.1, 2.0, 0.632), (10, 0.25, 3.0, 1.0), (2, 0.05, 1.0, 1.0)] {
        let rows = random_rows(&mut rng, 200, 5);
        let params = ForestParams {
            n_trees: 20,
            n_min,
            alpha,
            min_events,
            subsample,
            seed: 3,
            ..ForestParams::default()
        };
        let model = fit_forest(&rows, &registry, &params).unwrap();
        let feats: Vec<&[f64]> = rows.iter().map(|r| &r.features[..]).collect();
        for t in &model.trees {
            t.audit(&params.constraints()).unwrap();
            if subsample == 1.0 {
                t.audit_routing(&feats).unwrap();
            }
        }
    }
}

#[test]
fn identical_seeds_give_identical_forests() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let registry = FeatureRegistry::new(vec!["x0".into(), "x1".into()], 2);
    let rows = random_rows(&mut rng, 80, 3);
    let params = ForestParams {
        n_trees: 10,
        seed: 99,
        ..ForestParams::default()
    };
    let a = fit_forest(&rows, &registry, &params).unwrap();
    let b = fit_forest(&rows, &registry, &params).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unsplit_tree_leaf_is_the_modified_km_of_its_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let registry = FeatureRegistry::new(vec!["x0".into(), "x1".into()], 2);
    for _ in 0..20 {
        let rows = random_rows(&mut rng, 25, 3);
        let params = ForestParams {
            n_trees: 1,
            n_min: 25,
            min_events: 0.0,
            subsample: 1.0,
            ..ForestParams::default()
        };
        let model = fit_forest(&rows, &registry, &params).unwrap();
        let leaf = model.trees[0].leaf_curve(&rows[0].features);
        let obs: Vec<(OutcomeCurve, f64)> = rows.iter().map(|r| (r.outcome.clone(), r.weight)).collect();
        let km = grsf_dtr_core::modified_km(&obs).unwrap();
        for i in 0..=60 {
            let t = i as f64 * 0.25;
            assert!((leaf.eval(t) - km.eval(t)).abs() < 1e-12, "t = {t}");
        }
    }
}
