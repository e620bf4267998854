use std::path::PathBuf;

use grsf_dtr_core::eval::{
    cross_validate, fit_censoring, fit_propensity, ipcw_value, mc_value, observed_value, trees_sweep, CvParams,
    FittedNuisance,
};
use grsf_dtr_core::forest::{FeatureRegistry, ForestParams};
use grsf_dtr_core::sim::ObservedPolicy;
use serde_json::json;

use super::{fmt_opt, registry_for, Context};
use crate::config::EvaluateBlock;
use crate::error::{CliError, Result};
use crate::io::{check_schema, create_dir, read_model, read_visits, write_csv, write_json, write_manifest, VisitData};

fn covariates(names: &Option<Vec<String>>, registry: &FeatureRegistry) -> Result<Vec<usize>> {
    match names {
        None => Ok((0..registry.history_dim()).collect()),
        Some(names) => names
            .iter()
            .map(|n| {
                registry
                    .position(n)
                    .filter(|&p| p < registry.history_dim())
                    .ok_or_else(|| CliError::Validation(format!("unknown propensity covariate `{n}`")))
            })
            .collect(),
    }
}

fn load_data(ctx: &Context) -> Result<(VisitData, f64)> {
    let d = ctx.cfg.block(&ctx.cfg.data, "data")?;
    Ok((read_visits(&d.visits, d.tau, d.k_max)?, d.tau))
}

pub fn run(ctx: &Context) -> Result<()> {
    let ev = ctx.cfg.evaluate.clone().unwrap_or_else(EvaluateBlock::default);
    if ev.mc.is_none() && ev.test.is_none() && ev.cv.is_none() {
        return Err(CliError::Validation("[evaluate] needs at least one of `mc`, `test` or `cv`".into()));
    }
    if ev.trees.is_some() && ev.cv.is_none() {
        return Err(CliError::Validation("[evaluate] `trees` requires a `cv` block".into()));
    }
    create_dir(&ctx.out)?;
    let mut files: Vec<PathBuf> = Vec::new();
    let mut summary = serde_json::Map::new();

    if let Some(mc) = &ev.mc {
        let model_path = ev.model.as_ref().ok_or_else(|| CliError::Validation("`mc` evaluation needs `model`".into()))?;
        let model = read_model(model_path)?;
        let sim = ctx.cfg.block(&ctx.cfg.sim, "sim")?.resolve(ctx.seed)?;
        if model.estimate.registry.history != grsf_dtr_core::sim::registry().history {
            return Err(CliError::Validation("the model was not fitted on simulated histories".into()));
        }
        let policy = model.estimate.policy()?;
        let mut rows = Vec::new();
        let (mut est_sum, mut obs_sum) = (0.0, 0.0);
        for r in 0..sim.replicates {
            let cfg = sim.replicate(r);
            let est = mc_value(&policy, &cfg, mc.n)?;
            let obs = mc_value(&ObservedPolicy { beta_pi: cfg.beta_pi }, &cfg, mc.n)?;
            est_sum += est.value;
            obs_sum += obs.value;
            rows.push(vec![r.to_string(), "estimated".into(), est.value.to_string()]);
            rows.push(vec![r.to_string(), "observed".into(), obs.value.to_string()]);
        }
        let n = sim.replicates as f64;
        println!("Monte-Carlo value: estimated {:.3}, observed {:.3}", est_sum / n, obs_sum / n);
        let path = PathBuf::from("boxplot.csv");
        write_csv(&ctx.out.join(&path), &["replicate", "method", "value"], rows)?;
        files.push(path);
        summary.insert("mc".into(), json!({ "estimated": est_sum / n, "observed": obs_sum / n, "n": mc.n, "replicates": sim.replicates }));
    }

    if let Some(test_path) = &ev.test {
        let model_path = ev.model.as_ref().ok_or_else(|| CliError::Validation("`test` evaluation needs `model`".into()))?;
        let model = read_model(model_path)?;
        let (train, tau) = load_data(ctx)?;
        let test = read_visits(test_path, tau, Some(train.k_max))?;
        check_schema(&model, &train)?;
        check_schema(&model, &test)?;
        let registry = registry_for(&train);
        let cens = ForestParams {
            seed: ctx.seed.unwrap_or(0),
            ..ForestParams::default()
        };
        let nuisance = FittedNuisance {
            propensity: fit_propensity(&train.trajectories, &covariates(&ev.propensity_covariates, &registry)?)?,
            censoring: fit_censoring(&train.trajectories, &registry, &cens, tau)?,
        };
        let policy = model.estimate.policy()?;
        let mut est = ipcw_value(&test.trajectories, &policy, &nuisance, tau, train.k_max)?;
        let mut obs = observed_value(&test.trajectories, &nuisance, tau, train.k_max)?;
        let echo = Some(format!("model={} test={}", model_path.display(), test_path.display()));
        est.config = echo.clone();
        obs.config = echo;
        println!("IPCW value: estimated {:.3}, observed {:.3}", est.value, obs.value);
        let path = PathBuf::from("ipcw_report.json");
        write_json(&ctx.out.join(&path), &json!({ "estimated": est, "observed": obs }), true)?;
        files.push(path);
        summary.insert("ipcw".into(), json!({ "estimated": est.value, "observed": obs.value }));
    }

    if let Some(cv) = &ev.cv {
        let (data, tau) = load_data(ctx)?;
        let registry = registry_for(&data);
        let mut params: CvParams = cv.clone();
        if let Some(s) = ctx.seed {
            params.seed = s;
        }
        if params.propensity_covariates.is_none() {
            params.propensity_covariates = Some(covariates(&ev.propensity_covariates, &registry)?);
        }
        let mut report = cross_validate(&data.trajectories, &registry, tau, data.k_max, &params)?;
        report.estimated.config = Some(serde_json::to_string(&params).unwrap_or_default());
        let rows = report.folds.iter().map(|f| {
            let mut r = vec![f.fold.to_string(), f.n_train.to_string(), f.n_test.to_string(), fmt_opt(f.estimated), fmt_opt(f.observed)];
            r.extend(f.constant.iter().map(|v| fmt_opt(*v)));
            r.push(f.nonzero_weights.map(|n| n.to_string()).unwrap_or_default());
            r.push(fmt_opt(f.max_weight_share));
            r.push(f.skipped.clone().unwrap_or_default());
            r
        });
        let mut header: Vec<String> = ["fold", "n_train", "n_test", "estimated", "observed"].map(String::from).to_vec();
        header.extend((0..registry.n_actions).map(|a| format!("constant_a{a}")));
        header.extend(["nonzero_weights", "max_weight_share", "skipped"].map(String::from));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let folds_path = PathBuf::from("cv_folds.csv");
        write_csv(&ctx.out.join(&folds_path), &header_refs, rows)?;
        let report_path = PathBuf::from("cv_report.json");
        write_json(&ctx.out.join(&report_path), &report, true)?;
        files.extend([folds_path, report_path]);
        println!(
            "cross-validated value: estimated {:.3} over {} folds, observed {}, zero-order {}",
            report.estimated.value,
            report.estimated.per_fold.len(),
            report.observed.as_ref().map(|o| format!("{:.3}", o.value)).unwrap_or_else(|| "n/a".into()),
            report
                .zero_order
                .as_ref()
                .map(|z| format!("{:.3} (action {})", z.value, z.action))
                .unwrap_or_else(|| "n/a".into())
        );
        summary.insert("cv".into(), json!({ "estimated": report.estimated.value, "observed": report.observed.map(|o| o.value), "zero_order": report.zero_order }));

        if let Some(trees) = &ev.trees {
            let sweep = trees_sweep(&data.trajectories, &registry, tau, data.k_max, &params, trees)?;
            let path = PathBuf::from("trees_sweep.csv");
            write_csv(
                &ctx.out.join(&path),
                &["n_trees", "value"],
                sweep.iter().map(|p| vec![p.n_trees.to_string(), p.estimated.to_string()]),
            )?;
            for p in &sweep {
                println!("n_trees {:>4}: value {:.3}", p.n_trees, p.estimated);
            }
            files.push(path);
            summary.insert("trees_sweep".into(), serde_json::to_value(&sweep).unwrap_or_default());
        }
    }

    let config = serde_json::to_value(&ev).unwrap_or_default();
    write_manifest(&ctx.out, "evaluate", ctx.seed, config, serde_json::Value::Object(summary), &files)?;
    Ok(())
}
