use std::path::PathBuf;

use grsf_dtr_core::dtr::{assign_strata, fit_dtr, StrataSpec};
use grsf_dtr_core::Error as CoreError;
use serde_json::json;

use super::{registry_for, Context};
use crate::config::FitBlock;
use crate::error::{CliError, Result};
use crate::io::{create_dir, read_visits, write_csv, write_json, write_manifest, ModelFile, MODEL_FORMAT};

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn run(ctx: &Context) -> Result<()> {
    let data_cfg = ctx.cfg.block(&ctx.cfg.data, "data")?;
    let fit = ctx.cfg.fit.clone().unwrap_or_else(FitBlock::default);
    let data = read_visits(&data_cfg.visits, data_cfg.tau, data_cfg.k_max)?;
    let registry = registry_for(&data);
    let mut params = fit.dtr.clone();
    if let Some(s) = ctx.seed {
        params.forest.seed = s;
    }
    let cutpoints = fit.strata.resolve(&data.trajectories, data_cfg.tau)?;
    let run = |cuts: &[f64]| -> Result<_> {
        let (plan, labels) = assign_strata(&data.trajectories, data_cfg.tau, cuts)?;
        let estimate = fit_dtr(&data.trajectories, &plan, &labels, &registry, &params)?;
        Ok((plan, estimate))
    };
    // an automatic cutpoint can leave a stratum without failing visits
    let (plan, estimate) = match (&fit.strata, run(&cutpoints)) {
        (StrataSpec::Auto { .. }, Err(CliError::Core(CoreError::InsufficientEvents { .. }))) if !cutpoints.is_empty() => {
            log::warn!("too few failures to split at {cutpoints:?}; fitting a single stratum");
            run(&[])?
        }
        (_, res) => res?,
    };

    println!("J = {}", estimate.total_iterations());
    for l in 1..=plan.n_strata() {
        println!("stratum {l}: lower {} horizon {} M = {}", plan.lower(l), plan.horizon(l), plan.m(l));
    }

    create_dir(&ctx.out)?;
    let model_path = PathBuf::from("model.json");
    let log_path = PathBuf::from("iteration_log.csv");
    let log_rows = estimate.iteration_log.iter().map(|e| {
        vec![
            e.j.to_string(),
            e.stratum.to_string(),
            e.iteration.to_string(),
            e.n_rows.to_string(),
            e.n_augmented.to_string(),
            join(&e.visits),
            join(&e.providers),
        ]
    });
    write_csv(
        &ctx.out.join(&log_path),
        &["j", "stratum", "iteration", "n_rows", "n_augmented", "visits", "providers"],
        log_rows,
    )?;
    let summary = json!({
        "J": estimate.total_iterations(),
        "cutpoints": plan.cutpoints,
        "M": (1..=plan.n_strata()).map(|l| plan.m(l)).collect::<Vec<_>>(),
        "baseline_criterion": estimate.baseline_criterion,
    });
    let model = ModelFile {
        format: MODEL_FORMAT.into(),
        k_max: data.k_max,
        estimate,
    };
    write_json(&ctx.out.join(&model_path), &model, false)?;
    let config = json!({ "data": { "tau": data_cfg.tau, "k_max": data.k_max }, "fit": fit, "seed": params.forest.seed });
    write_manifest(&ctx.out, "fit", Some(params.forest.seed), config, summary, &[model_path, log_path])?;
    Ok(())
}
