use std::path::PathBuf;

use grsf_dtr_core::{derive_seed, Error as CoreError};
use grsf_dtr_core::dtr::{assign_strata, choose_cutpoint, fit_dtr};
use grsf_dtr_core::eval::mc_value;
use grsf_dtr_core::sim::{preset, registry, simulate_cohort, ObservedPolicy, SimConfig};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{fmt_opt, Context};
use crate::config::{Arm, ReproduceBlock};
use crate::error::{CliError, Result};
use crate::io::{create_dir, write_csv, write_json, write_manifest};

/// Replicate count with `--full-scale`.
pub const FULL_SCALE_REPLICATES: usize = 200;

const MC_TAG: u64 = 0x4d43;

#[derive(Debug, Clone, Serialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub cutpoint: Option<f64>,
    pub iterations: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub censoring_rate: f64,
    pub observed: f64,
    pub arms: Vec<ArmResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub arm: String,
    pub method: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Linearly interpolated sample quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(arm: &str, method: &str, values: &[f64]) -> Summary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Summary {
        arm: arm.into(),
        method: method.into(),
        n: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        median: quantile(&v, 0.5),
        q1: quantile(&v, 0.25),
        q3: quantile(&v, 0.75),
    }
}

fn run_replicate(base: &SimConfig, block: &ReproduceBlock, r: usize) -> Result<ReplicateResult> {
    let cfg = base.replicate(r);
    let data = simulate_cohort(&cfg)?;
    let trajs = &data.trajectories;
    let mc_cfg = SimConfig {
        seed: derive_seed(cfg.seed, MC_TAG),
        ..cfg.clone()
    };
    let observed = mc_value(&ObservedPolicy { beta_pi: cfg.beta_pi }, &mc_cfg, block.mc_n)?.value;
    let reg = registry();
    let mut arms = Vec::new();
    for (i, &arm) in block.arms.iter().enumerate() {
        let mut cutpoint = match arm {
            Arm::Single => None,
            Arm::Two => choose_cutpoint(trajs, cfg.tau, block.min_event_share),
        };
        let mut params = block.dtr.clone();
        params.forest.seed = derive_seed(cfg.seed, 1 + i as u64);
        let fit = |cuts: &[f64]| {
            let (plan, labels) = assign_strata(trajs, cfg.tau, cuts)?;
            fit_dtr(trajs, &plan, &labels, &reg, &params)
        };
        let est = match (cutpoint, fit(&cutpoint.into_iter().collect::<Vec<_>>())) {
            (Some(c), Err(CoreError::InsufficientEvents { .. })) => {
                log::warn!("replicate {r}: too few failures to split at {c}; fitting a single stratum");
                cutpoint = None;
                fit(&[])?
            }
            (_, res) => res?,
        };
        let value = mc_value(&est.policy()?, &mc_cfg, block.mc_n)?.value;
        log::info!("replicate {r} arm {}: value {value:.3} vs observed {observed:.3}", arm.label());
        arms.push(ArmResult {
            arm,
            cutpoint,
            iterations: est.total_iterations(),
            value,
        });
    }
    Ok(ReplicateResult {
        replicate: r,
        seed: cfg.seed,
        censoring_rate: data.censoring_rate,
        observed,
        arms,
    })
}

pub fn run(ctx: &Context) -> Result<()> {
    let block = ctx.cfg.block(&ctx.cfg.reproduce, "reproduce")?.clone();
    let seed = ctx
        .seed
        .ok_or_else(|| CliError::Validation("reproduce-sim needs a seed (`seed` in the config or --seed)".into()))?;
    if block.arms.is_empty() {
        return Err(CliError::Validation("[reproduce] `arms` must not be empty".into()));
    }
    if block.mc_n == 0 {
        return Err(CliError::Validation("[reproduce] `mc_n` must be at least 1".into()));
    }
    block.dtr.validate()?;
    let mut base = preset(&block.preset)?;
    base.seed = seed;
    if let Some(n) = block.n_patients {
        base.n_patients = n;
    }
    base.replicates = match (block.replicates, ctx.full_scale) {
        (Some(r), _) => r,
        (None, true) => FULL_SCALE_REPLICATES,
        (None, false) => base.replicates,
    };
    base.validate()?;

    let results = (0..base.replicates)
        .into_par_iter()
        .map(|r| run_replicate(&base, &block, r))
        .collect::<Result<Vec<_>>>()?;

    create_dir(&ctx.out)?;
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    let observed: Vec<f64> = results.iter().map(|r| r.observed).collect();
    for (i, &arm) in block.arms.iter().enumerate() {
        let values: Vec<f64> = results.iter().map(|r| r.arms[i].value).collect();
        summaries.push(summarize(arm.label(), "estimated", &values));
        let path = PathBuf::from(format!("boxplot_{}.csv", arm.label()));
        let rows = results.iter().flat_map(|r| {
            [
                vec![r.replicate.to_string(), "estimated".into(), r.arms[i].value.to_string()],
                vec![r.replicate.to_string(), "observed".into(), r.observed.to_string()],
            ]
        });
        write_csv(&ctx.out.join(&path), &["replicate", "method", "value"], rows)?;
        files.push(path);
    }
    summaries.push(summarize("none", "observed", &observed));

    let path = PathBuf::from("summary.csv");
    write_csv(
        &ctx.out.join(&path),
        &["arm", "method", "n", "mean", "median", "q1", "q3"],
        summaries.iter().map(|s| {
            vec![s.arm.clone(), s.method.clone(), s.n.to_string(), s.mean.to_string(), s.median.to_string(), s.q1.to_string(), s.q3.to_string()]
        }),
    )?;
    files.push(path);

    let mut header = vec!["replicate".to_string(), "seed".into(), "censoring_rate".into(), "observed".into()];
    for arm in &block.arms {
        header.push(format!("value_{}", arm.label()));
        header.push(format!("cutpoint_{}", arm.label()));
        header.push(format!("iterations_{}", arm.label()));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let path = PathBuf::from("replicates.csv");
    write_csv(
        &ctx.out.join(&path),
        &header_refs,
        results.iter().map(|r| {
            let mut row = vec![r.replicate.to_string(), r.seed.to_string(), r.censoring_rate.to_string(), r.observed.to_string()];
            for a in &r.arms {
                row.extend([a.value.to_string(), fmt_opt(a.cutpoint), a.iterations.to_string()]);
            }
            row
        }),
    )?;
    files.push(path);
    let path = PathBuf::from("summary.json");
    write_json(&ctx.out.join(&path), &json!({ "summary": summaries, "replicates": results }), true)?;
    files.push(path);

    println!("{:<8} {:<10} {:>4} {:>10} {:>10} {:>10} {:>10}", "arm", "method", "n", "mean", "median", "q1", "q3");
    for s in &summaries {
        println!(
            "{:<8} {:<10} {:>4} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            s.arm, s.method, s.n, s.mean, s.median, s.q1, s.q3
        );
    }
    for (i, arm) in block.arms.iter().enumerate() {
        let wins = results.iter().filter(|r| r.arms[i].value > r.observed).count();
        println!("{}: estimated beats observed in {wins}/{} replicates", arm.label(), results.len());
    }

    let config = json!({
        "preset": block.preset,
        "replicates": base.replicates,
        "n_patients": base.n_patients,
        "mc_n": block.mc_n,
        "dtr": block.dtr,
        "arms": block.arms,
        "min_event_share": block.min_event_share,
    });
    let summary = serde_json::to_value(&summaries).unwrap_or_default();
    write_manifest(&ctx.out, "reproduce-sim", Some(seed), config, summary, &files)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&[5.0], 0.75), 5.0);
    }
}
