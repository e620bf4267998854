use std::path::PathBuf;

use grsf_dtr_core::sim::{registry, simulate_cohort};
use rayon::prelude::*;
use serde_json::json;

use super::Context;
use crate::error::Result;
use crate::io::{create_dir, feature_names, write_latent, write_manifest, write_visits};

pub fn run(ctx: &Context) -> Result<()> {
    let sim = ctx.cfg.block(&ctx.cfg.sim, "sim")?.resolve(ctx.seed)?;
    create_dir(&ctx.out)?;
    let features = feature_names(&registry().history)?;
    let reps = (0..sim.replicates)
        .into_par_iter()
        .map(|r| {
            let cfg = sim.replicate(r);
            let data = simulate_cohort(&cfg)?;
            let dir = PathBuf::from(format!("replicate_{r:03}"));
            let visits = dir.join("visits.csv");
            let latent = dir.join("latent.csv");
            write_visits(&ctx.out.join(&visits), &features, &data.trajectories)?;
            write_latent(&ctx.out.join(&latent), &data.latent)?;
            let n_visits: usize = data.trajectories.iter().map(|t| t.n_visits()).sum();
            let summary = json!({
                "replicate": r,
                "seed": cfg.seed,
                "n_patients": cfg.n_patients,
                "censoring_rate": data.censoring_rate,
                "mean_visits": n_visits as f64 / cfg.n_patients as f64,
            });
            Ok((summary, vec![visits, latent]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_rate = reps.iter().map(|(s, _)| s["censoring_rate"].as_f64().unwrap_or(0.0)).sum::<f64>() / reps.len() as f64;
    for (s, _) in &reps {
        println!(
            "replicate {}: {} patients, censoring rate {:.3}",
            s["replicate"], s["n_patients"], s["censoring_rate"].as_f64().unwrap_or(0.0)
        );
    }
    println!("mean censoring rate {mean_rate:.3}");
    let files: Vec<PathBuf> = reps.iter().flat_map(|(_, f)| f.iter().cloned()).collect();
    let summary = json!({
        "mean_censoring_rate": mean_rate,
        "replicates": reps.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>(),
    });
    let config = serde_json::to_value(&sim).unwrap_or_default();
    write_manifest(&ctx.out, "simulate", Some(sim.seed), config, summary, &files)?;
    Ok(())
}
