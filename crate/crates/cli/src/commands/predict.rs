use std::path::PathBuf;

use serde_json::json;

use super::Context;
use crate::error::{CliError, Result};
use crate::io::{check_schema, create_dir, read_model, read_visits, write_csv, write_manifest};

pub fn run(ctx: &Context) -> Result<()> {
    let block = ctx.cfg.block(&ctx.cfg.predict, "predict")?;
    let model = read_model(&block.model)?;
    let visits = match (&block.visits, &ctx.cfg.data) {
        (Some(v), _) => v.clone(),
        (None, Some(d)) => d.visits.clone(),
        (None, None) => return Err(CliError::Validation("[predict] needs `visits` or a [data] block".into())),
    };
    let tau = model.estimate.plan.tau;
    let data = read_visits(&visits, tau, None)?;
    check_schema(&model, &data)?;
    let table = model.estimate.policy()?;
    let n_actions = model.estimate.registry.n_actions;

    let mut header = vec!["patient_id".to_string(), "k".into(), "action".into()];
    header.extend((0..n_actions).map(|a| format!("criterion_a{a}")));
    let mut rows = Vec::new();
    for t in &data.trajectories {
        for v in &t.visits {
            let (best, _) = table.argmax(&v.history)?;
            let mut r = vec![v.patient.to_string(), v.k.to_string(), best.to_string()];
            for a in 0..n_actions {
                r.push(table.criterion(&v.history, a)?.to_string());
            }
            rows.push(r);
        }
    }
    create_dir(&ctx.out)?;
    let path = PathBuf::from("predictions.csv");
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let n = rows.len();
    write_csv(&ctx.out.join(&path), &header_refs, rows)?;
    println!("{n} visits scored over horizon {tau}");
    write_manifest(&ctx.out, "predict", None, json!({ "tau": tau }), json!({ "visits": n }), &[path])?;
    Ok(())
}
