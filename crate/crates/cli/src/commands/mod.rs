pub mod evaluate;
pub mod fit;
pub mod predict;
pub mod reproduce;
pub mod simulate;

use std::path::PathBuf;

use grsf_dtr_core::forest::FeatureRegistry;

use crate::config::RunConfig;
use crate::io::VisitData;

pub struct Context {
    pub cfg: RunConfig,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub full_scale: bool,
}

/// Registry of loaded data: binary actions unless the data has more.
pub fn registry_for(data: &VisitData) -> FeatureRegistry {
    let max_action = data
        .trajectories
        .iter()
        .flat_map(|t| t.visits.iter().map(|v| v.action))
        .max()
        .unwrap_or(0);
    FeatureRegistry::new(data.history_names(), (max_action + 1).max(2))
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
