//! Named simulation scenarios.

use alloc::format;
use alloc::vec::Vec;

use super::{default_design, SimConfig, TransitionParams};
use crate::{Error, Result};

pub const PRESET_IDS: [&str; 6] = [
    "10v-mod-300",
    "10v-high-300",
    "10v-mod-500",
    "10v-high-500",
    "15v-mod-500",
    "15v-high-500",
];

/// Three-visit, heavily censored cohort with roughly 15% observed failures,
/// shaped like a claims-data extract.
pub const CLAIMS_PRESET: &str = "claims-418";

/// Slopes shared by all three clocks.
const SLOPES: [f64; 7] = [-0.2, -0.5, -0.025, -0.02, 0.1, -0.08, 0.05];

fn beta(intercept: f64) -> Vec<f64> {
    let mut b = alloc::vec![intercept];
    b.extend_from_slice(&SLOPES);
    b
}

/// Scenario by id: `{10v,15v}-{mod,high}-{300,500}` or [`CLAIMS_PRESET`].
pub fn preset(id: &str) -> Result<SimConfig> {
    // (n, k_max, tau, T, U, C intercepts)
    let (n, k_max, tau, t, u, c) = match id {
        "10v-mod-300" => (300, 10, 1000.0, -5.5, -1.5, -10.5),
        "10v-high-300" => (300, 10, 1000.0, -6.0, -1.5, -6.0),
        "10v-mod-500" => (500, 10, 1000.0, -5.5, -1.5, -12.0),
        "10v-high-500" => (500, 10, 1000.0, -6.0, -1.5, -6.0),
        "15v-mod-500" => (500, 15, 1500.0, -5.5, -1.5, -11.0),
        "15v-high-500" => (500, 15, 1500.0, -6.5, -1.5, -12.0),
        CLAIMS_PRESET => (418, 3, 1000.0, -7.5, -1.5, -6.0),
        _ => return Err(Error::InvalidConfig(format!("unknown preset `{id}`"))),
    };
    Ok(SimConfig {
        n_patients: n,
        k_max,
        tau,
        beta_t: beta(t),
        beta_u: beta(u),
        beta_c: beta(c),
        beta_pi: [0.0, -0.5, -0.5],
        transition: TransitionParams::default(),
        design: default_design(tau),
        seed: 0,
        replicates: 20,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_is_valid() {
        for id in PRESET_IDS {
            preset(id).unwrap().validate().unwrap();
        }
        preset(CLAIMS_PRESET).unwrap().validate().unwrap();
        assert!(preset("20v-low-100").is_err());
    }
}
