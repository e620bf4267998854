//! Generalized random survival forests and indefinite-horizon dynamic
//! treatment regimes for right-censored survival outcomes.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature. The `parallel` feature grows trees and simulates patients on
//! the rayon thread pool; results are identical with or without it.
//!
//! Module map:
//!
//! - [`curve`] and [`km`]: step survival curves, the restricted-mean
//!   criterion, the product-limit estimator over curve-valued outcomes and
//!   its estimating-equation residual.
//! - [`forest`]: log-rank split search, α-regular random-split trees, the
//!   ensemble and criterion-argmax policies.
//! - [`dtr`]: visit records, strata, and the backward-recursive fit.
//! - [`sim`]: the exponential-clock generative model used for simulation
//!   studies.
//! - [`eval`]: Monte-Carlo and IPCW value estimation, propensity and
//!   censoring models, cross-validation.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod curve;
pub mod dtr;
mod error;
pub mod eval;
pub mod forest;
pub mod km;
mod math;
mod par;
pub mod sim;

pub use curve::{restricted_mean, shift_augment, Horizon, OutcomeCurve, OutcomeKind, StepSurvivalCurve};
pub use error::{Error, Result};
pub use km::{modified_km, psi_residual};

/// Derives an independent 64-bit seed from a master seed and a stream tag.
///
/// SplitMix64 finalizer over the pair; used wherever a sub-component (tree,
/// stratum, replicate, fold) needs its own reproducible stream.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
