//! Robust diagram reasoning harness.
//!
//! Perturbed-view generation ([`perturb`]), multi-view inference with
//! consistency voting and self-correction ([`amcv`]), pluggable model
//! backends ([`backend`]), robustness metrics ([`metrics`]) and the dataset
//! and report plumbing around them.

pub mod amcv;
pub mod backend;
pub mod dataset;
pub mod image;
pub mod metrics;
pub mod perturb;
pub mod report;
pub mod rng;

/// Exact rational used for consistency scores and metric ratios.
pub type Fraction = num_rational::Ratio<i64>;

pub use image::{decode_png, encode_png, Image, ImageError};
pub use perturb::{
    apply_perturbation, build_view_plan, IntensityLevel, IntensityTable, PerturbError,
    PerturbationKind, PerturbationSpec, ViewPlan,
};
pub use rng::{derive_stream, Lineage, RandomStream};
