//! Coded interferometric phase retrieval under Poisson photon detection.
//!
//! Group-testing interferometer designs map a complex field to detector
//! intensities. Fields are recovered from Poisson counts by Adam descent on
//! the likelihood, and the exact Fisher information gives the Cramer-Rao
//! bound each design can reach.

// `!(v > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod design;
pub mod error;
pub mod estimate;
pub mod field;
pub mod forward;
pub mod harness;
pub mod multiscale;
pub mod seed;

pub use design::{
    dft_code, holographic_design, normalize_columns, random_group_design, CodeBlock, DesignKind,
    MeasurementDesign,
};
pub use error::{Error, Result};
pub use field::{gauge_align, mse, random_field, ComplexField, ErrorReport, Gauge, GaugeAlignment};
pub use forward::{intensities, sample_counts, DetectionRecord};
pub use multiscale::{build_plan, MultiscalePlan, MultiscaleRecord, Stitched};
pub use harness::{run_multiscale, run_sweep, ExperimentConfig};
pub use estimate::{reconstruct, OptimizerConfig, Reconstruction};
pub use bounds::{fisher, FisherBundle, FisherSummary};
