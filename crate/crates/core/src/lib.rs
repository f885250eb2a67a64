//! Multi-stage refinement of binary feature matches.
//!
//! The cascade runs four stages over two sets of 256-bit descriptors:
//!
//! 1. **KNN**: exact 2-nearest-neighbor search in Hamming space ([`knn2_match`]).
//! 2. **TF**: distance-ratio threshold filtering ([`ratio_filter`]).
//! 3. **GMS**: rejection of matches with too little neighborhood support in
//!    both images ([`neighborhood_support`], [`support_filter`]).
//! 4. **PROSAC**: quality-ordered robust homography fitting that keeps only
//!    the consensus set ([`prosac_estimate`]).
//!
//! [`run_pipeline`] chains them and [`metrics`] holds the evaluation
//! quantities and threshold sweeps. [`synth`] builds scenes with a known
//! homography for testing.

pub mod cascade;
pub mod descriptor;
pub mod error;
pub mod homography;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod robust;
pub mod synth;

pub use cascade::{
    default_radius, neighborhood_support, ratio_filter, ratio_filter_tally, support_filter, MatchSet, RatioTally,
    Stage, SupportRecord,
};
pub use descriptor::{hamming_distance, knn2_match, BinaryDescriptor, Correspondence, FeatureSet, Keypoint};
pub use error::{MatchError, Result};
pub use homography::{dlt_homography, dlt_least_squares, transfer_error, Homography};
pub use metrics::{mean_error, repeatability, rmse, sweep_tg, sweep_tw, MetricMode, MetricsReport, SweepRecord};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineRun, Radius};
pub use robust::{
    prosac_estimate, prosac_estimate_traced, quality_order, ransac_estimate, ransac_estimate_traced, HypothesisRecord,
    ProsacMode, QualityOrderedMatches, RobustConfig, RobustEstimate,
};
pub use synth::{generate_scene, ScenePair, SynthConfig};
