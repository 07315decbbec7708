//! Contact-angle estimation from segmented 3-D voxel volumes.
//!
//! The crate covers the full workflow: synthetic droplet generation with
//! analytically known angles, small feed-forward regressors trained on
//! spherically masked sub-samples, a chunked prediction pipeline with
//! spatial post-processing, a gradient-based direct-measurement baseline,
//! and the statistics used to interpret angle fields over space and time.
//!
//! Volumes are labeled voxel grids with four phase codes: 0 unused,
//! 1 solid, 2 reference fluid (the phase angles are reported through),
//! 3 other fluid. Heavy loops are data-parallel when the `parallel`
//! feature (default) is enabled; results are bit-identical to the
//! sequential fallback and independent of worker count.

pub mod analysis;
pub mod direct;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod volume;

pub use analysis::{
    angle_stats, correlation_length, interpolate_volumetric, lag_std_curve, r_squared,
    timeseries_report, AnalysisError, CorrelationLength, LagCurve,
};
pub use direct::{gaussian_smooth, measure_direct, measure_direct_at, DirectConfig, DirectError};
pub use nn::{
    build_arch, evaluate, forward, load_weights, save_weights, train, Metrics, ModelSpec, NnError,
    TrainConfig, Weights,
};
pub use pipeline::{
    detect_contact_line, run_pipeline, sample_centers, spatial_correlate, spatial_merge, AngleField,
    Model, PipelineConfig, PipelineError, PredictionPoint,
};
pub use synth::{
    angle_flat, angle_sphere, generate_curved_benchmark, generate_flat_dataset, rasterize_droplet,
    split_dataset, Convexity, DropletSpec, Sample, SynthError,
};
pub use volume::{
    dilate, extract_cube, load_volume, plan_chunks, rotate_volume, save_volume, Cube, ChunkPlan,
    Volume, VolumeError, CANONICAL_BINARIZE,
};
