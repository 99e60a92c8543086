//! Scan ingestion, synthetic scenes, the end-to-end forward pass and the
//! scaling benchmark.

mod bench;
mod config;
mod forward;
mod kitti;
mod synth;

pub use bench::{bench, bench_cloud, fit_slope, BenchConfig, BenchRow, ScalingTable, BENCH_DENSITY};
pub use config::PipelineConfig;
pub use forward::{
    run_forward, ForwardOutput, ModelWeights, Proposal, RefinedProposal, StageTiming, TimingReport, PROPOSAL_OUTPUTS,
};
pub use kitti::{read_kitti_bin, write_kitti_bin, RECORD_BYTES};
pub use synth::{synth_scene, GROUND_Z};
