//! Experiment orchestration: config, per-seed pipeline, sweeps, ablations,
//! reports and graph export.

pub mod config;
pub mod export;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use export::{export_scored_graph, graph_scores, normalize_scores, scored_graph_dot};
pub use report::{sweep_csv, write_run, write_sweep};
pub use run::{
    run_baseline, run_experiment, run_seed, run_with, stage_seed, Detectors, Metric, Perturbation, Resources,
    RunRecord, SeedFailure, SeedOutcome, Stage,
};
pub use sweep::{ablation_configs, run_ablation, run_noise_sweep, run_synonym_sweep, run_synonym_sweep_with, AblationVariant, SweepPoint};
