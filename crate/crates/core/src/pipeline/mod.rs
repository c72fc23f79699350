//! Phantom datasets, experiment orchestration and persistence.

pub mod config;
pub mod experiment;
pub mod io;
pub mod phantom;
pub mod report;

pub use config::ExperimentConfig;
pub use experiment::{
    load_dataset, run_evaluation, run_reconstruction, run_training, sweep_ablation, sweep_table2, Reconstruction,
    Reconstructor, TrainingArtifacts,
};
pub use phantom::{generate_phantoms, Dataset};
pub use report::{ReconstructionReport, ReportRow};
