//! Experiment presets and the file-driven verification harness.

pub mod compare;
pub mod config;
pub mod presets;
pub mod run;
pub mod thresholds;

pub use compare::{compare_trajectories, CompareReport, Norm};
pub use config::{
    CheckKind, DiagnosticRequest, ExperimentConfig, GridSpec, HarnackCylinder, InitialData,
    InitialSpec, OracleKind, ProbeKind,
};
pub use presets::{preset, PRESET_NAMES};
pub use run::{artifact_root, build_initial, read_summary, run, CheckStatus, RunOutcome, Summary};
