//! Experiment harness around the `mlcsc` library: bundled experiment
//! presets, the pursuit strategies to compare, per-layer result records,
//! and on-disk experiment directories with generate, run, verify and emit
//! stages.

pub mod algorithm;
pub mod preset;
pub mod records;
pub mod workspace;

pub use algorithm::{Algorithm, Overrides};
pub use preset::{ExperimentSpec, Preset};
pub use records::RunRecord;
pub use workspace::VerifyReport;
