//! Datasets, disjoint tasks, the transfer protocols and their reports.

pub mod glyphs;
pub mod idx;
pub mod protocol;
pub mod report;
pub mod tasks;

pub use glyphs::{write_glyph_dataset, GlyphConfig};
pub use idx::{load_idx_dataset, load_idx_dir, LabeledImages};
pub use protocol::{
    run_protocol, run_scratch, run_sweep, ExperimentConfig, Protocol, ShuffleMode, SourceNet,
    Workbench,
};
pub use report::{
    emit_curves, emit_report, iterations_to_accuracy, ReportFormat, RunReport, Summary, TrialResult,
};
pub use tasks::{default_subsets, make_disjoint_tasks, TaskSpec};
