//! Experiment configs, presets, result files and figures.

pub mod config;
pub mod experiment;
pub mod plot;
pub mod presets;

pub use config::{parse_config, parse_config_str, Arch, ExperimentSpec, Mode, Tuner};
pub use experiment::{
    lr_sweep, read_results, run_experiment, run_suite, ResultStore, RunResult, Status,
};
pub use plot::{emit_plot, PlotKind};
pub use presets::{preset, PRESETS};
