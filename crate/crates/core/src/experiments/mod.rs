//! Sweeps over data and training settings, with CSV and SVG output.

pub mod config;
pub mod svg;
pub mod sweep;

pub use config::{Eval, ExperimentConfig, FigureId, StepMode};
pub use sweep::{aggregate, run_figure, run_sweep, AggRow, FigureOutput, SweepRow};
