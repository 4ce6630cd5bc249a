//! Experiment orchestration shared by the command-line tool and the
//! acceptance suite.

pub mod bench;
pub mod figures;
pub mod io;
pub mod metrics;
pub mod pipeline;

pub use metrics::{mean_path_error, PathError};
pub use pipeline::{run, Method, RunReport, SolveOptions};
