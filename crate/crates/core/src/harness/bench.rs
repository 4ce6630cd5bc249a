//! Linear vs. LM timing on identically filtered data.

use std::time::Instant;

use serde::Serialize;

use super::metrics::{mean_path_error, PathError};
use super::pipeline::{prepare, solve_prepared, Method, Prepared, SolveOptions};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{Point, StationArray, Trajectory};

pub const DEFAULT_REPETITIONS: usize = 5;

#[derive(Debug, Clone, Serialize)]
pub struct MethodTiming {
    pub method: Method,
    pub median_ms: f64,
    pub runs_ms: Vec<f64>,
    pub mean_path_error: Option<PathError>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub frames: usize,
    pub repetitions: usize,
    pub linear: MethodTiming,
    pub nonlinear: MethodTiming,
    /// `linear.median_ms / nonlinear.median_ms`.
    pub time_ratio: f64,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times the solve loop of `opts.method` on already prepared data.
pub fn time_method(
    prep: &Prepared,
    opts: &SolveOptions,
    truth: Option<&[Point]>,
    repetitions: usize,
) -> Result<MethodTiming> {
    let mut runs = Vec::with_capacity(repetitions);
    let mut fixes = Vec::new();
    for _ in 0..repetitions {
        let start = Instant::now();
        fixes = solve_prepared(prep, opts)?;
        runs.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let err = truth
        .map(|t| mean_path_error(&fixes, t, prep.delay()))
        .transpose()?;
    Ok(MethodTiming {
        method: opts.method,
        median_ms: median(&runs),
        runs_ms: runs,
        mean_path_error: err,
    })
}

/// Filters once, then times filtered-linear and LM-TDOA solve loops, both
/// sequential, `repetitions` times each.
pub fn compare(
    traj: &Trajectory,
    stations: &StationArray,
    base: &SolveOptions,
    repetitions: usize,
) -> Result<Comparison> {
    if repetitions == 0 {
        return Err(Error::InvalidInput("need at least one repetition".into()));
    }
    let linear = SolveOptions {
        method: Method::LinearFiltered,
        execution: Execution::Sequential,
        ..*base
    };
    let nonlinear = SolveOptions {
        method: Method::NonlinearTdoa,
        ..linear
    };
    let prep = prepare(traj, stations, &linear)?;
    let truth = traj.truth.as_deref();
    let lin = time_method(&prep, &linear, truth, repetitions)?;
    let nl = time_method(&prep, &nonlinear, truth, repetitions)?;
    Ok(Comparison {
        frames: traj.len(),
        repetitions,
        time_ratio: lin.median_ms / nl.median_ms,
        linear: lin,
        nonlinear: nl,
    })
}
