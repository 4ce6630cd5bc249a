//! End-to-end solve of a trajectory: augment, filter the pivot difference
//! channels, solve every frame.
//!
//! A filtered channel lags its input by the filter's group delay. The fix
//! emitted at frame `k` therefore combines the filtered values available at
//! `k` with the raw measurements of frame `k − delay`, and it describes the
//! transponder at `k − delay`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use super::metrics::{mean_path_error, PathError};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filters::{filter_stream, FilterSpec, FilteredSample};
use crate::geometry::{distance_unchecked, Point, StationArray, Trajectory};
use crate::solvers::linear::{row_station, solve_pivot_rows};
use crate::solvers::{solve_nonlinear_toa, solve_tdoa_pairs, Degeneracy, Fix, LmConfig};
use crate::transform::{augment, AugmentedFrame, PairDiff};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Closed form on the raw frame.
    Linear,
    /// Closed form on filter-corrected measurements.
    LinearFiltered,
    /// As `LinearFiltered`, rows weighted by `1 / var`.
    LinearWeighted,
    /// LM on filtered differences, warm-started from the previous fix.
    NonlinearTdoa,
    /// LM over position and offset on the raw frame, warm-started position,
    /// offset started at the frame's mean `L`.
    NonlinearToa,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Linear,
        Method::LinearFiltered,
        Method::LinearWeighted,
        Method::NonlinearTdoa,
        Method::NonlinearToa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Linear => "linear",
            Method::LinearFiltered => "linear-filtered",
            Method::LinearWeighted => "linear-weighted",
            Method::NonlinearTdoa => "nonlinear-tdoa",
            Method::NonlinearToa => "nonlinear-toa",
        }
    }

    /// Whether the method consumes filtered difference channels.
    pub fn filtered(self) -> bool {
        matches!(
            self,
            Method::LinearFiltered | Method::LinearWeighted | Method::NonlinearTdoa
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub method: Method,
    /// Differencing pivot, also the station whose noise the offset absorbs.
    pub pivot: usize,
    pub filter: FilterSpec,
    /// Replace the moving-average filter by the noise-free differences
    /// computed from ground truth (no delay, no warm-up).
    pub oracle_filter: bool,
    pub lm: LmConfig,
    pub execution: Execution,
}

impl SolveOptions {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            pivot: 0,
            filter: FilterSpec::default(),
            oracle_filter: false,
            lm: LmConfig::default(),
            execution: Execution::Parallel,
        }
    }
}

/// Filter output for every pivot difference channel `L_i − L_pivot`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channels {
    pub pivot: usize,
    /// Station `i` of each channel, ascending, pivot skipped.
    pub stations: Vec<usize>,
    /// `samples[c][k]`: channel `c` at emission frame `k`.
    pub samples: Vec<Vec<FilteredSample>>,
    pub delay: usize,
}

impl Channels {
    pub fn frame_count(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    fn warmup(&self, k: usize) -> bool {
        self.samples.iter().any(|c| c[k].warmup)
    }

    fn outlier(&self, k: usize) -> bool {
        self.samples.iter().any(|c| c[k].outlier)
    }
}

pub fn augment_all(traj: &Trajectory, stations: &StationArray) -> Result<Vec<AugmentedFrame>> {
    traj.frames.iter().map(|f| augment(f, stations)).collect()
}

fn check_pivot(pivot: usize, n: usize) -> Result<()> {
    if pivot >= n {
        return Err(Error::PivotOutOfRange { pivot, stations: n });
    }
    Ok(())
}

/// Runs one filter per pivot channel; channels are independent and may run
/// concurrently, each channel is processed in frame order.
pub fn filter_channels(
    augs: &[AugmentedFrame],
    pivot: usize,
    spec: &FilterSpec,
    exec: Execution,
) -> Result<Channels> {
    spec.validate()?;
    let n = augs.first().ok_or(Error::NoData)?.len();
    check_pivot(pivot, n)?;
    let stations: Vec<usize> = (0..n).filter(|&i| i != pivot).collect();
    let samples = exec
        .map_indexed(stations.len(), |c| {
            let xs: Vec<f64> = augs.iter().map(|a| a.diff(stations[c], pivot)).collect();
            filter_stream(*spec, &xs)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Channels {
        pivot,
        stations,
        samples,
        delay: spec.group_delay(),
    })
}

/// Perfect filter: the noise-free differences of the true path.
pub fn oracle_channels(
    truth: &[Point],
    stations: &StationArray,
    pivot: usize,
    weight_floor: f64,
) -> Result<Channels> {
    check_pivot(pivot, stations.len())?;
    let idx: Vec<usize> = (0..stations.len()).filter(|&i| i != pivot).collect();
    let samples = idx
        .iter()
        .map(|&i| {
            truth
                .iter()
                .enumerate()
                .map(|(k, m)| FilteredSample {
                    frame_index: k,
                    value: distance_unchecked(m, stations.base(i))
                        - distance_unchecked(m, stations.base(pivot)),
                    variance: 0.0,
                    weight: 1.0 / weight_floor,
                    outlier: false,
                    warmup: false,
                })
                .collect()
        })
        .collect();
    Ok(Channels {
        pivot,
        stations: idx,
        samples,
        delay: 0,
    })
}

/// Everything a solve loop needs, prepared once.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub stations: StationArray,
    pub augs: Vec<AugmentedFrame>,
    pub channels: Option<Channels>,
    pub filter_ms: f64,
}

impl Prepared {
    pub fn delay(&self) -> usize {
        self.channels.as_ref().map_or(0, |c| c.delay)
    }
}

/// Augments the frames and, for filtered methods, filters the channels.
pub fn prepare(traj: &Trajectory, stations: &StationArray, opts: &SolveOptions) -> Result<Prepared> {
    if traj.is_empty() {
        return Err(Error::NoData);
    }
    let augs = augment_all(traj, stations)?;
    check_pivot(opts.pivot, stations.len())?;
    let start = Instant::now();
    let channels = if !opts.method.filtered() {
        None
    } else if opts.oracle_filter {
        let truth = traj
            .truth
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("oracle filter needs the true path".into()))?;
        Some(oracle_channels(truth, stations, opts.pivot, opts.filter.weight_floor)?)
    } else {
        Some(filter_channels(&augs, opts.pivot, &opts.filter, opts.execution)?)
    };
    Ok(Prepared {
        stations: stations.clone(),
        augs,
        channels,
        filter_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

const NO_WEIGHTS: Option<fn(usize) -> f64> = None;

fn emitted(mut fix: Fix, k: usize) -> Fix {
    fix.frame_index = k;
    fix
}

/// Solves every frame of a prepared run. Linear methods honour
/// `opts.execution`; the LM methods warm-start from the previous fix and
/// always run in frame order.
pub fn solve_prepared(prep: &Prepared, opts: &SolveOptions) -> Result<Vec<Fix>> {
    let st = &prep.stations;
    let augs = &prep.augs;
    let need_channels = || {
        prep.channels
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("{} needs filtered channels", opts.method)))
    };
    match opts.method {
        Method::Linear => {
            let p = opts.pivot;
            collect(opts.execution.map_indexed(augs.len(), |k| {
                let aug = &augs[k];
                solve_pivot_rows(aug, st, p, |r| aug.diff(row_station(r, p), p), NO_WEIGHTS, &Degeneracy::default())
            }))
        }
        Method::LinearFiltered | Method::LinearWeighted => {
            let ch = need_channels()?;
            let weighted = opts.method == Method::LinearWeighted;
            collect(opts.execution.map_indexed(ch.frame_count(), |k| {
                if ch.warmup(k) {
                    return Ok(Fix::warmup(k));
                }
                let g = k - ch.delay;
                let value = |c: usize| ch.samples[c][k].value;
                let weight = weighted.then_some(|c: usize| ch.samples[c][k].weight);
                solve_pivot_rows(&augs[g], st, ch.pivot, value, weight, &Degeneracy::default())
                    .map(|f| emitted(f, k))
            }))
        }
        Method::NonlinearTdoa => {
            let ch = need_channels()?;
            let mut start = Point::origin(st.dim())?;
            let mut out = Vec::with_capacity(ch.frame_count());
            let mut pairs = Vec::with_capacity(ch.stations.len());
            for k in 0..ch.frame_count() {
                if ch.warmup(k) {
                    out.push(Fix::warmup(k));
                    continue;
                }
                pairs.clear();
                pairs.extend(ch.stations.iter().zip(&ch.samples).map(|(&i, s)| PairDiff {
                    i,
                    j: ch.pivot,
                    value: s[k].value,
                }));
                let fix = solve_tdoa_pairs(k, &pairs, st, &start, &opts.lm)?;
                start = fix.position.unwrap_or(start);
                out.push(fix);
            }
            Ok(out)
        }
        Method::NonlinearToa => {
            let mut start = Point::origin(st.dim())?;
            let mut out = Vec::with_capacity(augs.len());
            for aug in augs {
                let fix = solve_nonlinear_toa(aug, st, &start, aug.mean_value(), &opts.lm)?;
                if fix.converged {
                    start = fix.position.unwrap_or(start);
                }
                out.push(fix);
            }
            Ok(out)
        }
    }
}

fn collect(v: Vec<Result<Fix>>) -> Result<Vec<Fix>> {
    v.into_iter().collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Flags {
    pub warmup: usize,
    pub degenerate: usize,
    pub not_converged: usize,
    /// Emission frames where any channel's variance crossed the threshold.
    pub outlier: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub method: Method,
    pub oracle_filter: bool,
    pub frames: usize,
    pub frames_solved: usize,
    /// Frames by which fixes trail the measurements.
    pub delay_frames: usize,
    pub flags: Flags,
    /// Solve loop only.
    pub wall_clock_ms: f64,
    pub filter_ms: f64,
    /// `None` without ground truth.
    pub mean_path_error: Option<PathError>,
    #[serde(skip)]
    pub fixes: Vec<Fix>,
}

impl RunReport {
    pub fn from_fixes(
        prep: &Prepared,
        opts: &SolveOptions,
        fixes: Vec<Fix>,
        truth: Option<&[Point]>,
        wall_clock_ms: f64,
    ) -> Result<Self> {
        let mut flags = Flags::default();
        let mut solved = 0;
        for f in &fixes {
            if f.warmup {
                flags.warmup += 1;
            } else if f.degenerate {
                flags.degenerate += 1;
            } else if f.is_solved() {
                solved += 1;
                if !f.converged {
                    flags.not_converged += 1;
                }
            }
        }
        if let Some(ch) = &prep.channels {
            flags.outlier = (0..ch.frame_count()).filter(|&k| ch.outlier(k)).count();
        }
        let delay = prep.delay();
        let mean_path_error = match truth {
            Some(t) => match mean_path_error(&fixes, t, delay) {
                Ok(e) => Some(e),
                Err(Error::NoData) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        Ok(Self {
            method: opts.method,
            oracle_filter: opts.oracle_filter && opts.method.filtered(),
            frames: fixes.len(),
            frames_solved: solved,
            delay_frames: delay,
            flags,
            wall_clock_ms,
            filter_ms: prep.filter_ms,
            mean_path_error,
            fixes,
        })
    }
}

/// Prepares, solves and scores one run.
pub fn run(traj: &Trajectory, stations: &StationArray, opts: &SolveOptions) -> Result<RunReport> {
    let prep = prepare(traj, stations, opts)?;
    let start = Instant::now();
    let fixes = solve_prepared(&prep, opts)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    RunReport::from_fixes(&prep, opts, fixes, traj.truth.as_deref(), ms)
}
