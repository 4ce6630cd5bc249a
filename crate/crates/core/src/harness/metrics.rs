//! Path error against ground truth.
//!
//! A fix emitted at frame `k` by a filtered pipeline describes the
//! transponder at frame `k − delay`; pass the pipeline's delay so the
//! comparison is made against the right truth sample.

use serde::Serialize;

use super::pipeline::Channels;
use crate::error::{Error, Result};
use crate::filters::FilterSpec;
use crate::geometry::{distance, Point};
use crate::simulate::OutlierWindow;
use crate::solvers::Fix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathError {
    pub mean_m: f64,
    pub max_m: f64,
    pub included: usize,
    pub excluded_warmup: usize,
    pub excluded_degenerate: usize,
    /// No position, or no truth sample at `k − delay`.
    pub excluded_other: usize,
}

/// Per-fix Euclidean error, `None` where the fix is excluded.
pub fn fix_errors(fixes: &[Fix], truth: &[Point], delay: usize) -> Result<Vec<Option<f64>>> {
    fixes
        .iter()
        .map(|f| {
            if !f.is_solved() {
                return Ok(None);
            }
            let Some(t) = f.frame_index.checked_sub(delay).and_then(|k| truth.get(k)) else {
                return Ok(None);
            };
            distance(&f.position.unwrap(), t).map(Some)
        })
        .collect()
}

/// Mean and maximum error over solved, non-degenerate, post-warm-up fixes.
pub fn mean_path_error(fixes: &[Fix], truth: &[Point], delay: usize) -> Result<PathError> {
    let errors = fix_errors(fixes, truth, delay)?;
    let mut out = PathError {
        mean_m: 0.0,
        max_m: 0.0,
        included: 0,
        excluded_warmup: 0,
        excluded_degenerate: 0,
        excluded_other: 0,
    };
    let mut sum = 0.0;
    for (f, e) in fixes.iter().zip(&errors) {
        match e {
            Some(e) => {
                sum += e;
                out.max_m = out.max_m.max(*e);
                out.included += 1;
            }
            None if f.warmup => out.excluded_warmup += 1,
            None if f.degenerate => out.excluded_degenerate += 1,
            None => out.excluded_other += 1,
        }
    }
    if out.included == 0 {
        return Err(Error::NoData);
    }
    out.mean_m = sum / out.included as f64;
    Ok(out)
}

/// Largest error among included fixes whose emission frame lies in `frames`.
pub fn max_error_in(
    fixes: &[Fix],
    truth: &[Point],
    delay: usize,
    frames: std::ops::RangeInclusive<usize>,
) -> Result<f64> {
    let errors = fix_errors(fixes, truth, delay)?;
    fixes
        .iter()
        .zip(errors)
        .filter(|(f, _)| frames.contains(&f.frame_index))
        .filter_map(|(_, e)| e)
        .reduce(f64::max)
        .ok_or(Error::NoData)
}

/// Variance-detector hit and false-alarm counts for one outlier window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OutlierDetection {
    /// Emission frames in `[start + delay, end + delay]`.
    pub window_frames: usize,
    pub window_flagged: usize,
    /// Post-warm-up frames outside the span the outlier can influence at
    /// all: `[start, end + kernel_len − 1 + variance_window − 1]`.
    pub outside_frames: usize,
    pub outside_flagged: usize,
}

impl OutlierDetection {
    pub fn hit_rate(&self) -> f64 {
        self.window_flagged as f64 / self.window_frames.max(1) as f64
    }

    pub fn false_flag_rate(&self) -> f64 {
        self.outside_flagged as f64 / self.outside_frames.max(1) as f64
    }
}

/// Counts frames flagged on any channel, inside the delayed outlier window
/// and outside its influence span.
pub fn outlier_detection(ch: &Channels, window: &OutlierWindow, spec: &FilterSpec) -> OutlierDetection {
    let kernel_len = spec.passes * (spec.window - 1) + 1;
    let influence = window.start_frame..=window.end_frame + kernel_len - 1 + spec.variance_window - 1;
    let delayed = window.start_frame + ch.delay..=window.end_frame + ch.delay;
    let mut d = OutlierDetection {
        window_frames: 0,
        window_flagged: 0,
        outside_frames: 0,
        outside_flagged: 0,
    };
    for k in 0..ch.frame_count() {
        if ch.samples.iter().any(|c| c[k].warmup) {
            continue;
        }
        let flagged = ch.samples.iter().any(|c| c[k].outlier);
        if delayed.contains(&k) {
            d.window_frames += 1;
            d.window_flagged += usize::from(flagged);
        }
        if !influence.contains(&k) {
            d.outside_frames += 1;
            d.outside_flagged += usize::from(flagged);
        }
    }
    d
}
