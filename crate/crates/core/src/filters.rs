//! Streaming pre-lateration filters for offset-free difference channels.
//!
//! Each channel runs `passes` cascaded box (moving-average) filters of odd
//! length `N`, every stage updated in O(1) by dropping the oldest sample and
//! adding the newest. Repeated box passes approach a Gaussian kernel. A
//! sliding variance over the last `variance_window` filtered values flags
//! reflections and supplies least-squares weights `w = 1 / var`.
//!
//! Filter stages start from an all-zero history, so the streaming output is
//! exactly the causal convolution of the input with [`composite_kernel`].
//! Samples produced before the cascade and the variance window are full are
//! marked as warm-up.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the outlier variance threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutlierThreshold {
    /// Absolute threshold in m².
    Fixed { variance_m2: f64 },
    /// `factor` times the running median of the channel's post-warm-up
    /// variances.
    MedianMultiple { factor: f64 },
}

impl Default for OutlierThreshold {
    fn default() -> Self {
        OutlierThreshold::MedianMultiple { factor: 25.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    /// Box length `N`, odd.
    pub window: usize,
    /// Number of cascaded box passes.
    pub passes: usize,
    /// Length of the sliding variance window, odd.
    pub variance_window: usize,
    pub outlier_threshold: OutlierThreshold,
    /// Minimum variance used when forming weights, in m².
    pub weight_floor: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            window: 31,
            passes: 4,
            variance_window: 31,
            outlier_threshold: OutlierThreshold::default(),
            weight_floor: 1e-6,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!(
                "filter window must be odd and positive, got {}",
                self.window
            )));
        }
        if self.variance_window == 0 || self.variance_window.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!(
                "variance window must be odd and positive, got {}",
                self.variance_window
            )));
        }
        if self.passes == 0 {
            return Err(Error::InvalidSpec("passes must be at least 1".into()));
        }
        let threshold_ok = match self.outlier_threshold {
            OutlierThreshold::Fixed { variance_m2 } => variance_m2 > 0.0,
            OutlierThreshold::MedianMultiple { factor } => factor > 0.0,
        };
        if !threshold_ok {
            return Err(Error::InvalidSpec("outlier threshold must be > 0".into()));
        }
        if !(self.weight_floor > 0.0) {
            return Err(Error::InvalidSpec("weight floor must be > 0".into()));
        }
        Ok(())
    }

    /// Group delay of the mean channel in samples: `passes · (N − 1) / 2`.
    pub fn group_delay(&self) -> usize {
        self.passes * (self.window - 1) / 2
    }

    /// Number of initial samples flagged as warm-up.
    pub fn warmup_len(&self) -> usize {
        self.passes * (self.window - 1) + self.variance_window - 1
    }
}

/// Output of one filter update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredSample {
    pub frame_index: usize,
    /// Filtered value, delayed by [`FilterSpec::group_delay`].
    pub value: f64,
    /// Moving variance of the filtered stream (m²).
    pub variance: f64,
    pub weight: f64,
    pub outlier: bool,
    pub warmup: bool,
}

/// One box stage: a ring buffer with a compensated running sum.
#[derive(Debug, Clone)]
struct BoxStage {
    buf: Vec<f64>,
    head: usize,
    sum: f64,
    comp: f64,
}

impl BoxStage {
    fn new(len: usize) -> Self {
        Self {
            buf: vec![0.0; len],
            head: 0,
            sum: 0.0,
            comp: 0.0,
        }
    }

    fn push(&mut self, x: f64) -> f64 {
        let old = std::mem::replace(&mut self.buf[self.head], x);
        self.head = (self.head + 1) % self.buf.len();
        self.add(x);
        self.add(-old);
        (self.sum + self.comp) / self.buf.len() as f64
    }

    // Neumaier summation keeps the running sum from drifting over long streams.
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }
}

/// Sliding population variance with O(1) replace updates.
#[derive(Debug, Clone)]
struct SlidingVariance {
    buf: Vec<f64>,
    head: usize,
    mean: f64,
    m2: f64,
}

impl SlidingVariance {
    fn new(len: usize) -> Self {
        Self {
            buf: vec![0.0; len],
            head: 0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    fn push(&mut self, x: f64) -> f64 {
        let n = self.buf.len() as f64;
        let old = std::mem::replace(&mut self.buf[self.head], x);
        self.head = (self.head + 1) % self.buf.len();
        let old_mean = self.mean;
        self.mean += (x - old) / n;
        self.m2 += (x - old) * (x - self.mean + old - old_mean);
        if self.m2 < 0.0 {
            self.m2 = 0.0;
        }
        self.m2 / n
    }
}

/// Exact running median via two heaps.
#[derive(Debug, Clone, Default)]
struct RunningMedian {
    low: BinaryHeap<OrderedFloat<f64>>,
    high: BinaryHeap<Reverse<OrderedFloat<f64>>>,
}

impl RunningMedian {
    fn insert(&mut self, v: f64) {
        let v = OrderedFloat(v);
        match self.low.peek() {
            Some(&top) if v > top => self.high.push(Reverse(v)),
            _ => self.low.push(v),
        }
        if self.low.len() > self.high.len() + 1 {
            let t = self.low.pop().unwrap();
            self.high.push(Reverse(t));
        } else if self.high.len() > self.low.len() {
            let Reverse(t) = self.high.pop().unwrap();
            self.low.push(t);
        }
    }

    fn median(&self) -> Option<f64> {
        match (self.low.peek(), self.high.peek()) {
            (None, _) => None,
            (Some(l), Some(Reverse(h))) if self.low.len() == self.high.len() => {
                Some(0.5 * (l.0 + h.0))
            }
            (Some(l), _) => Some(l.0),
        }
    }
}

/// Per-channel filter state. Single owner; one instance per channel.
#[derive(Debug, Clone)]
pub struct FilterState {
    spec: FilterSpec,
    stages: Vec<BoxStage>,
    variance: SlidingVariance,
    median: RunningMedian,
    samples_seen: usize,
}

impl FilterState {
    pub fn new(spec: FilterSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            stages: (0..spec.passes).map(|_| BoxStage::new(spec.window)).collect(),
            variance: SlidingVariance::new(spec.variance_window),
            median: RunningMedian::default(),
            samples_seen: 0,
            spec,
        })
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    /// Feeds one sample. Non-finite input is rejected and leaves the state
    /// untouched.
    pub fn push(&mut self, frame_index: usize, x: f64) -> Result<FilteredSample> {
        if !x.is_finite() {
            return Err(Error::NonFinite);
        }
        let value = self.stages.iter_mut().fold(x, |v, stage| stage.push(v));
        let variance = self.variance.push(value);
        self.samples_seen += 1;
        let warmup = self.samples_seen <= self.spec.warmup_len();

        let outlier = if warmup {
            false
        } else {
            let threshold = match self.spec.outlier_threshold {
                OutlierThreshold::Fixed { variance_m2 } => Some(variance_m2),
                OutlierThreshold::MedianMultiple { factor } => {
                    self.median.median().map(|m| factor * m)
                }
            };
            if matches!(
                self.spec.outlier_threshold,
                OutlierThreshold::MedianMultiple { .. }
            ) {
                self.median.insert(variance);
            }
            threshold.is_some_and(|t| variance > t)
        };

        Ok(FilteredSample {
            frame_index,
            value,
            variance,
            weight: 1.0 / variance.max(self.spec.weight_floor),
            outlier,
            warmup,
        })
    }
}

/// Runs a whole channel through a fresh filter.
pub fn filter_stream(spec: FilterSpec, xs: &[f64]) -> Result<Vec<FilteredSample>> {
    let mut state = FilterState::new(spec)?;
    xs.iter()
        .enumerate()
        .map(|(k, &x)| state.push(k, x))
        .collect()
}

/// Effective FIR kernel: the length-`N` box convolved with itself `passes`
/// times. Length `passes · (N − 1) + 1`.
pub fn composite_kernel(spec: &FilterSpec) -> Vec<f64> {
    let n = spec.window.max(1);
    let tap = 1.0 / n as f64;
    let mut kernel = vec![1.0];
    for _ in 0..spec.passes {
        let mut next = vec![0.0; kernel.len() + n - 1];
        for (i, &k) in kernel.iter().enumerate() {
            for slot in &mut next[i..i + n] {
                *slot += k * tap;
            }
        }
        kernel = next;
    }
    kernel
}

/// Least-squares weights `1 / max(var, floor)` for a run of samples.
pub fn weights(samples: &[FilteredSample], weight_floor: f64) -> Vec<f64> {
    samples
        .iter()
        .map(|s| 1.0 / s.variance.max(weight_floor))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn spec(window: usize, passes: usize) -> FilterSpec {
        FilterSpec {
            window,
            passes,
            variance_window: window,
            ..FilterSpec::default()
        }
    }

    // Direct causal convolution, zero history.
    fn convolve(xs: &[f64], kernel: &[f64]) -> Vec<f64> {
        (0..xs.len())
            .map(|k| {
                kernel
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j <= k)
                    .map(|(j, w)| w * xs[k - j])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn validation() {
        assert!(spec(4, 1).validate().is_err());
        assert!(spec(5, 0).validate().is_err());
        let mut s = spec(5, 1);
        s.weight_floor = 0.0;
        assert!(s.validate().is_err());
        s = spec(5, 1);
        s.outlier_threshold = OutlierThreshold::Fixed { variance_m2: 0.0 };
        assert!(s.validate().is_err());
        assert!(FilterSpec::default().validate().is_ok());
    }

    #[test]
    fn kernel_examples() {
        let k = composite_kernel(&spec(3, 1));
        assert_eq!(k.len(), 3);
        for v in &k {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let k = composite_kernel(&spec(3, 2));
        let expected = [1.0, 2.0, 3.0, 2.0, 1.0].map(|v| v / 9.0);
        for (a, b) in k.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn kernel_shape() {
        for (n, p) in [(1, 1), (5, 3), (15, 4), (31, 4)] {
            let k = composite_kernel(&spec(n, p));
            assert_eq!(k.len(), p * (n - 1) + 1);
            assert_abs_diff_eq!(k.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            for i in 0..k.len() {
                assert_abs_diff_eq!(k[i], k[k.len() - 1 - i], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn constant_stream_passes_unchanged() {
        let s = spec(5, 3);
        let out = filter_stream(s, &vec![2.5; 60]).unwrap();
        for o in out.iter().filter(|o| !o.warmup) {
            assert_abs_diff_eq!(o.value, 2.5, epsilon = 1e-12);
            assert_abs_diff_eq!(o.variance, 0.0, epsilon = 1e-20);
        }
        assert_eq!(out.iter().filter(|o| o.warmup).count(), s.warmup_len());
    }

    #[test]
    fn impulse_response_single_pass() {
        let mut xs = vec![0.0; 20];
        xs[3] = 1.0;
        let out = filter_stream(spec(5, 1), &xs).unwrap();
        for (k, o) in out.iter().enumerate() {
            let expected = if (3..8).contains(&k) { 0.2 } else { 0.0 };
            assert_abs_diff_eq!(o.value, expected, epsilon = 1e-15);
        }
        // Centre of the response is the impulse delayed by (N - 1) / 2.
        assert_eq!(spec(5, 1).group_delay(), 2);
    }

    #[test]
    fn step_response_is_monotone_and_matches_kernel() {
        let s = spec(5, 4);
        let xs: Vec<f64> = (0..40).map(|k| if k >= 5 { 1.0 } else { 0.0 }).collect();
        let out: Vec<f64> = filter_stream(s, &xs).unwrap().iter().map(|o| o.value).collect();
        for w in out.windows(2) {
            assert!(w[1] >= w[0] - 1e-15);
        }
        let batch = convolve(&xs, &composite_kernel(&s));
        for (a, b) in out.iter().zip(&batch) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn non_finite_is_rejected_without_touching_state() {
        let mut st = FilterState::new(spec(3, 2)).unwrap();
        st.push(0, 1.0).unwrap();
        let before = st.samples_seen();
        assert!(matches!(st.push(1, f64::NAN), Err(Error::NonFinite)));
        assert!(matches!(st.push(1, f64::INFINITY), Err(Error::NonFinite)));
        assert_eq!(st.samples_seen(), before);
        let a = st.push(1, 1.0).unwrap();
        let b = filter_stream(spec(3, 2), &[1.0, 1.0]).unwrap()[1];
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn weights_examples() {
        let mk = |variance| FilteredSample {
            frame_index: 0,
            value: 0.0,
            variance,
            weight: 0.0,
            outlier: false,
            warmup: false,
        };
        let w = weights(&[mk(1.0), mk(4.0)], 1e-6);
        assert_eq!(w, vec![1.0, 0.25]);
        let w = weights(&[mk(0.0)], 1e-6);
        assert_eq!(w, vec![1e6]);
    }

    #[test]
    fn running_median() {
        let mut m = RunningMedian::default();
        assert_eq!(m.median(), None);
        for (v, expected) in [(5.0, 5.0), (1.0, 3.0), (9.0, 5.0), (2.0, 3.5), (7.0, 5.0)] {
            m.insert(v);
            assert_eq!(m.median(), Some(expected));
        }
    }

    #[test]
    fn fixed_threshold_flags_spike() {
        let mut s = spec(3, 1);
        s.variance_window = 5;
        s.outlier_threshold = OutlierThreshold::Fixed { variance_m2: 0.5 };
        let mut xs = vec![0.0; 40];
        for x in &mut xs[20..24] {
            *x = 10.0;
        }
        let out = filter_stream(s, &xs).unwrap();
        assert!(out[..19].iter().all(|o| !o.outlier));
        assert!(out.iter().any(|o| o.outlier));
        for o in &out {
            if o.outlier {
                assert!(o.variance > 0.5);
                assert!(o.weight < 2.0);
            }
        }
    }

    #[test]
    fn more_passes_approach_gaussian() {
        // Peak-relative L∞ distance to the variance-matched Gaussian shrinks
        // as passes grow (about 3.7% at four passes).
        let dist = |p| {
            let s = spec(15, p);
            let k = composite_kernel(&s);
            let var = p as f64 * (15.0 * 15.0 - 1.0) / 12.0;
            let c = (k.len() - 1) as f64 / 2.0;
            let g: Vec<f64> = (0..k.len())
                .map(|i| (-(i as f64 - c).powi(2) / (2.0 * var)).exp())
                .collect();
            let gs: f64 = g.iter().sum();
            let peak = k.iter().cloned().fold(0.0, f64::max);
            k.iter()
                .zip(&g)
                .map(|(a, b)| (a - b / gs).abs())
                .fold(0.0, f64::max)
                / peak
        };
        let d: Vec<f64> = (2..=8).map(dist).collect();
        for w in d.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(d[2] < 0.04);
    }

    proptest! {
        #[test]
        fn streaming_equals_batch(
            xs in prop::collection::vec(-20.0..20.0f64, 1..200),
            n in prop::sample::select(vec![1usize, 3, 5, 9, 15]),
            p in 1usize..5,
        ) {
            let s = spec(n, p);
            let out = filter_stream(s, &xs).unwrap();
            let batch = convolve(&xs, &composite_kernel(&s));
            for (o, b) in out.iter().zip(&batch) {
                prop_assert!((o.value - b).abs() < 1e-9);
                prop_assert!(o.variance >= 0.0);
                prop_assert!(o.weight > 0.0);
            }
        }

        #[test]
        fn filter_is_linear(
            pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..100),
            a in -3.0..3.0f64,
            b in -3.0..3.0f64,
        ) {
            let s = spec(5, 3);
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let zs: Vec<f64> = pairs.iter().map(|p| a * p.0 + b * p.1).collect();
            let fx = filter_stream(s, &xs).unwrap();
            let fy = filter_stream(s, &ys).unwrap();
            let fz = filter_stream(s, &zs).unwrap();
            for k in 0..xs.len() {
                prop_assert!((fz[k].value - (a * fx[k].value + b * fy[k].value)).abs() < 1e-10);
            }
        }
    }
}
