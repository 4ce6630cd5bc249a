//! Synthetic scenarios: station layout, transponder path, per-frame clock
//! offsets, measurement noise and reflection outliers.
//!
//! Random draws come from a single `ChaCha8Rng` seeded with
//! [`ScenarioSpec::seed`]. For every frame, in order:
//!
//! 1. the offset: `lo + (hi − lo) · u` with `u` uniform in `[0, 1)` for
//!    [`OffsetModel::PerFrameUniform`] (no draw for [`OffsetModel::Fixed`]);
//! 2. one noise draw per station, in station order: `max_abs · (2u − 1)` for
//!    [`NoiseModel::Uniform`], `sigma · z` with `z` from `rand_distr`'s
//!    `StandardNormal` for [`NoiseModel::Gaussian`].
//!
//! Outlier magnitudes are then added to the designated station for every
//! frame in `start_frame..=end_frame`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::FilterSpec;
use crate::geometry::{forward_pseudo_range, Point, StationArray, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    Uniform { max_abs: f64 },
    Gaussian { sigma: f64 },
}

impl NoiseModel {
    /// Variance of a single draw, m².
    pub fn variance(&self) -> f64 {
        match *self {
            NoiseModel::Uniform { max_abs } => max_abs * max_abs / 3.0,
            NoiseModel::Gaussian { sigma } => sigma * sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OffsetModel {
    Fixed { value: f64 },
    PerFrameUniform { lo: f64, hi: f64 },
}

/// Additive bias on one station's pseudo-range over an inclusive frame range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierWindow {
    pub start_frame: usize,
    pub end_frame: usize,
    pub station_index: usize,
    pub magnitude_m: f64,
}

impl OutlierWindow {
    pub fn contains(&self, frame: usize) -> bool {
        (self.start_frame..=self.end_frame).contains(&frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub dimension: usize,
    pub station_count: usize,
    pub station_radius: f64,
    pub path_radius: f64,
    pub frame_count: usize,
    pub noise_model: NoiseModel,
    pub offset_model: OffsetModel,
    pub outlier_windows: Vec<OutlierWindow>,
    pub seed: u64,
    /// Explicit base-station coordinates; overrides the circular layout
    /// (and `station_count`) when present. The reference stays at the origin.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stations: Option<Vec<Point>>,
    pub filter: FilterSpec,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            dimension: 2,
            station_count: 4,
            station_radius: 10.0,
            path_radius: 5.0,
            frame_count: 10_000,
            noise_model: NoiseModel::Uniform { max_abs: 0.1 },
            offset_model: OffsetModel::PerFrameUniform { lo: 1e6, hi: 1e7 },
            outlier_windows: Vec::new(),
            seed: 0,
            stations: None,
            filter: FilterSpec::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Effective number of base stations.
    pub fn n_stations(&self) -> usize {
        self.stations
            .as_ref()
            .map_or(self.station_count, |s| s.len())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.dimension != 2 && self.dimension != 3 {
            return bad(format!("dimension must be 2 or 3, got {}", self.dimension));
        }
        if self.n_stations() < 3 {
            return bad(format!("need at least 3 stations, got {}", self.n_stations()));
        }
        if let Some(st) = &self.stations {
            if st.iter().any(|p| p.dim() != self.dimension) {
                return bad("explicit station dimension differs from scenario".into());
            }
        } else if !(self.station_radius > 0.0) {
            return bad("station_radius must be positive".into());
        }
        if !(self.path_radius >= 0.0) {
            return bad("path_radius must be non-negative".into());
        }
        if self.stations.is_none() && self.path_radius >= self.station_radius {
            return bad("path_radius must be smaller than station_radius".into());
        }
        if self.frame_count == 0 {
            return bad("frame_count must be positive".into());
        }
        match self.noise_model {
            NoiseModel::Uniform { max_abs: v } | NoiseModel::Gaussian { sigma: v }
                if !(v >= 0.0 && v.is_finite()) =>
            {
                return bad("noise scale must be finite and non-negative".into());
            }
            _ => {}
        }
        match self.offset_model {
            OffsetModel::Fixed { value } if !value.is_finite() => {
                return bad("offset must be finite".into());
            }
            OffsetModel::PerFrameUniform { lo, hi } if !(lo <= hi && lo.is_finite() && hi.is_finite()) => {
                return bad("offset range must satisfy lo <= hi".into());
            }
            _ => {}
        }
        for w in &self.outlier_windows {
            if w.start_frame > w.end_frame || w.end_frame >= self.frame_count {
                return bad(format!(
                    "outlier window {}..={} outside 0..{}",
                    w.start_frame, w.end_frame, self.frame_count
                ));
            }
            if w.station_index >= self.n_stations() {
                return bad(format!("outlier station {} out of range", w.station_index));
            }
        }
        self.filter.validate()
    }
}

/// Base stations for the scenario and a reference station at the origin.
///
/// 2-D: equal angular spacing on a circle of `station_radius`, first station
/// on the +x axis. 3-D: a Fibonacci lattice on the sphere of the same radius.
pub fn build_stations(spec: &ScenarioSpec) -> Result<StationArray> {
    if spec.n_stations() < 3 {
        return Err(Error::InvalidSpec(format!(
            "need at least 3 stations, got {}",
            spec.n_stations()
        )));
    }
    let reference = Point::origin(spec.dimension).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    if let Some(st) = &spec.stations {
        return StationArray::new(st.clone(), reference);
    }
    let n = spec.station_count;
    let r = spec.station_radius;
    let bases = match spec.dimension {
        2 => (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                Point::new2(r * a.cos(), r * a.sin())
            })
            .collect(),
        _ => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let a = golden * i as f64;
                    Point::new3(r * rho * a.cos(), r * rho * a.sin(), r * z)
                })
                .collect()
        }
    };
    StationArray::new(bases, reference)
}

/// Transponder positions: frame `k` at angle `2πk / frame_count` on a circle of
/// `path_radius` about the reference station (in the x-y plane for 3-D).
pub fn circular_path(spec: &ScenarioSpec) -> Vec<Point> {
    let n = spec.frame_count;
    let r = spec.path_radius;
    (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            let (x, y) = (r * a.cos(), r * a.sin());
            if spec.dimension == 3 {
                Point::new3(x, y, 0.0)
            } else {
                Point::new2(x, y)
            }
        })
        .collect()
}

/// Generates the full synthetic trajectory. Deterministic in `spec`.
pub fn synthesize(spec: &ScenarioSpec) -> Result<Trajectory> {
    spec.validate()?;
    let stations = build_stations(spec)?;
    let path = circular_path(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut frames = Vec::with_capacity(path.len());
    for (k, m) in path.iter().enumerate() {
        let offset = match spec.offset_model {
            OffsetModel::Fixed { value } => value,
            OffsetModel::PerFrameUniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        };
        let mut frame = forward_pseudo_range(&stations, m, offset)?;
        frame.frame_index = k;
        for r in frame.pseudo_ranges.iter_mut() {
            *r += match spec.noise_model {
                NoiseModel::Uniform { max_abs } => max_abs * (2.0 * rng.random::<f64>() - 1.0),
                NoiseModel::Gaussian { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            };
        }
        for w in spec.outlier_windows.iter().filter(|w| w.contains(k)) {
            frame.pseudo_ranges[w.station_index] += w.magnitude_m;
        }
        frames.push(frame);
    }
    Trajectory::new(frames, Some(path))
}
