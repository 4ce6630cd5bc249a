//! Stations, measurement frames and the pseudo-range forward model.
//!
//! A pseudo-range frame is generated as
//!
//! ```text
//! R_i = O + ‖M − B_i‖ − ‖T − B_i‖
//! ```
//!
//! where `M` is the transponder, `T` the reference station, `B_i` the base
//! stations and `O` the clock offset shared by every station of the frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum separation between two base stations, in meters.
pub const COINCIDENT_TOLERANCE: f64 = 1e-9;

/// A point in 2-D or 3-D space, in meters.
///
/// Coordinates are stored inline; `z` is zero and ignored for 2-D points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; 3],
    dim: usize,
}

impl Point {
    pub fn new2(x: f64, y: f64) -> Self {
        Self {
            coords: [x, y, 0.0],
            dim: 2,
        }
    }

    pub fn new3(x: f64, y: f64, z: f64) -> Self {
        Self {
            coords: [x, y, z],
            dim: 3,
        }
    }

    /// Origin of the given dimension.
    pub fn origin(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            coords: [0.0; 3],
            dim,
        })
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        check_dim(coords.len())?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate in {coords:?}"
            )));
        }
        let mut c = [0.0; 3];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self {
            coords: c,
            dim: coords.len(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn y(&self) -> f64 {
        self.coords[1]
    }

    /// Squared Euclidean norm of the position vector.
    pub fn norm_squared(&self) -> f64 {
        self.coords().iter().map(|c| c * c).sum()
    }

    pub(crate) fn raw(&self) -> &[f64; 3] {
        &self.coords
    }

    pub(crate) fn from_raw(coords: [f64; 3], dim: usize) -> Self {
        debug_assert!(dim == 2 || dim == 3);
        Self { coords, dim }
    }
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Point::from_slice(&v).map_err(serde::de::Error::custom)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "dimension must be 2 or 3, got {dim}"
        )))
    }
}

/// Euclidean distance between two points of equal dimension.
pub fn distance(a: &Point, b: &Point) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    Ok(distance_unchecked(a, b))
}

#[inline]
pub(crate) fn distance_unchecked(a: &Point, b: &Point) -> f64 {
    let dx = a.coords[0] - b.coords[0];
    let dy = a.coords[1] - b.coords[1];
    let dz = a.coords[2] - b.coords[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Fixed geometry: base stations plus the reference station.
#[derive(Debug, Clone, PartialEq)]
pub struct StationArray {
    bases: Vec<Point>,
    reference: Point,
    /// ‖T − B_i‖ per base station.
    reference_ranges: Vec<f64>,
}

impl StationArray {
    pub fn new(bases: Vec<Point>, reference: Point) -> Result<Self> {
        if bases.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "need at least 3 base stations, got {}",
                bases.len()
            )));
        }
        let dim = reference.dim();
        if let Some(bad) = bases.iter().find(|b| b.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        for i in 0..bases.len() {
            for j in i + 1..bases.len() {
                if distance_unchecked(&bases[i], &bases[j]) <= COINCIDENT_TOLERANCE {
                    return Err(Error::InvalidInput(format!(
                        "base stations {i} and {j} coincide"
                    )));
                }
            }
        }
        let reference_ranges = bases
            .iter()
            .map(|b| distance_unchecked(&reference, b))
            .collect();
        Ok(Self {
            bases,
            reference,
            reference_ranges,
        })
    }

    pub fn dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn bases(&self) -> &[Point] {
        &self.bases
    }

    pub fn base(&self, i: usize) -> &Point {
        &self.bases[i]
    }

    pub fn reference(&self) -> &Point {
        &self.reference
    }

    /// Known range from the reference station to each base station.
    pub fn reference_ranges(&self) -> &[f64] {
        &self.reference_ranges
    }
}

/// One measurement epoch: a pseudo-range per base station, all sharing one
/// unknown offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_index: usize,
    pub pseudo_ranges: Vec<f64>,
    /// Only known for synthetic data.
    pub true_offset: Option<f64>,
}

impl Frame {
    pub fn new(frame_index: usize, pseudo_ranges: Vec<f64>) -> Result<Self> {
        if pseudo_ranges.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "frame {frame_index}: non-finite pseudo-range"
            )));
        }
        Ok(Self {
            frame_index,
            pseudo_ranges,
            true_offset: None,
        })
    }

    /// Adds `c` to every pseudo-range, as a change of clock offset would.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            frame_index: self.frame_index,
            pseudo_ranges: self.pseudo_ranges.iter().map(|r| r + c).collect(),
            true_offset: self.true_offset.map(|o| o + c),
        }
    }
}

/// A sequence of frames with optional ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub frames: Vec<Frame>,
    pub truth: Option<Vec<Point>>,
}

impl Trajectory {
    pub fn new(frames: Vec<Frame>, truth: Option<Vec<Point>>) -> Result<Self> {
        if let Some(t) = &truth {
            if t.len() != frames.len() {
                return Err(Error::InvalidInput(format!(
                    "{} truth points for {} frames",
                    t.len(),
                    frames.len()
                )));
            }
        }
        Ok(Self { frames, truth })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Noise-free pseudo-ranges for a transponder at `transponder`.
///
/// The returned frame has index 0 and carries `offset` as its true offset.
pub fn forward_pseudo_range(
    stations: &StationArray,
    transponder: &Point,
    offset: f64,
) -> Result<Frame> {
    if transponder.dim() != stations.dim() {
        return Err(Error::DimensionMismatch {
            expected: stations.dim(),
            found: transponder.dim(),
        });
    }
    let pseudo_ranges = stations
        .bases()
        .iter()
        .zip(stations.reference_ranges())
        .map(|(b, t)| offset + (distance_unchecked(transponder, b) - t))
        .collect();
    Ok(Frame {
        frame_index: 0,
        pseudo_ranges,
        true_offset: Some(offset),
    })
}
