//! TOA → TDOA transformation.
//!
//! Adding the known reference range to each pseudo-range gives
//! `L_i = R_i + ‖T − B_i‖ = O + ‖M − B_i‖`. Differencing two stations of the
//! same frame removes the shared offset `O`.
//!
//! Offsets are around 10⁷ m while ranges are around 10 m, so differences are
//! always formed as `(R_i − R_j) + (‖T − B_i‖ − ‖T − B_j‖)`: the raw
//! pseudo-ranges cancel between like magnitudes before any small term is
//! added.

use crate::error::{Error, Result};
use crate::geometry::{Frame, StationArray};

/// A frame with the reference geometry folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedFrame {
    pub frame_index: usize,
    /// `L_i = R_i + ‖T − B_i‖`.
    pub values: Vec<f64>,
    pseudo_ranges: Vec<f64>,
    reference_ranges: Vec<f64>,
}

impl AugmentedFrame {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `L_i − L_j`, computed without touching the offset-sized values.
    #[inline]
    pub fn diff(&self, i: usize, j: usize) -> f64 {
        (self.pseudo_ranges[i] - self.pseudo_ranges[j])
            + (self.reference_ranges[i] - self.reference_ranges[j])
    }

    /// Mean of `L`, a natural offset starting value for TOA solving.
    pub fn mean_value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Offset-free differences of one frame against a pivot station.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceSet {
    pub frame_index: usize,
    pub pivot: usize,
    /// `(i, L_i − L_pivot)` for every `i ≠ pivot`, in station order.
    pub diffs: Vec<(usize, f64)>,
}

/// One unordered station pair `i < j` with `value = L_i − L_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDiff {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Which station pairs feed a solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSelection {
    /// `(i, pivot)` for every `i ≠ pivot`.
    Pivot(usize),
    /// Every unordered pair `i < j`.
    AllPairs,
}

impl Default for PairSelection {
    fn default() -> Self {
        PairSelection::Pivot(0)
    }
}

impl PairSelection {
    /// Station pairs `(i, j)` meaning `L_i − L_j`.
    pub fn pairs(&self, n: usize) -> Result<Vec<(usize, usize)>> {
        match *self {
            PairSelection::Pivot(p) => {
                if p >= n {
                    return Err(Error::PivotOutOfRange {
                        pivot: p,
                        stations: n,
                    });
                }
                Ok((0..n).filter(|&i| i != p).map(|i| (i, p)).collect())
            }
            PairSelection::AllPairs => Ok((0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect()),
        }
    }
}

pub fn augment(frame: &Frame, stations: &StationArray) -> Result<AugmentedFrame> {
    if frame.pseudo_ranges.len() != stations.len() {
        return Err(Error::InvalidInput(format!(
            "frame {} has {} pseudo-ranges for {} stations",
            frame.frame_index,
            frame.pseudo_ranges.len(),
            stations.len()
        )));
    }
    let refs = stations.reference_ranges();
    Ok(AugmentedFrame {
        frame_index: frame.frame_index,
        values: frame
            .pseudo_ranges
            .iter()
            .zip(refs)
            .map(|(r, t)| r + t)
            .collect(),
        pseudo_ranges: frame.pseudo_ranges.clone(),
        reference_ranges: refs.to_vec(),
    })
}

pub fn pairwise_diff(aug: &AugmentedFrame, pivot: usize) -> Result<DifferenceSet> {
    if pivot >= aug.len() {
        return Err(Error::PivotOutOfRange {
            pivot,
            stations: aug.len(),
        });
    }
    Ok(DifferenceSet {
        frame_index: aug.frame_index,
        pivot,
        diffs: (0..aug.len())
            .filter(|&i| i != pivot)
            .map(|i| (i, aug.diff(i, pivot)))
            .collect(),
    })
}

pub fn all_pairs_diff(aug: &AugmentedFrame) -> Result<Vec<PairDiff>> {
    if aug.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 stations".into()));
    }
    Ok(PairSelection::AllPairs
        .pairs(aug.len())?
        .into_iter()
        .map(|(i, j)| PairDiff {
            i,
            j,
            value: aug.diff(i, j),
        })
        .collect())
}

/// Differences for an arbitrary pair selection.
pub fn select_diffs(aug: &AugmentedFrame, selection: PairSelection) -> Result<Vec<PairDiff>> {
    Ok(selection
        .pairs(aug.len())?
        .into_iter()
        .map(|(i, j)| PairDiff {
            i,
            j,
            value: aug.diff(i, j),
        })
        .collect())
}
