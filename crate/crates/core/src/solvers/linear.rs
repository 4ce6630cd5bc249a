//! Closed-form linear least squares in `(M, O)`.
//!
//! Squaring `L_i − O = ‖M − B_i‖` and subtracting station `j` cancels the
//! quadratic transponder terms:
//!
//! ```text
//! (B_i − B_j)·M − (L_i − L_j)·O = ½((‖B_i‖² − ‖B_j‖²) − (L_i² − L_j²))
//! ```
//!
//! The system is assembled in centered measurements `u_i = L_i − c` with the
//! unknown `O − c`, where `c` is the pivot station's `L`. The substitution
//! maps each row onto itself (same coefficients, same residual for the
//! corresponding `(M, O)`), so the minimizer is unchanged, but the
//! right-hand side stays at range scale instead of `O²` scale.
//!
//! # Filtered measurements
//!
//! Write each measurement as `L_i = L̃_i + α_i` with noise `α_i`. A filter on
//! the pivot difference channel gives `F(L_i − L_k) ≈ L̃_i − L̃_k`, so
//!
//! ```text
//! F_ik = (L_i − L_k) − F(L_i − L_k) = α_i − α_k.
//! ```
//!
//! Subtracting it from each measurement leaves the pivot's noise on every
//! station: `L_i − F_ik = L̃_i + α_k = ‖M − B_i‖ + (O + α_k)`. That is the
//! noise-free model with the offset replaced by `O + α_k`, so the usual rows
//! apply to the corrected values with unknowns `(M, O + α_k)`. With a perfect
//! filter the position is exact.
//!
//! # Weights
//!
//! A weight vector scales each row of `A` and `b` (`diag(w)·A·x = diag(w)·b`)
//! before the least-squares solve.

use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen};

use super::Fix;
use crate::error::{Error, Result};
use crate::geometry::{Point, StationArray};
use crate::transform::{AugmentedFrame, DifferenceSet, PairSelection};

/// Thresholds deciding when a linear solution is flagged unreliable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degeneracy {
    /// Upper bound on the 2-norm condition number of the column-equilibrated
    /// (weighted) coefficient matrix.
    pub condition_threshold: f64,
    /// Lower bound on `|R_jj| / max_k ‖A_k‖` for the triangular factor of
    /// the unscaled (weighted) coefficient matrix.
    pub pivot_ratio_threshold: f64,
}

impl Default for Degeneracy {
    fn default() -> Self {
        Self {
            condition_threshold: 1e8,
            pivot_ratio_threshold: 1e-8,
        }
    }
}

/// `A · (M, O − offset_shift) ≈ b`, one row per station pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub frame_index: usize,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub pairs: Vec<(usize, usize)>,
    /// Value subtracted from every `L` before assembly.
    pub offset_shift: f64,
    dim: usize,
}

impl LinearSystem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn unknowns(&self) -> usize {
        self.dim + 1
    }

    /// `A · (M, O − shift) − b` for a candidate solution.
    pub fn residual(&self, position: &Point, offset: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.unknowns());
        for (k, c) in position.coords().iter().enumerate() {
            x[k] = *c;
        }
        x[self.dim] = offset - self.offset_shift;
        &self.a * x - &self.b
    }

    /// Assembles rows from centered measurements `u_i = L_i − shift`.
    pub fn from_centered(
        frame_index: usize,
        centered: &[f64],
        offset_shift: f64,
        stations: &StationArray,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let dim = stations.dim();
        check_len(centered.len(), stations.len())?;
        if pairs.len() < dim + 1 {
            return Err(Error::Underdetermined {
                rows: pairs.len(),
                unknowns: dim + 1,
            });
        }
        let mut a = DMatrix::zeros(pairs.len(), dim + 1);
        let mut b = DVector::zeros(pairs.len());
        for (row, &(i, j)) in pairs.iter().enumerate() {
            let r = pair_row(stations, i, j, centered[i], centered[j]);
            for k in 0..=dim {
                a[(row, k)] = r[k];
            }
            b[row] = r[dim + 1];
        }
        Ok(Self {
            frame_index,
            a,
            b,
            pairs,
            offset_shift,
            dim,
        })
    }
}

fn check_len(measurements: usize, stations: usize) -> Result<()> {
    if measurements != stations {
        return Err(Error::InvalidInput(format!(
            "{measurements} measurements for {stations} stations"
        )));
    }
    Ok(())
}

fn shift_station(selection: PairSelection) -> usize {
    match selection {
        PairSelection::Pivot(p) => p,
        PairSelection::AllPairs => 0,
    }
}

/// Builds the linear system of one augmented frame.
pub fn build_linear_system(
    aug: &AugmentedFrame,
    stations: &StationArray,
    selection: PairSelection,
) -> Result<LinearSystem> {
    check_len(aug.len(), stations.len())?;
    let pairs = selection.pairs(aug.len())?;
    let c = shift_station(selection);
    let centered: Vec<f64> = (0..aug.len()).map(|i| aug.diff(i, c)).collect();
    LinearSystem::from_centered(aug.frame_index, &centered, aug.values[c], stations, pairs)
}

/// Least-squares solve with default degeneracy thresholds.
pub fn solve_linear(sys: &LinearSystem, weights: Option<&[f64]>) -> Result<Fix> {
    solve_linear_with(sys, weights, &Degeneracy::default())
}

pub fn solve_linear_with(
    sys: &LinearSystem,
    weights: Option<&[f64]>,
    thresholds: &Degeneracy,
) -> Result<Fix> {
    let (rows, cols) = sys.a.shape();
    if rows < cols {
        return Err(Error::Underdetermined {
            rows,
            unknowns: cols,
        });
    }
    if let Some(w) = weights {
        if w.len() != rows {
            return Err(Error::InvalidInput(format!(
                "{} weights for {} rows",
                w.len(),
                rows
            )));
        }
    }
    with_rows(rows, |orig, work| {
        for (r, row) in orig.iter_mut().enumerate() {
            for (k, v) in row[..cols].iter_mut().enumerate() {
                *v = sys.a[(r, k)];
            }
            row[cols] = sys.b[r];
        }
        solve_rows(
            sys.frame_index,
            sys.dim,
            sys.offset_shift,
            orig,
            work,
            weights.map(|w| |r: usize| w[r]),
            thresholds,
        )
    })
}

/// Linear solve on measurements corrected by filtered pivot differences.
///
/// `filtered.diffs` holds `F(L_i − L_k)` for every `i ≠ k`, `k =
/// filtered.pivot`. Weights follow station order with the pivot skipped.
/// The returned offset estimates `O + α_k`.
pub fn solve_linear_filtered(
    aug: &AugmentedFrame,
    stations: &StationArray,
    filtered: &DifferenceSet,
    weights: Option<&[f64]>,
) -> Result<Fix> {
    let n = aug.len();
    let k = filtered.pivot;
    if k >= n {
        return Err(Error::PivotOutOfRange { pivot: k, stations: n });
    }
    if filtered.diffs.len() + 1 != n {
        return Err(Error::InvalidInput(format!(
            "{} filtered channels for {} stations",
            filtered.diffs.len(),
            n
        )));
    }
    if let Some(w) = weights {
        if w.len() + 1 != n {
            return Err(Error::InvalidInput(format!("{} weights for {} rows", w.len(), n - 1)));
        }
    }
    let mut by_station = vec![None; n];
    for &(i, f) in &filtered.diffs {
        if i == k || i >= n || by_station[i].is_some() {
            return Err(Error::InvalidInput(format!("bad filtered channel {i}")));
        }
        by_station[i] = Some(f);
    }
    solve_pivot_rows(
        aug,
        stations,
        k,
        |r| by_station[row_station(r, k)].unwrap_or(f64::NAN),
        weights.map(|w| |r: usize| w[r]),
        &Degeneracy::default(),
    )
}

/// Station of row `r` when every row pairs a station with pivot `k`.
pub(crate) fn row_station(r: usize, k: usize) -> usize {
    if r < k {
        r
    } else {
        r + 1
    }
}

/// Pivot-row solve reading the filtered difference `F(L_i − L_k)` and the
/// weight of row `r` through callbacks. Row `r` pairs [`row_station`] with
/// the pivot.
pub(crate) fn solve_pivot_rows<V, W>(
    aug: &AugmentedFrame,
    stations: &StationArray,
    pivot: usize,
    filtered: V,
    weight: Option<W>,
    thresholds: &Degeneracy,
) -> Result<Fix>
where
    V: Fn(usize) -> f64,
    W: Fn(usize) -> f64,
{
    let n = aug.len();
    check_len(n, stations.len())?;
    if pivot >= n {
        return Err(Error::PivotOutOfRange { pivot, stations: n });
    }
    let dim = stations.dim();
    if n - 1 < dim + 1 {
        return Err(Error::Underdetermined {
            rows: n - 1,
            unknowns: dim + 1,
        });
    }
    with_rows(n - 1, |orig, work| {
        for (r, row) in orig.iter_mut().enumerate() {
            let i = row_station(r, pivot);
            // Corrected, centered on L_k: (L_i − L_k) − F_ik.
            let measured = aug.diff(i, pivot);
            let noise_diff = measured - filtered(r);
            *row = pair_row(stations, i, pivot, measured - noise_diff, 0.0);
        }
        solve_rows(aug.frame_index, dim, aug.values[pivot], orig, work, weight, thresholds)
    })
}

const MAX_COLS: usize = 4;
const STACK_ROWS: usize = 16;

/// Coefficients, then the right-hand side at index `cols`.
type Row = [f64; MAX_COLS + 1];

fn pair_row(stations: &StationArray, i: usize, j: usize, ui: f64, uj: f64) -> Row {
    let (bi, bj) = (stations.base(i).raw(), stations.base(j).raw());
    let dim = stations.dim();
    let mut row = [0.0; MAX_COLS + 1];
    let mut rhs = 0.0;
    for k in 0..dim {
        row[k] = bi[k] - bj[k];
        rhs += bi[k] * bi[k] - bj[k] * bj[k];
    }
    let du = ui - uj;
    row[dim] = -du;
    row[dim + 1] = 0.5 * (rhs - du * (ui + uj));
    row
}

fn with_rows<T>(m: usize, f: impl FnOnce(&mut [Row], &mut [Row]) -> T) -> T {
    if m <= STACK_ROWS {
        let mut a = [[0.0; MAX_COLS + 1]; STACK_ROWS];
        let mut b = a;
        f(&mut a[..m], &mut b[..m])
    } else {
        let mut a = vec![[0.0; MAX_COLS + 1]; m];
        let mut b = a.clone();
        f(&mut a, &mut b)
    }
}

/// Weights, equilibrates and solves the rows in `orig`, using `work` as
/// scratch of the same length.
fn solve_rows<W: Fn(usize) -> f64>(
    frame_index: usize,
    dim: usize,
    shift: f64,
    orig: &[Row],
    work: &mut [Row],
    weight: Option<W>,
    thresholds: &Degeneracy,
) -> Result<Fix> {
    let cols = dim + 1;
    work.copy_from_slice(orig);
    if let Some(w) = weight {
        for (r, row) in work.iter_mut().enumerate() {
            let wr = w(r);
            if !(wr.is_finite() && wr > 0.0) {
                return Err(Error::InvalidInput("weights must be finite and positive".into()));
            }
            for v in &mut row[..=cols] {
                *v *= wr;
            }
        }
    }

    let mut fix = Fix {
        frame_index,
        position: None,
        offset: None,
        residual_norm: f64::INFINITY,
        condition_number: Some(f64::INFINITY),
        iterations: None,
        converged: false,
        degenerate: true,
        warmup: false,
    };
    let Some(ls) = least_squares(work, cols) else {
        return Ok(fix);
    };
    fix.condition_number = Some(ls.cond);
    if !(ls.cond < 1.0 / (cols as f64 * f64::EPSILON)) {
        return Ok(fix);
    }
    let x = ls.x;
    let mut coords = [0.0; 3];
    coords[..dim].copy_from_slice(&x[..dim]);
    let sq: f64 = orig
        .iter()
        .map(|row| {
            let ax: f64 = (0..cols).map(|k| row[k] * x[k]).sum();
            (ax - row[cols]).powi(2)
        })
        .sum();
    fix.position = Some(Point::from_raw(coords, dim));
    fix.offset = Some(x[dim] + shift);
    fix.residual_norm = sq.sqrt();
    fix.converged = true;
    fix.degenerate =
        ls.cond > thresholds.condition_threshold || ls.min_pivot_ratio < thresholds.pivot_ratio_threshold;
    Ok(fix)
}

struct LeastSquares {
    x: [f64; MAX_COLS],
    cond: f64,
    min_pivot_ratio: f64,
}

/// Column-equilibrated Householder QR with the right-hand side carried
/// along. `None` when a column is zero or not finite.
fn least_squares(a: &mut [Row], cols: usize) -> Option<LeastSquares> {
    let m = a.len();
    let mut norms = [0.0; MAX_COLS];
    for j in 0..cols {
        let n = a.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return None;
        }
        norms[j] = n;
        for r in a.iter_mut() {
            r[j] /= n;
        }
    }
    let max_norm = norms[..cols].iter().cloned().fold(0.0, f64::max);

    for j in 0..cols {
        let norm = a[j..].iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let ajj = a[j][j];
        let alpha = if ajj > 0.0 { -norm } else { norm };
        let v0 = ajj - alpha;
        let vtv = 2.0 * norm * (norm + ajj.abs());
        for c in j + 1..=cols {
            let s = v0 * a[j][c] + (j + 1..m).map(|i| a[i][j] * a[i][c]).sum::<f64>();
            let f = 2.0 * s / vtv;
            a[j][c] -= f * v0;
            for i in j + 1..m {
                a[i][c] -= f * a[i][j];
            }
        }
        a[j][j] = alpha;
    }

    let mut r = [[0.0; MAX_COLS]; MAX_COLS];
    for i in 0..cols {
        r[i][i..cols].copy_from_slice(&a[i][i..cols]);
    }
    let min_pivot_ratio = (0..cols)
        .map(|j| r[j][j].abs() * norms[j] / max_norm)
        .fold(f64::INFINITY, f64::min);

    let mut x = [0.0; MAX_COLS];
    for i in (0..cols).rev() {
        let s: f64 = (i + 1..cols).map(|k| r[i][k] * x[k]).sum();
        x[i] = (a[i][cols] - s) / r[i][i];
    }
    let cond = condition(&r, cols);
    for j in 0..cols {
        x[j] /= norms[j];
    }
    Some(LeastSquares {
        x,
        cond,
        min_pivot_ratio,
    })
}

/// 2-norm condition number `σ_max(R) · σ_max(R⁻¹)` of an upper-triangular
/// factor, from the largest eigenvalues of `RᵀR` and `R⁻¹R⁻ᵀ`.
fn condition(r: &[[f64; MAX_COLS]; MAX_COLS], n: usize) -> f64 {
    if (0..n).any(|i| r[i][i] == 0.0) {
        return f64::INFINITY;
    }
    let mut inv = [[0.0; MAX_COLS]; MAX_COLS];
    for j in 0..n {
        inv[j][j] = 1.0 / r[j][j];
        for i in (0..j).rev() {
            let s: f64 = (i + 1..=j).map(|k| r[i][k] * inv[k][j]).sum();
            inv[i][j] = -s / r[i][i];
        }
    }
    let gram = |m: &[[f64; MAX_COLS]; MAX_COLS], transpose_first: bool| {
        let mut g = [[0.0; MAX_COLS]; MAX_COLS];
        for i in 0..n {
            for j in i..n {
                let v: f64 = if transpose_first {
                    (0..n).map(|k| m[k][i] * m[k][j]).sum()
                } else {
                    (0..n).map(|k| m[i][k] * m[j][k]).sum()
                };
                g[i][j] = v;
                g[j][i] = v;
            }
        }
        g
    };
    let c = (largest_eigenvalue(&gram(r, true), n) * largest_eigenvalue(&gram(&inv, false), n)).sqrt();
    if c.is_finite() {
        c.max(1.0)
    } else {
        f64::INFINITY
    }
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix.
/// Closed form up to 3×3 (trigonometric solution of the characteristic
/// cubic), a symmetric eigendecomposition above.
fn largest_eigenvalue(g: &[[f64; MAX_COLS]; MAX_COLS], n: usize) -> f64 {
    match n {
        1 => g[0][0],
        2 => {
            let m = 0.5 * (g[0][0] + g[1][1]);
            let d = 0.5 * (g[0][0] - g[1][1]);
            m + d.hypot(g[0][1])
        }
        3 => {
            let q = (g[0][0] + g[1][1] + g[2][2]) / 3.0;
            let off = g[0][1] * g[0][1] + g[0][2] * g[0][2] + g[1][2] * g[1][2];
            let (a, b, c) = (g[0][0] - q, g[1][1] - q, g[2][2] - q);
            let p2 = a * a + b * b + c * c + 2.0 * off;
            if p2 == 0.0 {
                return q;
            }
            let p = (p2 / 6.0).sqrt();
            let det = a * (b * c - g[1][2] * g[1][2]) - g[0][1] * (g[0][1] * c - g[1][2] * g[0][2])
                + g[0][2] * (g[0][1] * g[1][2] - b * g[0][2]);
            let half = (det / (2.0 * p * p * p)).clamp(-1.0, 1.0);
            q + 2.0 * p * (half.acos() / 3.0).cos()
        }
        _ => {
            let m = Matrix4::from_fn(|i, j| if i < n && j < n { g[i][j] } else { 0.0 });
            SymmetricEigen::new(m).eigenvalues.max()
        }
    }
}
