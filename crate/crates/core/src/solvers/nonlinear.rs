//! Iterative solvers built on [`super::lm`].
//!
//! The TDOA solver fits only the position against offset-free range
//! differences, `r_ij = (‖M − B_i‖ − ‖M − B_j‖) − D_ij`. The TOA solver fits
//! position and offset against `r_i = O + ‖M − B_i‖ − L_i`; it is kept as the
//! baseline that has to cope with offsets many orders larger than the ranges.

use nalgebra::DMatrix;

use super::lm::{minimize, LeastSquares, LmConfig};
use super::Fix;
use crate::error::{Error, Result};
use crate::geometry::{Point, StationArray};
use crate::transform::{select_diffs, AugmentedFrame, PairDiff, PairSelection};

const SINGULAR_RANGE: f64 = 1e-12;

#[inline]
fn unit_from(x: &[f64], b: &Point, dim: usize) -> ([f64; 3], f64) {
    let mut u = [0.0; 3];
    let mut n2 = 0.0;
    for k in 0..dim {
        u[k] = x[k] - b.raw()[k];
        n2 += u[k] * u[k];
    }
    let n = n2.sqrt();
    if n > SINGULAR_RANGE {
        for v in &mut u[..dim] {
            *v /= n;
        }
    } else {
        u = [0.0; 3];
    }
    (u, n)
}

struct Tdoa<'a> {
    stations: &'a StationArray,
    pairs: &'a [PairDiff],
}

impl LeastSquares for Tdoa<'_> {
    fn residual_count(&self) -> usize {
        self.pairs.len()
    }

    fn param_count(&self) -> usize {
        self.stations.dim()
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        let dim = self.stations.dim();
        for (o, p) in out.iter_mut().zip(self.pairs) {
            let (_, di) = unit_from(x, self.stations.base(p.i), dim);
            let (_, dj) = unit_from(x, self.stations.base(p.j), dim);
            *o = (di - dj) - p.value;
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>) {
        let dim = self.stations.dim();
        for (row, p) in self.pairs.iter().enumerate() {
            let (ui, _) = unit_from(x, self.stations.base(p.i), dim);
            let (uj, _) = unit_from(x, self.stations.base(p.j), dim);
            for k in 0..dim {
                out[(row, k)] = ui[k] - uj[k];
            }
        }
    }
}

struct Toa<'a> {
    stations: &'a StationArray,
    /// `O_start − L_i`; the offset parameter is relative to `O_start`.
    base: Vec<f64>,
}

impl LeastSquares for Toa<'_> {
    fn residual_count(&self) -> usize {
        self.base.len()
    }

    fn param_count(&self) -> usize {
        self.stations.dim() + 1
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        let dim = self.stations.dim();
        for (i, o) in out.iter_mut().enumerate() {
            let (_, d) = unit_from(x, self.stations.base(i), dim);
            *o = self.base[i] + x[dim] + d;
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>) {
        let dim = self.stations.dim();
        for i in 0..self.base.len() {
            let (u, _) = unit_from(x, self.stations.base(i), dim);
            for k in 0..dim {
                out[(i, k)] = u[k];
            }
            out[(i, dim)] = 1.0;
        }
    }
}

fn check_point(p: &Point, stations: &StationArray) -> Result<()> {
    if p.dim() != stations.dim() {
        return Err(Error::DimensionMismatch {
            expected: stations.dim(),
            found: p.dim(),
        });
    }
    Ok(())
}

/// TDOA residuals at `position` for the selected pairs of one frame.
pub fn tdoa_residuals(
    position: &Point,
    aug: &AugmentedFrame,
    stations: &StationArray,
    selection: PairSelection,
) -> Result<Vec<f64>> {
    check_point(position, stations)?;
    let pairs = select_diffs(aug, selection)?;
    let p = Tdoa {
        stations,
        pairs: &pairs,
    };
    let mut out = vec![0.0; pairs.len()];
    p.residuals(position.coords(), &mut out);
    Ok(out)
}

/// Analytic Jacobian of the TDOA residuals: row `(i, j)` is
/// `(M − B_i)/‖M − B_i‖ − (M − B_j)/‖M − B_j‖`.
pub fn tdoa_jacobian(
    position: &Point,
    pairs: &[PairDiff],
    stations: &StationArray,
) -> Result<DMatrix<f64>> {
    check_point(position, stations)?;
    let p = Tdoa { stations, pairs };
    let mut j = DMatrix::zeros(pairs.len(), stations.dim());
    p.jacobian(position.coords(), &mut j);
    Ok(j)
}

/// LM fit of the position against arbitrary (possibly filtered) pair
/// differences.
pub fn solve_tdoa_pairs(
    frame_index: usize,
    pairs: &[PairDiff],
    stations: &StationArray,
    start: &Point,
    cfg: &LmConfig,
) -> Result<Fix> {
    check_point(start, stations)?;
    let dim = stations.dim();
    if pairs.len() < dim {
        return Err(Error::Underdetermined {
            rows: pairs.len(),
            unknowns: dim,
        });
    }
    let report = minimize(&Tdoa { stations, pairs }, start.coords(), cfg);
    let mut c = [0.0; 3];
    c[..dim].copy_from_slice(&report.x);
    Ok(Fix {
        frame_index,
        position: Some(Point::from_raw(c, dim)),
        offset: None,
        residual_norm: report.residual_norm,
        condition_number: None,
        iterations: Some(report.iterations),
        converged: report.termination.converged(),
        degenerate: false,
        warmup: false,
    })
}

/// LM fit of the position from one frame's offset-free differences.
pub fn solve_nonlinear_tdoa(
    aug: &AugmentedFrame,
    stations: &StationArray,
    selection: PairSelection,
    start: &Point,
    cfg: &LmConfig,
) -> Result<Fix> {
    let pairs = select_diffs(aug, selection)?;
    solve_tdoa_pairs(aug.frame_index, &pairs, stations, start, cfg)
}

/// LM fit of position and offset on the raw pseudo-range model.
pub fn solve_nonlinear_toa(
    aug: &AugmentedFrame,
    stations: &StationArray,
    start_position: &Point,
    start_offset: f64,
    cfg: &LmConfig,
) -> Result<Fix> {
    check_point(start_position, stations)?;
    if aug.len() != stations.len() {
        return Err(Error::InvalidInput(format!(
            "{} measurements for {} stations",
            aug.len(),
            stations.len()
        )));
    }
    let dim = stations.dim();
    if aug.len() < dim + 1 {
        return Err(Error::Underdetermined {
            rows: aug.len(),
            unknowns: dim + 1,
        });
    }
    let problem = Toa {
        stations,
        base: aug.values.iter().map(|l| start_offset - l).collect(),
    };
    let mut x0 = start_position.coords().to_vec();
    x0.push(0.0);
    let report = minimize(&problem, &x0, cfg);
    let mut c = [0.0; 3];
    c[..dim].copy_from_slice(&report.x[..dim]);
    Ok(Fix {
        frame_index: aug.frame_index,
        position: Some(Point::from_raw(c, dim)),
        offset: Some(start_offset + report.x[dim]),
        residual_norm: report.residual_norm,
        condition_number: None,
        iterations: Some(report.iterations),
        converged: report.termination.converged(),
        degenerate: false,
        warmup: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{distance, forward_pseudo_range};
    use crate::transform::augment;
    use proptest::prelude::*;

    fn cross() -> StationArray {
        StationArray::new(
            vec![
                Point::new2(10.0, 0.0),
                Point::new2(0.0, 10.0),
                Point::new2(-10.0, 0.0),
                Point::new2(0.0, -10.0),
            ],
            Point::new2(0.0, 0.0),
        )
        .unwrap()
    }

    fn aug_at(st: &StationArray, m: Point, o: f64) -> AugmentedFrame {
        augment(&forward_pseudo_range(st, &m, o).unwrap(), st).unwrap()
    }

    #[test]
    fn residuals_vanish_at_truth() {
        let st = cross();
        let m = Point::new2(3.0, 4.0);
        let r = tdoa_residuals(&m, &aug_at(&st, m, 5e6), &st, PairSelection::AllPairs).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn residuals_ignore_offset_shift() {
        let st = cross();
        let f = forward_pseudo_range(&st, &Point::new2(-2.0, 1.0), 1e3).unwrap();
        let p = Point::new2(0.5, 0.5);
        let a = tdoa_residuals(&p, &augment(&f, &st).unwrap(), &st, PairSelection::Pivot(0)).unwrap();
        let b = tdoa_residuals(&p, &augment(&f.shifted(1e7), &st).unwrap(), &st, PairSelection::Pivot(0)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn start_at_truth_needs_no_iteration() {
        let st = cross();
        let m = Point::new2(1.0, -2.0);
        let fix = solve_nonlinear_tdoa(&aug_at(&st, m, 0.0), &st, PairSelection::Pivot(0), &m, &LmConfig::default()).unwrap();
        assert!(fix.converged);
        assert!(fix.iterations.unwrap() <= 1);
        assert!(fix.residual_norm < 1e-9);
    }

    #[test]
    fn recovers_from_origin_start() {
        let st = cross();
        let m = Point::new2(3.0, 4.0);
        let fix = solve_nonlinear_tdoa(
            &aug_at(&st, m, 2e6),
            &st,
            PairSelection::Pivot(0),
            &Point::new2(0.0, 0.0),
            &LmConfig::default(),
        )
        .unwrap();
        assert!(fix.converged);
        assert!(distance(&fix.position.unwrap(), &m).unwrap() < 1e-6);
        assert!(fix.offset.is_none());
    }

    #[test]
    fn offset_shift_gives_identical_fix() {
        let st = cross();
        let mut f = forward_pseudo_range(&st, &Point::new2(2.0, 2.0), 0.0).unwrap();
        f.pseudo_ranges[1] += 0.03;
        // On a 2⁻²⁰ grid, adding 2²³ is exact, so every difference is too.
        let grid = (-20f64).exp2();
        for r in &mut f.pseudo_ranges {
            *r = (*r / grid).round() * grid;
        }
        let cfg = LmConfig::default();
        let start = Point::new2(0.0, 0.0);
        let a = solve_nonlinear_tdoa(&augment(&f, &st).unwrap(), &st, PairSelection::Pivot(0), &start, &cfg).unwrap();
        let b = solve_nonlinear_tdoa(&augment(&f.shifted(8_388_608.0), &st).unwrap(), &st, PairSelection::Pivot(0), &start, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn toa_with_mean_offset_start() {
        let st = cross();
        let m = Point::new2(-3.0, 1.0);
        let aug = aug_at(&st, m, 7e6);
        let fix = solve_nonlinear_toa(&aug, &st, &Point::new2(0.0, 0.0), aug.mean_value(), &LmConfig::default()).unwrap();
        assert!(fix.converged);
        assert!(distance(&fix.position.unwrap(), &m).unwrap() < 1e-6);
        assert!((fix.offset.unwrap() - 7e6).abs() < 1e-6);
        // TOA and TDOA residuals both vanish at the truth.
        let r = tdoa_residuals(&m, &aug, &st, PairSelection::Pivot(0)).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn toa_with_zero_offset_start_is_fragile() {
        // Offsets of 10⁷ swamp the position in the step scaling; record what
        // happens rather than asserting a value.
        let st = cross();
        let m = Point::new2(-3.0, 1.0);
        let aug = aug_at(&st, m, 1e7);
        let fix = solve_nonlinear_toa(&aug, &st, &Point::new2(0.0, 0.0), 0.0, &LmConfig::default()).unwrap();
        let err = distance(&fix.position.unwrap(), &m).unwrap();
        assert!(err.is_finite());
        assert!(!fix.converged || err > 1e-6 || fix.iterations.unwrap() > 1);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let st = cross();
        let aug = aug_at(&st, Point::new2(1.0, 1.0), 0.0);
        let pairs = select_diffs(&aug, PairSelection::AllPairs).unwrap();
        let p = Point::new2(2.3, -4.1);
        let j = tdoa_jacobian(&p, &pairs, &st).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut c = [p.x(), p.y()];
            c[k] += h;
            let plus = Tdoa { stations: &st, pairs: &pairs };
            let mut rp = vec![0.0; pairs.len()];
            plus.residuals(&c, &mut rp);
            c[k] -= 2.0 * h;
            let mut rm = vec![0.0; pairs.len()];
            plus.residuals(&c, &mut rm);
            for row in 0..pairs.len() {
                let fd = (rp[row] - rm[row]) / (2.0 * h);
                assert!((fd - j[(row, k)]).abs() <= 1e-6 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn dimension_checked() {
        let st = cross();
        let aug = aug_at(&st, Point::new2(1.0, 1.0), 0.0);
        let r = solve_nonlinear_tdoa(&aug, &st, PairSelection::Pivot(0), &Point::new3(0.0, 0.0, 0.0), &LmConfig::default());
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn tdoa_recovers_random_interior_points(x in -6.0..6.0f64, y in -6.0..6.0f64, o in 0.0..1e7f64) {
            let st = cross();
            let m = Point::new2(x, y);
            let fix = solve_nonlinear_tdoa(&aug_at(&st, m, o), &st, PairSelection::Pivot(0), &Point::new2(0.0, 0.0), &LmConfig::default()).unwrap();
            // The 10⁻³ scaled-step stop leaves up to ~κ·(10⁻³‖x‖)² behind.
            prop_assert!(fix.converged);
            prop_assert!(distance(&fix.position.unwrap(), &m).unwrap() < 1e-4);
        }
    }
}
