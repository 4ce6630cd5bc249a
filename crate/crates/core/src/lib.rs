//! Offset-free multilateration.
//!
//! Pseudo-ranges carry an unknown common offset that can dwarf the geometry.
//! Adding each station's known reference range and differencing between
//! stations removes the offset exactly; the differenced channels are then
//! low-pass filtered and handed to a linear or Levenberg–Marquardt solver.
//!
//! ```
//! use lpm_core::geometry::{forward_pseudo_range, Point, StationArray};
//! use lpm_core::solvers::{build_linear_system, solve_linear};
//! use lpm_core::transform::{augment, PairSelection};
//!
//! let stations = StationArray::new(
//!     vec![
//!         Point::new2(10.0, 0.0),
//!         Point::new2(0.0, 10.0),
//!         Point::new2(-10.0, 0.0),
//!         Point::new2(0.0, -10.0),
//!     ],
//!     Point::new2(0.0, 0.0),
//! )?;
//! let frame = forward_pseudo_range(&stations, &Point::new2(3.0, 4.0), 5e6)?;
//! let aug = augment(&frame, &stations)?;
//! let sys = build_linear_system(&aug, &stations, PairSelection::Pivot(0))?;
//! let fix = solve_linear(&sys, None)?;
//! let p = fix.position.unwrap();
//! assert!((p.x() - 3.0).abs() < 1e-6 && (p.y() - 4.0).abs() < 1e-6);
//! # Ok::<(), lpm_core::Error>(())
//! ```

pub mod error;
pub mod exec;
pub mod filters;
pub mod geometry;
pub mod harness;
pub mod simulate;
pub mod solvers;
pub mod transform;

pub use error::{Error, Result};
pub use exec::Execution;
