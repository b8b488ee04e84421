//! Analysis toolkit for systems of translates `{f(x − γ)}` in Lᵖ(ℝᵈ).
//!
//! * [`pointset`]: separation, cube counts `ν⁺(h)` and upper Beurling density.
//! * [`lpfunc`]: exact norms and dual pairings of piecewise-constant functions.
//! * [`system`]: Bessel sums, blowup witnesses, (C_q) constants and localized
//!   mass for finite unions of translate families.
//! * [`haar`]: the normalized Haar system on `[0, 1)` and its unconditional
//!   basis inequalities.
//! * [`formats`]: JSON and CSV schemas for point sets, functions and systems.

pub mod formats;
pub mod haar;
pub mod lpfunc;
pub mod pointset;
pub mod system;

pub use lpfunc::{Block, ExponentPair, LpError, Piece, PiecewiseFn};
pub use pointset::{Cube, Point, PointSet, PointSetError, Provenance};
pub use system::{Generator, SystemError, TranslateSystem};
