//! Numerical toolkit for asymptotically hyperbolic initial data sets.

pub mod calculus;
pub mod catalog;
pub mod constraints;
pub mod data;
pub mod deformation;
pub mod diagnostics;
pub mod elliptic;
pub mod error;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod mass;
pub mod par;
pub mod sphere;

pub use data::{DecayClass, InitialData};
pub use error::{Error, Result};
pub use field::{Field, Kind};
pub use grid::{build_grid, Grid, GridOptions, GridSpec};
