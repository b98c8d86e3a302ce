//! Linear stability, center-manifold reduction and transition classification for
//! axisymmetric Taylor-Couette flow with z-periodic boundary conditions.

pub mod error;
pub mod params;
pub mod radial_ops;
pub mod linstab;
pub mod centermanifold;
pub mod transition;
pub mod fields;
pub mod dns;

pub use error::{ErrorKind, Result, TaylorError};
