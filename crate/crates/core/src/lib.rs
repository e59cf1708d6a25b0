//! Confined elastic curves: inextensible curves of low bending energy inside
//! convex quadratic confinements, computed by an energy-stable gradient flow
//! on C¹ cubic Hermite splines.

pub mod confinement;
pub mod config;
pub mod curve_model;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod runner;
pub mod saddle;
pub mod spline;

pub use error::{Error, Result};
