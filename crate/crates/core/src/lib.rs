//! Accuracy analysis for head-mounted gaze estimation.
//!
//! The numeric core is generic over [`scalar::Real`]; the aliases below fix
//! the scalar to `f64`, which is what the data pipeline uses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod directional;
pub mod error;
pub mod gaussian2d;
pub mod geometry;
pub mod metrics;
pub mod scalar;
pub mod selftest;
pub mod synth;

pub use error::{Error, Result};

pub type Vec2 = geometry::Vec2<f64>;
pub type Vec3 = geometry::Vec3<f64>;
pub type Mat3 = geometry::Mat3<f64>;
pub type UnitVec3 = geometry::UnitVec3<f64>;
pub type Rotation3 = geometry::Rotation3<f64>;
pub type TangentFrame = geometry::TangentFrame<f64>;
pub type Sym2 = gaussian2d::Sym2<f64>;
pub type Gaussian2D = gaussian2d::Gaussian2D<f64>;
pub type AxisStats = gaussian2d::AxisStats<f64>;
pub type FitResult = gaussian2d::FitResult<f64>;
