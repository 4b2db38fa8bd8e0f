//! Monte Carlo estimation of the Lyapunov exponent of singular holomorphic
//! foliations on the complex projective plane.
//!
//! The crate is organised bottom-up:
//!
//! * [`chart`], [`poly`], [`singular`], [`foliation`]: foliations in affine charts
//!   and their singular points.
//! * [`local_model`]: the linear model `z d/dz + lambda w d/dw` of a hyperbolic
//!   singularity with closed-form holonomy and curvature.
//! * [`disc`]: Poincare disc conventions and Brownian motion on the disc.
//! * [`flow`], [`eta`], [`walker`]: complex-time flows, the leafwise Poincare
//!   density and leafwise Brownian motion with holonomy transport.
//! * [`stats`], [`estimators`], [`checkpoint`]: ensemble runs and reports.
//! * [`oracles`]: residual suites used by the acceptance harness and self-test.

// NaN-rejecting guards are written as `!(x > 0.0)`; small matrices are indexed.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chart;
pub mod checkpoint;
pub mod disc;
pub mod error;
pub mod estimators;
pub mod eta;
pub mod flow;
pub mod foliation;
pub mod local_model;
pub mod oracles;
pub mod poly;
pub mod rng;
pub mod singular;
pub mod stats;
pub mod walker;

pub use num_complex::Complex64 as C64;

pub use chart::{ChartPoint, Mat2, Vec2};
pub use error::{Error, Result};
pub use foliation::FoliationSpec;
pub use poly::PolyVectorField;
pub use singular::Singularity;
