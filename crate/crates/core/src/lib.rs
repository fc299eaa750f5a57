//! Reverse image filtering with accelerated fixed-point and gradient-descent
//! iterations.
//!
//! A filter `g` is only available as a black box. Given an observation
//! `b = g(x)`, the methods in [`methods`] build fixed-point maps and gradient
//! surrogates whose fixed points approximate `x`; [`fixed_point`] and
//! [`gradient`] drive them, and [`harness`] sweeps whole grids of images,
//! filters, methods and accelerations.
//!
//! ```
//! use std::sync::Arc;
//! use revfilt_core::{BoundProblem, FilterSpec, FixedPointDriver, Image, LoopOptions, MethodTag};
//!
//! let truth = Image::from_fn(32, 32, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0).unwrap();
//! let filter = "gaussian:sigma=1".parse::<FilterSpec>().unwrap().build().unwrap();
//! let mut prob = BoundProblem::synthesize(filter, &truth, MethodTag::T).unwrap();
//! let out = revfilt_core::run_fixed_point(
//!     &mut prob,
//!     FixedPointDriver::anderson(5),
//!     None,
//!     Some(&truth),
//!     LoopOptions::with_budget(10),
//! )
//! .unwrap();
//! assert!(out.trace.final_psnr().unwrap() > out.trace.initial_psnr().unwrap());
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(a > b)` is deliberate: NaN must fail these checks.

pub mod error;
pub mod filters;
pub mod fixed_point;
pub mod gradient;
pub mod harness;
pub mod image;
pub mod io;
pub mod methods;
pub mod trace;

pub use error::{Error, Result};
pub use filters::{BlackBoxFilter, Builtin, CountingFilter, ExternalFilter, FilterKind, FilterSpec, FnFilter};
pub use fixed_point::{
    anderson_step, chebyshev_omega, epsilon_step, irons_step, mann_step, picard_step, run_fixed_point, AndersonState,
    ChebyshevSchedule, FixedPointDriver, FixedPointMap, MapFn,
};
pub use gradient::{agd_step, run_gradient_descent, sgdr_lambda, AdamBias, AgdKind, AgdState, SgdrSchedule};
pub use harness::{
    aggregate_pmax, improvement_series, run_experiment, AccelKind, AccelSpec, Driver, ImprovementSummary, RunConfig,
};
pub use image::{psnr, Image, NormKind, SpectralSettings};
pub use io::{load_image, save_image};
pub use methods::{BoundProblem, MethodKind, MethodTag};
pub use trace::{Flag, IterationTrace, LoopOptions, Record, RunOutcome};
