//! Optimization-complexity scheduling for Gaussian-splatting training.
//!
//! The crate has two halves. [`spectra`] and [`schedule`] turn a set of
//! training views into a per-iteration rendering-resolution curve and a
//! per-iteration primitive budget. [`splat2d`] and [`trainer`] are a small
//! CPU 2D splatting backbone that consumes those schedules, so the cost
//! reduction can be measured end to end against an unscheduled baseline.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod format;
pub mod image;
pub mod schedule;
pub mod spectra;
pub mod splat2d;
pub mod trainer;

pub use crate::error::{Error, Result};
pub use crate::image::Image;
