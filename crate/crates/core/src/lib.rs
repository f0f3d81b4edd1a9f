//! Scene-attribute mining and multi-task attribute/scene recognition heads.

#![allow(clippy::needless_range_loop)]

pub mod annotation;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
