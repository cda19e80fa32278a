//! Numeric substrate: dense matrices, reverse-mode differentiation, Adam
//! and a finite-difference gradient checker. Everything is `f64`.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamError};
pub use matrix::Matrix;
pub use params::{AdamConfig, AdamState, BoundParams, ParamId, ParamStore};
pub(crate) use params::shared;
pub use tape::{relaxed_bernoulli, sigmoid, Fault, Gradients, Tape, Var, MASK_CLAMP};
