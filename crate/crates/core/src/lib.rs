//! Mean-shift (density mode) clustering, a gradient-flow ground truth for
//! Gaussian mixtures, pairwise clustering risk, and numerical checks of the
//! accompanying bounds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod battery;
pub mod config;
pub mod density;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod mean_shift;
pub mod morse;
pub mod plot;
pub mod risk;
pub mod rng;
pub mod theory;
