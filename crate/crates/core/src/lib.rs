//! Causal audio transformer: multi-resolution multi-filter features, a
//! filter-partitioned attention encoder, and a training objective that adds
//! a reconstruction loss and a necessity/sufficiency (PNS) loss to
//! cross-entropy. Everything runs on a small `f64` reverse-mode tape.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::type_complexity)]

pub mod causal;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
