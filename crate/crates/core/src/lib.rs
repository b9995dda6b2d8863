//! Nexus dual-loop gradient approximation for multi-task training, with the
//! analytic oracles used to check its Taylor expansions and bounds.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autodiff_net;
pub mod checks;
pub mod error;
pub mod nexus;
pub mod numerics;
pub mod optimizers;
pub mod oracles;
pub mod tasks;

pub use error::{Error, Result};
pub use numerics::{ParameterVector, RngStream};
pub use tasks::{Objective, Task, TaskSet};
