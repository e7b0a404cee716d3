//! Energy management for a parallel mild hybrid: powertrain model, drive
//! cycles, dynamic programming for the equivalence factor, receding-horizon
//! control, a rule baseline and a neural network distilled from the
//! controller.

// `!(x > 0.0)` is the idiom here for "positive and not NaN"
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod cycles;
pub mod dnn;
pub mod dp;
pub mod error;
pub mod grid;
pub mod nmpc;
pub mod oracle;
pub mod powertrain;
pub mod sim;

pub use error::{Error, Result};
