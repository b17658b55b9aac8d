//! Numerical toolkit for weighted Hardy spaces H²_β.
//!
//! Weight sequences, hereditary calculus and gramians, Cholesky-built
//! colligation families with their transfer functions, reproducing kernels,
//! characteristic function families and the time-varying system they realize.

pub mod colligation;
pub mod error;
pub mod hereditary;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod model;
mod series;
pub mod syssim;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec};
pub use weights::{WeightSequence, WeightSpec};
