//! Tensor-rank signals for small/large reasoning-model collaboration.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`linalg`], [`tt`]: dense tensors, a Jacobi thin SVD and the
//!   error-bounded tensor-train decomposition built on it.
//! * [`signals`]: sliding windows of step hidden states, window ranks and
//!   next-token entropy.
//! * [`routing`]: the per-step ContinueSRM / RouteLRM / Terminate policy.
//! * [`steering`]: keyword step classification, rank-filtered calibration and
//!   steering-vector extraction and injection.
//! * [`trace`], [`rgt`]: on-disk formats.
//! * [`generator`], [`simulator`]: synthetic traces and offline replay.

pub mod error;
pub mod generator;
pub mod linalg;
pub mod rgt;
pub mod routing;
pub mod signals;
pub mod simulator;
pub mod steering;
pub mod tensor;
pub mod trace;
pub mod tt;

pub use error::{Error, ErrorCategory, Result};
pub use tensor::{relative_error, Tensor};
pub use tt::{tt_decompose, tt_reconstruct, TtCore, TtDecomposition};
