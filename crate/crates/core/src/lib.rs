//! Learning model predictive control of a quadrotor flying a minimum-time
//! corridor task.
//!
//! Attitude is carried as a non-unit quaternion, the closed loop learns from its
//! own completed laps through a sampled safety set, and each control step solves
//! a relaxed optimal control problem with an in-crate SQP/interior-point stack.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod io;
pub mod safety_set;
pub mod so3;
pub mod solver;
pub mod task;

pub use error::{Error, Result};
