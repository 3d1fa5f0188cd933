//! Node cardinality estimation for slotted random-access networks.
//!
//! The crate simulates lottery-frame, balls-and-bins and 3-SS-BB trials over
//! Markov-modulated populations and estimates the number of active nodes per
//! frame with either the classical SRC_s / BB-Aware estimators or a student
//! network trained by privileged feature distillation: a teacher sees the
//! per-slot transmitter counts and the true previous population, and the
//! student learns from public slot outcomes with a loss that mixes its own
//! error with the teacher's.

pub mod config;
pub mod error;
pub mod experiment;
pub mod features;
pub mod neural;
pub mod protocols;
pub mod runtime;
pub mod seed;
pub mod setting;
pub mod training;
pub mod workload;

pub use error::{Error, Result};
