//! Temporal-difference networks on the seven-state random walk.
//!
//! A question network ([`qnet`]) says what every node predicts, an answer
//! network ([`anet`]) computes the predictions, and [`learner`] trains the
//! latter toward the former. [`oracle`] supplies exact ground truth and
//! [`harness`] runs the reference experiments.

pub mod anet;
pub mod env;
pub mod error;
pub mod harness;
pub mod learner;
pub mod oracle;
pub mod par;
pub mod qnet;

pub use error::{Error, Result};
