//! Malicious-user prediction for cloud data sharing.
//!
//! * [`ube`] scores a data access request from the requesting user's history.
//! * [`dataset`], [`model`] and [`fed`] train a small classifier over simulated
//!   clients by federated averaging.
//! * [`gate`] grants or denies a request using both signals.
//! * [`metrics`] reports accuracy, precision, recall and F1 per round.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod fed;
pub mod gate;
pub mod knowledge;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod ube;

pub use error::{Error, Result};
