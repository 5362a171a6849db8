//! Desk-scale harness for comparing federated averaging (FedAvg) and split
//! learning (SplitNN) on 1D-CNN classifiers, with exact byte accounting of
//! everything that crosses the wire.
//!
//! The crate is organized around a small set of subsystems:
//!
//! - [`tensor`] — dense f32 tensors, the unit of all model state and payloads
//! - [`nn`] — layers, loss, optimizers, range-wise forward/backward, gradient
//!   checking
//! - [`model`] — 1D-CNN classifier builder, parameter counting, cut-layer
//!   splitting
//! - [`data`] — CSV ingest, synthetic sequence generation, and the IID /
//!   imbalanced / non-IID partitioners
//! - [`transport`] — framed, typed, byte-counted channels (loopback and TCP)
//! - [`fl`] — FedAvg coordinator and client worker
//! - [`split`] — SplitNN coordinator and client worker with round-robin
//!   scheduling and client-weight handoff
//! - [`ensemble`] — rotation schedule training M models across K clients
//!   concurrently
//! - [`metrics`] — per-round records, accuracy evaluation, analytical
//!   communication estimators, CSV/JSON export
//! - [`config`] / [`runner`] — config-file driven experiment entry points
//!   backing the `fedsplit` binary
//!
//! See the `examples/` directory for one runnable example per capability;
//! `cargo run --example fl_loopback` is a good starting point.

pub mod config;
pub mod data;
pub mod engine;
pub mod ensemble;
pub mod fl;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod runner;
pub mod seed;
pub mod split;
pub mod tensor;
pub mod transport;

pub use tensor::Tensor;
