//! Simulation and control of networked linear systems with a distributed
//! graph-recurrent controller.
//!
//! The crate covers the full pipeline:
//!
//! * [`graph`] — coupling/communication topologies, graph-shift operators,
//!   and Metropolis–Hastings consensus weights;
//! * [`system`] — networked discrete-time LTI plants, rollouts, and an LQR
//!   baseline;
//! * [`grnn`] — the graph-recurrent neural network controller, in both
//!   per-node and stacked form;
//! * [`training`] — per-node closed-form gradients and consensus-based
//!   distributed SGD;
//! * [`stability`] — sector/slope bounds, IQC multipliers, and a Lyapunov
//!   LMI certificate for the closed loop;
//! * [`simnet`] — a synchronous message-passing harness that enforces
//!   communication locality structurally and mirrors the matrix engine.
//!
//! Algorithm variants that make sense to swap at runtime (activations,
//! controllers) sit behind trait objects and are selected by registry name;
//! see [`activation::parse_activation`] and [`controller`].

pub mod activation;
pub mod controller;
pub mod error;
pub mod graph;
pub mod grnn;
pub mod linalg;
pub mod seed;
pub mod simnet;
pub mod stability;
pub mod system;
pub mod training;

pub use error::{Error, Result};
