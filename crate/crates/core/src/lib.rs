//! Delay-independent robust adaptive output-feedback control of uncertain
//! strict-feedback-like systems whose input passes through delayed, uncertain
//! input unmodeled dynamics.
//!
//! The crate is organized around the pipeline
//! `model` → `gains` → `controller` → `sim` → `monitor`:
//!
//! * [`model`] defines the plant class, its bounding envelope, the built-in
//!   fourth-order example and a sampled assumption checker;
//! * [`gains`] synthesizes constant-shape observer/controller gains and the
//!   Lyapunov matrices certified on the coupled Lyapunov inequalities;
//! * [`controller`] is the dynamic output-feedback law with dual dynamic
//!   high-gain scaling (`r` for the nominal loop, `r_u` for the input dynamics);
//! * [`sim`] integrates the closed loop as a delay differential equation;
//! * [`monitor`] evaluates the composite Lyapunov function along trajectories.
//!
//! [`config`] reads the JSON run description and [`cli`] implements the
//! `delayscale` command-line tool on top of it.

pub mod cli;
pub mod config;
pub mod controller;
pub mod error;
pub mod gains;
pub mod linalg;
pub mod model;
pub mod monitor;
pub mod quadrature;
pub mod sim;

pub use error::{Error, Result};
