//! Simulator and numerics for federated probe-logit distillation over a
//! bandwidth-limited uplink.
//!
//! Nodes evaluate their local models on a shared probe set, quantize the
//! logits with a subtractively dithered uniform quantizer and send the
//! indices to an aggregator, which averages the reconstructions and fits a
//! softmax student. The crate provides the channel ([`quant`], [`wire`]), the
//! simplex numerics ([`softmax`]), closed-form rate bounds ([`bounds`]),
//! bit allocation across nodes ([`alloc`], [`adaptive`]) and the Monte Carlo
//! experiment drivers ([`sim`]).

// `!(x > 0.0)` is how NaN gets rejected alongside the range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod alloc;
pub mod bounds;
pub mod config;
pub mod error;
pub mod quant;
pub mod report;
pub mod rng;
pub mod sim;
pub mod softmax;
pub mod validate;
pub mod wire;

pub use error::{FpldError, Result};
