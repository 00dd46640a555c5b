//! Memory-budgeted training toolkit: computation graphs, an execution
//! planner that trades recomputation against activation compression, the
//! activation codec itself, client selection, memory-budget prediction and a
//! federated round simulator built from those parts.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod device;
pub mod graph;
pub mod orchestrator;
pub mod fixtures;
pub mod planner;
pub mod predictor;
pub mod selector;
