//! Negative-transfer laboratory: a small reverse-mode engine, the three
//! networks of a domain-adversarial model, gated and ungated training
//! objectives, synthetic source/target domains with controllable shift, and
//! the risk / negative-transfer-gap measurements built on top of them.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;

pub use autodiff::{Graph, NodeId, Tensor};
pub use error::{Error, Result};
pub mod data;
pub mod evaluation;
pub mod networks;
pub mod objectives;
pub mod scenarios;
pub mod training;
