//! Minimal layer toolkit on top of candle tensors.
//!
//! Parameters live in a [`ParamStore`] keyed by hierarchical dotted names
//! (`backbone.stage1.cv1.conv.weight`). Every layer is constructed through a
//! [`Scope`], which keeps initialization deterministic for a given seed and
//! construction order.

mod layers;
pub mod ops;
mod store;

pub use layers::{BatchNorm2d, Conv2d, ConvBnAct, LayerNorm, Linear};
pub use store::{ParamKind, ParamStore, Scope};
