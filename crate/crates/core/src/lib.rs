//! Gradient-based structure attacks on graph neural networks.
//!
//! The crate covers the graph data model and defenses ([`graph`]), the
//! differentiable models ([`models`]), victim and unrolled surrogate
//! training ([`training`]), edge-flip sets ([`flips`]) and the projected
//! randomized block coordinate descent attacks ([`attack`]): evasion,
//! meta-gradient poisoning, and the sequential and joint combinations of
//! the two.

pub mod attack;
mod error;
pub mod flips;
pub mod graph;
pub mod models;
pub mod seeds;
pub mod training;

pub use error::{Error, Result};
pub use flips::EdgeFlipSet;
pub use graph::{Graph, Mode, Splits};
