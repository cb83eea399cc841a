pub mod binarize;
pub mod dataset;
pub mod error;
pub mod mcts;
pub mod nln;
pub mod numerics;
pub mod operators;
pub mod pipeline;
pub mod rules;
pub mod synthetic;

pub use error::{Error, Result};
