//! A small convolutional-network engine and bank-of-filter-trees transfer
//! learning: extract per-filter subnetworks from trained networks, pool
//! them into a bank, and fuse sampled trees into the frozen prefix of a new
//! network.

pub mod assembly;
pub mod bank;
pub(crate) mod codec;
pub mod error;
pub mod experiments;
pub mod filtertree;
pub mod model;
pub mod ops;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
