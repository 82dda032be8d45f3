//! Phase diagram of a directed copolymer in a random emulsion, below the
//! percolation threshold of the oil blocks.

// Domain guards are written `!(x >= lo)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod cli;
pub mod entropy;
pub mod error;
pub mod finite_model;
pub mod frequencies;
pub mod interface;
pub mod noise;
pub mod numerics;
pub mod phases;
pub mod solver;

pub use error::{Error, Result};
