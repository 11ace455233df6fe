//! Binary-code collaborative filtering distilled from a graph-convolutional teacher.

pub mod data;
pub mod binindex;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod kv;
pub mod numerics;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};
