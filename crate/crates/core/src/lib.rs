pub mod brackets;
pub mod cli;
pub mod condvar;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod hamiltonize;
pub mod multiplier;
pub mod report;
pub mod routh;
pub mod sampling;
pub mod system;
pub mod systems;

pub use error::{Error, Result};
