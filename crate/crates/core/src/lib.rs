#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod datagen;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod rate;
pub mod rng;
pub mod rta;
pub mod trainer;

pub use error::{Error, Result};
