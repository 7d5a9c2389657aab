#![no_std]
extern crate alloc;

pub mod data;
pub mod diversity;
pub mod error;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod train;

pub use error::{Error, Result};
pub use numerics::{Graph, Matrix, Var};
