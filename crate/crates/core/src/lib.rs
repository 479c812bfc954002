#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bounds;
pub mod constraint;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod groupmass;
pub mod kernelgp;
pub mod linalg;
pub mod sampling;
pub mod tree;

pub use error::{Error, Result};
