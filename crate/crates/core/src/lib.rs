pub mod encoding;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod selftest;
pub mod synthdata;
pub mod textbank;
pub mod training;

pub use error::{Error, Result};
