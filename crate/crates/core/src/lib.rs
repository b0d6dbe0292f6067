pub mod calendar;
pub mod datagen;
pub mod embstore;
pub mod error;
pub mod eval;
pub mod models;
pub mod nncore;
pub mod pipeline;

pub use error::{Error, Result};
