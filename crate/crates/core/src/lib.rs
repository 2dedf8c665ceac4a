pub mod attention;
pub mod backbone;
mod binio;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod ortho;
pub mod tensor;

pub use error::{Error, Result};
