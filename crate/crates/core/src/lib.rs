pub mod corpus;
pub mod error;
pub mod eval;
pub mod forge;
pub mod lex;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
