pub mod bmo;
pub mod cli;
pub mod error;
pub mod exponent;
pub mod expr;
pub mod fractional;
pub mod grid;
pub mod hardy;
pub mod lebesgue;
pub mod maximal;
pub mod semigroup;
pub mod suites;
pub mod tent;

pub use error::{Error, Result};
