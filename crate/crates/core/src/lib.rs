pub mod cell;
pub mod chair;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod expert;
pub mod harness;
pub mod learning;
pub mod metrics;
pub mod model;
pub mod tensor;

pub use error::{MogError, Result};
