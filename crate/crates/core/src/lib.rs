//! Outlier-resistant estimation with ℓ0 constraints on an outlyingness
//! vector and ℓ2 shrinkage.

pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod oracle;
pub mod select;
pub mod sim;
pub mod solver;
pub mod threshold;

pub use error::{Error, Result};
