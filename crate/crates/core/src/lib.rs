pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod forms;
pub mod geometry;
pub mod io;
pub mod lifting;
pub mod linalg;
pub mod mms;
pub mod quadrature;
pub mod solver;
pub mod spaces;
pub mod verify;

pub use error::{Error, Result};
