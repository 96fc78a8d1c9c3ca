pub mod dno;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod io_cli;
pub mod operators;
pub mod solitary;
pub mod spectra;

pub use error::{Result, WaveError};
