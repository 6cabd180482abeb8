pub mod acquisition;
pub mod cli;
pub mod config;
pub mod contrast;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod helmholtz;
pub mod inversion;
pub mod io;
pub mod jacobian;
pub mod plot;

pub use error::{Error, Result};
