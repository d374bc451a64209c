pub mod autodiff;
pub mod checks;
pub mod error;
pub mod graph;
pub mod gtl;
pub mod sea;
pub mod spectral;
pub mod train;

pub use error::{Result, SeaError};
