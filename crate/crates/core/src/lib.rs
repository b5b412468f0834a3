//! Numerical core for periodic patterns of the Lugiato-Lefever equation.

pub mod bloch;
pub mod damping;
pub mod eigen;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod modulation;
pub mod params;
pub mod wave;
pub mod whitham;

pub use error::{Error, Result};
pub use grid::{Grid, Lp};
pub use params::LleParams;
