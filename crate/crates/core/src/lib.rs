//! DeepONet seismic inversion with acoustic finite-difference modelling and
//! adjoint-state full-waveform inversion.

mod error;
pub mod evaluation;
pub mod fwi;
pub mod geometry;
pub mod model;
pub mod npy;
pub mod preprocess;
pub mod training;
pub mod wave;

pub use error::{Error, Result};
