pub mod beamformer;
pub mod error;
pub mod indices;
pub mod io;
pub mod localizer;
pub mod model;
pub mod numerics;
pub mod spectrum;
pub mod verify;

pub use error::{Error, Result};
