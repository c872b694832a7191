pub mod error;
pub mod fem;
pub mod local;
pub mod material;
pub mod sim;
pub mod solver;
pub mod verify;
pub mod voigt;

pub use error::{Error, Result};
