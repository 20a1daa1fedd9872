pub mod cli;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod kernel;
pub mod lyapunov;
pub mod numerics;
pub mod position;
pub mod strategy;
pub mod value;

pub use error::{Error, Result};
