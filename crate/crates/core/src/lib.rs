pub mod curriculum;
pub mod error;
pub mod harness;
pub mod hopper;
pub mod jumpstart;
pub mod neural;
pub mod ppo;
pub mod reward;
pub mod terrain;

pub use error::{Error, Result};
