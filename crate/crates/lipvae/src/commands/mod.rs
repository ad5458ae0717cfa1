//! The subcommands, callable as library functions.

mod attack;
mod certify;
mod train;

pub use attack::*;
pub use certify::*;
pub use train::*;
