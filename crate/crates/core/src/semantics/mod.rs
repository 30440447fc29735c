//! Translation of an FMT into its synchronized CTMC.

mod compile;
mod elements;
mod guards;
mod prism;

pub use compile::*;
pub use elements::*;
pub use guards::*;
pub use prism::export_prism;
