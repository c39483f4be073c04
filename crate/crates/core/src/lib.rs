pub mod darray;
pub mod element;
pub mod error;
pub mod fsmpi;
pub mod hpcbench;
pub mod interval;
pub mod launcher;
pub mod mapdist;
pub mod pitfalls;

pub use error::{Error, Result};
