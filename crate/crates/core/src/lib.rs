pub mod capmetrics;
pub mod captioner;
pub mod cli;
pub mod diffcore;
pub mod error;
pub mod geometry;
pub mod model;
pub mod relgraph;
pub mod scenedata;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
