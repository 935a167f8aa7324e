//! File formats, experiment configuration, evaluation reports and the
//! `gdrums` command line around [`gesture_drums_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod corpus;
mod error;
pub mod features;
pub mod pipeline;
pub mod report;
pub mod trace;
pub mod wav;

pub use error::{Error, ErrorKind, Result};
