//! File formats, configuration and the command-line tool around
//! [`factrank_core`].
//!
//! The binary is a thin layer over [`pipeline`]; everything it reads or
//! writes is defined in [`io`], [`index_file`], [`checkpoint`],
//! [`config`] and [`manifest`].

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod index_file;
pub mod io;
pub mod manifest;
pub mod pipeline;

pub use error::{Error, Result};
pub use factrank_core as core;
