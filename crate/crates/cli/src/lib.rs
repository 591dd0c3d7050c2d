//! Command-line front end: CSV input, control-generating transforms,
//! configuration merging and report rendering.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod transform;
