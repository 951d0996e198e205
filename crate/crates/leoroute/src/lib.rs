//! Experiment harness around `leoroute-core`: config files, training,
//! batch runs, CSV outputs and figures.

pub mod cli;
pub mod config;
pub mod formats;
pub mod output;
pub mod plot;
pub mod study;
