//! Command-line driver for training, segmentation, evaluation and synthetic
//! fixtures. The binary is a thin clap layer over these modules.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod output;
pub mod synth;
