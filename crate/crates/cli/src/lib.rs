//! Batch driver for the gland segmentation pipeline: dataset ingestion,
//! configuration, and the `train`, `segment` and `evaluate` commands.

pub mod app;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod overlay;
