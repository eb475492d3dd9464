//! Pipeline companion to the `eqdisc-core` discovery library: spectral
//! benchmark solvers, dataset and artifact file formats, run configuration,
//! and the batch orchestration the `eqdisc` binary drives.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod solvers;
