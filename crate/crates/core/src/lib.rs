//! Building-stock transformation pathways.
//!
//! An [`twin::EnergyTwin`] describes buildings, demand profiles and installed
//! plant. [`model`] builds one MILP per building and stage, [`pathway`] runs
//! the multi-stage heuristic under retrofit rate caps and [`report`]
//! aggregates the resulting [`pathway::TransformationPath`].

pub mod catalog;
pub mod error;
pub mod fixture;
pub mod model;
pub mod pathway;
pub mod report;
pub mod scenario;
pub mod timegrid;
pub mod twin;

pub use error::{Error, Result};
