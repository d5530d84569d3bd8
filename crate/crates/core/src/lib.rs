//! Seeded simulation of the feedback loop between a news recommender and a
//! population of politically typed readers.
//!
//! The crate is organised around the loop itself:
//!
//! - [`corpus`] synthesizes articles (topics + stance) and typology-based users.
//! - [`behavior`] scores articles for users, draws clicks and applies opinion drift.
//! - [`recommender`] is the matrix-factorization model plus the random bootstrap policy.
//! - [`intervention`] holds the stance-calibrated greedy re-ranker.
//! - [`simulation`] runs bootstrap, the live iteration loop and periodic retraining.
//! - [`metrics`] computes mean political stance of reads (MPS) and of preferences (UMPS).
//! - [`config`], [`io`] and [`report`] cover configuration files, CSV formats and
//!   plot-ready exports.

pub mod behavior;
pub mod config;
pub mod corpus;
pub mod error;
pub mod intervention;
pub mod io;
pub mod metrics;
pub mod recommender;
pub mod report;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};

/// Version string recorded in output manifests.
pub const ARTIFACT_VERSION: &str = concat!("newsloop ", env!("CARGO_PKG_VERSION"));
