//! Concept matching for federated continual learning.
//!
//! The simulator trains `K` global concept models across `N` clients whose
//! local data streams drift between hidden concepts. Each round, clients pick
//! the concept model with the lowest loss on their data and fine-tune it; the
//! server clusters the returned weights, averages each cluster, and matches
//! cluster models back onto concept models using a per-concept distance
//! record that only admits updates closer than the last accepted one.
//!
//! Modules, bottom-up:
//!
//! - [`model`]: dense classifier, gradients, Adam training.
//! - [`datagen`]: synthetic concepts and drifting client streams.
//! - [`cluster`]: kmeans, agglomerative, DBSCAN, adjusted Rand index.
//! - [`fedops`]: weight distances and FedAvg.
//! - [`matching`]: server and client concept matching, descent checks.
//! - [`orchestrator`]: the round loop for concept matching and vanilla FL.
//! - [`report`]: CSV/JSON output.
//! - [`cli`]: the `cmfl` command line.

pub mod cli;
pub mod cluster;
pub mod config;
pub mod datagen;
pub mod error;
pub mod fedops;
pub mod matching;
pub mod model;
pub mod orchestrator;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
