//! Procedural generator for a compositional concept-learning benchmark.
//!
//! The library samples concepts from a probabilistic grammar over scene
//! properties, executes them exactly on schema scenes, filters and
//! deduplicates them into a hypothesis space, carves structured
//! generalization splits, builds few-shot episodes with hard or easy
//! negatives, and measures each split's compositionality gap with exact
//! strong/weak Bayesian oracles.

pub mod bits;
pub mod filter;
pub mod episode;
pub mod exec;
pub mod grammar;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod splits;
