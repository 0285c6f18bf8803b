//! Collaborative lane-merge planning for one human-driven and one
//! autonomous car on a two-lane road.
//!
//! - [`model`]: state, actions, dynamics, collision and reward.
//! - [`planner`]: the joint-action search, its exhaustive oracle and the
//!   selfish nested baseline.
//! - [`sim`]: closed-loop trials, JSON Lines logs and replay.
//! - [`experiments`]: condition grid, batch runs, summaries and CSV export.
//! - [`stats`]: Student's t-test and one-way ANOVA.

pub mod model;
pub mod planner;
pub mod stats;
pub mod sim;
pub mod experiments;
