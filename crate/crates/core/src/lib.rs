//! Multi-failure localization for high-degree ROADM optical networks.
//!
//! The crate is layered bottom-up:
//!
//! * [`topology`]: network description, port budgets, component graph.
//! * [`provisioning`]: shortest-path first-fit lightpath routing.
//! * [`physical`]: dB power ledger and failure injection.
//! * [`monitoring`]: monitor deployment, snapshots, dataset generation.
//! * [`rules`]: threshold fitting and rules-based reasoning.
//! * [`mlp`]: per-component features and a small dense classifier.
//! * [`pipeline`]: the three localization engines and accuracy metrics.

pub mod mlp;
pub mod monitoring;
pub mod physical;
pub mod pipeline;
pub mod provisioning;
pub mod rules;
pub mod seed;
pub mod topology;
pub mod util;

pub use topology::{ComponentGraph, ComponentId, ComponentKind, NodeId, SlotId, Topology};
