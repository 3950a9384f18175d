//! Deterministic simulator and algorithm library for decentralized federated
//! learning (D-FL) over multi-hop wireless networks.
//!
//! The library covers the full loop of a joint routing-and-pruning D-FL
//! system:
//!
//! * [`netgen`] — random geometric topologies with Shannon-rate links,
//! * [`routing`] — broadcast spanning trees: MST / shortest-path / flooding
//!   baselines and the priority + client-aware link-threshold optimizer
//!   (`p_clt`) with its ablation variants,
//! * [`linkschedule`] — per-hop latency, the closed-form optimal model
//!   retention rate, and TDMA edge-coloring schedules,
//! * [`pruner`] — structured prefix channel pruning and the payload wire
//!   format,
//! * [`aggregator`] — per-element weighted aggregation and bias metrics,
//! * [`fltrainer`] — synchronous training rounds over synthetic tasks,
//! * [`analysis`] — empirical verification of the convergence bounds,
//! * [`enhanced`] — congestion avoidance (CAM) and priority scheduling with
//!   rerouting (FPSR) under per-node bandwidth caps and forwarding budgets,
//! * [`config`] — the experiment configuration document.
//!
//! Everything is seeded and deterministic: identical inputs produce
//! bit-identical outputs.

pub mod aggregator;
pub mod analysis;
pub mod config;
mod dsu;
pub mod enhanced;
mod error;
pub mod fltrainer;
pub mod linkschedule;
pub mod netgen;
pub mod pruner;
pub mod routing;
pub mod task;

pub use error::{Error, Result};
