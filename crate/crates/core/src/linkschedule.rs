//! Hop latency, the closed-form optimal model retention rate, and the
//! TDMA slot / edge-coloring schedule.
//!
//! A transmitter's hop takes `payload_bits / v~` seconds where `v~` is the
//! slowest link in its broadcast group, so a client's total transmission time
//! is exactly `payload_bits * tree_cost`. Inverting that identity against the
//! per-round deadline gives the largest retention rate a route can support.

use crate::error::{Error, Result};
use crate::netgen::Topology;
use crate::routing::BroadcastTree;

/// Per-round latency budget: `t_max = slot_s * frames * clients`-independent
/// form `t_max = slot_s * frames` per client route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyBudget {
    pub t_max_s: f64,
    pub slot_s: f64,
    pub frames: u32,
}

impl LatencyBudget {
    pub fn new(slot_s: f64, frames: u32) -> Result<Self> {
        if !(slot_s > 0.0) || frames == 0 {
            return Err(Error::InvalidConfig("slot duration and frame count must be positive".into()));
        }
        Ok(Self { t_max_s: slot_s * frames as f64, slot_s, frames })
    }

    /// Single frame whose slot spans the whole budget.
    pub fn from_t_max(t_max_s: f64) -> Result<Self> {
        Self::new(t_max_s, 1)
    }
}

/// Transmission rate of the slowest link in transmitter `i`'s broadcast
/// group.
pub fn bottleneck_rate(tree: &BroadcastTree, topo: &Topology, i: usize) -> Result<f64> {
    let group = tree.broadcast_group(topo, i);
    group
        .iter()
        .map(|&j| topo.rate(i, j))
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |m| m.min(r))))
        .ok_or(Error::NotATransmitter(i))
}

/// One-hop forwarding latency in seconds.
pub fn hop_latency(payload_bits: u64, bottleneck_rate: f64) -> f64 {
    payload_bits as f64 / bottleneck_rate
}

/// Total route latency: the sum of hop latencies over all transmitters.
/// Equals `payload_bits * tree_cost` up to rounding.
pub fn total_latency(tree: &BroadcastTree, topo: &Topology, payload_bits: u64) -> f64 {
    tree.transmitters()
        .iter()
        .map(|&i| {
            let rate = bottleneck_rate(tree, topo, i).expect("transmitters have groups");
            hop_latency(payload_bits, rate)
        })
        .sum()
}

/// Closed-form optimal retention rate for a route of the given cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetentionDecision {
    /// `min(1, t_max / (K * bits_per_param * cost))`
    pub r_star: f64,
    /// False when even a single parameter cannot meet the deadline.
    pub feasible: bool,
}

pub fn optimal_retention(
    cost_s_per_bit: f64,
    k_params: u64,
    bits_per_param: u32,
    t_max_s: f64,
) -> Result<RetentionDecision> {
    if !(cost_s_per_bit > 0.0) {
        return Err(Error::NonPositiveCost);
    }
    let full_bits = k_params as f64 * bits_per_param as f64;
    let r_star = (t_max_s / (full_bits * cost_s_per_bit)).min(1.0);
    let feasible = bits_per_param as f64 * cost_s_per_bit <= t_max_s;
    Ok(RetentionDecision { r_star, feasible })
}

/// TDMA schedule: slot `n` of every frame belongs to client `n`, and links
/// are greedily edge-colored so no two links sharing an endpoint reuse a
/// color. The greedy sweep over lexicographically ordered edges uses at most
/// `2 * max_degree - 1` colors.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub slot_of_client: Vec<usize>,
    /// Color per edge, in the topology's edge order.
    pub edge_color: Vec<usize>,
    pub colors_used: usize,
}

pub fn tdma_schedule(topo: &Topology) -> Schedule {
    let n = topo.node_count();
    let m = topo.edges().len();
    let mut edge_color = vec![usize::MAX; m];
    let mut used_at: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (idx, e) in topo.edges().iter().enumerate() {
        let mut color = 0usize;
        loop {
            if !used_at[e.a].contains(&color) && !used_at[e.b].contains(&color) {
                break;
            }
            color += 1;
        }
        edge_color[idx] = color;
        used_at[e.a].push(color);
        used_at[e.b].push(color);
    }
    let colors_used = edge_color.iter().map(|&c| c + 1).max().unwrap_or(0);
    Schedule { slot_of_client: (0..n).collect(), edge_color, colors_used }
}

impl Schedule {
    /// True when no two edges sharing an endpoint have the same color.
    pub fn is_proper(&self, topo: &Topology) -> bool {
        let edges = topo.edges();
        for i in 0..edges.len() {
            for j in (i + 1)..edges.len() {
                let (e, f) = (&edges[i], &edges[j]);
                let adjacent = e.a == f.a || e.a == f.b || e.b == f.a || e.b == f.b;
                if adjacent && self.edge_color[i] == self.edge_color[j] {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_json(&self, topo: &Topology, budget: &LatencyBudget) -> serde_json::Value {
        let mut by_color: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.colors_used];
        for (idx, e) in topo.edges().iter().enumerate() {
            by_color[self.edge_color[idx]].push((e.a, e.b));
        }
        serde_json::json!({
            "schema": "dflsim/schedule-v1",
            "slot_of_client": self.slot_of_client,
            "slot_s": budget.slot_s,
            "frames": budget.frames,
            "t_max_s": budget.t_max_s,
            "colors_used": self.colors_used,
            "links_by_color": by_color,
        })
    }
}
