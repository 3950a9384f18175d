//! Broadcast spanning trees over a client topology.
//!
//! A client's model is forwarded along a spanning tree rooted at that client.
//! Every non-leaf node is a transmitter; the latency of its hop is set by the
//! slowest link in its broadcast group, so the objective minimized here is
//! the sum over transmitters of the maximum link weight in their group.
//!
//! Besides the three baselines (minimum spanning tree, shortest-path tree,
//! flooding), this module implements `p_clt` — priority and client-aware
//! link-threshold routing. Starting from the MST, waves of link modification
//! re-parent nodes onto links of similar or smaller weight so that one slow
//! link does not throttle a whole hop; a cost guard rejects any re-parenting
//! that would raise the objective, which keeps the cost non-increasing across
//! all stages.

use crate::dsu::DisjointSet;
use crate::error::{Error, Result};
use crate::netgen::Topology;
use serde::{Deserialize, Serialize};

/// Which nodes a transmitter pays for in the latency objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupSemantics {
    /// The transmitter forwards to its tree children only.
    Children,
    /// The transmitter broadcasts indiscriminately to every topology
    /// neighbor (flooding cost semantics). The tree still records
    /// first-reach parents.
    AllNeighbors,
}

/// A rooted spanning tree with its transmitter schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastTree {
    root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Non-leaf nodes in breadth-first hop order from the root.
    transmitters: Vec<usize>,
    group: GroupSemantics,
}

impl BroadcastTree {
    /// Builds and validates a tree from a parent array. Children are stored
    /// in ascending id order and transmitters in BFS hop order, so two trees
    /// with the same parent array compare equal.
    pub fn from_parents(
        root: usize,
        parent: Vec<Option<usize>>,
        topo: &Topology,
        group: GroupSemantics,
    ) -> Result<Self> {
        let n = topo.node_count();
        if parent.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: parent.len() });
        }
        if root >= n {
            return Err(Error::InvalidTree(format!("root {root} out of range")));
        }
        if parent[root].is_some() {
            return Err(Error::InvalidTree("root must not have a parent".into()));
        }
        let mut children = vec![Vec::new(); n];
        for (v, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return Err(Error::InvalidTree(format!("parent of {v} out of range")));
                }
                if !topo.has_edge(v, p) {
                    return Err(Error::InvalidTree(format!("parent link ({p},{v}) is not a topology edge")));
                }
                children[p].push(v);
            } else if v != root {
                return Err(Error::InvalidTree(format!("non-root node {v} has no parent")));
            }
        }
        for list in &mut children {
            list.sort_unstable();
        }
        // BFS from the root must reach every node exactly once.
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(root);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &c in &children[u] {
                if seen[c] {
                    return Err(Error::InvalidTree("cycle detected".into()));
                }
                seen[c] = true;
                queue.push_back(c);
            }
        }
        if order.len() != n {
            return Err(Error::InvalidTree("tree does not span all nodes".into()));
        }
        let transmitters = order.into_iter().filter(|&u| !children[u].is_empty()).collect();
        Ok(Self { root, parent, children, transmitters, group })
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    /// Transmitters in hop order (every node appears after its parent).
    pub fn transmitters(&self) -> &[usize] {
        &self.transmitters
    }

    pub fn group_semantics(&self) -> GroupSemantics {
        self.group
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    /// The nodes transmitter `i` pays for in its hop.
    pub fn broadcast_group(&self, topo: &Topology, i: usize) -> Vec<usize> {
        match self.group {
            GroupSemantics::Children => self.children[i].clone(),
            GroupSemantics::AllNeighbors => topo.neighbors(i).collect(),
        }
    }

    /// Maximum link weight inside transmitter `i`'s broadcast group.
    pub fn hop_max_weight(&self, topo: &Topology, i: usize) -> Option<f64> {
        self.broadcast_group(topo, i)
            .iter()
            .map(|&j| topo.chi(i, j))
            .fold(None, |acc, w| Some(acc.map_or(w, |m: f64| m.max(w))))
    }

    /// JSON dump: root, parent array (-1 for the root), cost, transmitter
    /// order and the per-hop maximum weight breakdown.
    pub fn to_json(&self, topo: &Topology) -> serde_json::Value {
        let parent: Vec<i64> = self
            .parent
            .iter()
            .map(|p| p.map_or(-1, |v| v as i64))
            .collect();
        let hops: Vec<serde_json::Value> = self
            .transmitters
            .iter()
            .map(|&i| {
                serde_json::json!({
                    "transmitter": i,
                    "group": self.broadcast_group(topo, i),
                    "max_weight": self.hop_max_weight(topo, i),
                })
            })
            .collect();
        serde_json::json!({
            "root": self.root,
            "parent": parent,
            "cost": tree_cost(self, topo),
            "transmitters": self.transmitters,
            "hops": hops,
        })
    }
}

/// Sum over transmitters of the maximum link weight in their broadcast
/// group, in s/bit. An isolated single-node tree costs zero.
pub fn tree_cost(tree: &BroadcastTree, topo: &Topology) -> f64 {
    tree.transmitters()
        .iter()
        .map(|&i| tree.hop_max_weight(topo, i).unwrap_or(0.0))
        .sum()
}

/// Routing configuration for `p_clt` and its ablation variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    /// Maximum allowed weight gap between a new link and the hop's current
    /// maximum (the weight-gap admission condition).
    pub theta: f64,
    /// Number of max-bound modification stages.
    pub iterations: u32,
    /// Expand high-priority nodes first within a wave; FIFO otherwise.
    pub use_node_priority: bool,
    /// Run the single weight-gap stage after MST initialization.
    pub use_condition_theta: bool,
    /// Run the max-bound stages.
    pub use_condition_max: bool,
    /// Count the parent link in node priority (default: children only).
    pub priority_by_tree_degree: bool,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            theta: 0.1,
            iterations: 3,
            use_node_priority: true,
            use_condition_theta: true,
            use_condition_max: true,
            priority_by_tree_degree: false,
        }
    }
}

/// Admission condition tested when re-parenting a node onto transmitter `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkCondition {
    /// `|chi(c,v) - chi_max(c)| <= theta`
    WeightGap(f64),
    /// `chi(c,v) <= chi_max(c)`
    MaxBound,
}

impl LinkCondition {
    fn admits(&self, new_weight: f64, group_max: f64) -> bool {
        match *self {
            LinkCondition::WeightGap(theta) => (new_weight - group_max).abs() <= theta,
            LinkCondition::MaxBound => new_weight <= group_max,
        }
    }
}

/// Minimum spanning tree by total link weight (Kruskal), rooted at `root`.
/// Ties are broken by lexicographic edge order.
pub fn kruskal_tree(topo: &Topology, root: usize) -> Result<BroadcastTree> {
    let n = topo.node_count();
    let mut order: Vec<usize> = (0..topo.edges().len()).collect();
    order.sort_by(|&x, &y| {
        let (ex, ey) = (&topo.edges()[x], &topo.edges()[y]);
        ex.weight
            .partial_cmp(&ey.weight)
            .expect("weights are finite")
            .then_with(|| (ex.a, ex.b).cmp(&(ey.a, ey.b)))
    });
    let mut dsu = DisjointSet::new(n);
    let mut picked = vec![Vec::new(); n];
    for idx in order {
        let e = &topo.edges()[idx];
        if dsu.union(e.a, e.b) {
            picked[e.a].push(e.b);
            picked[e.b].push(e.a);
        }
    }
    if dsu.components() != 1 {
        return Err(Error::Disconnected);
    }
    root_at(topo, root, &picked, GroupSemantics::Children)
}

/// Shortest-path tree by cumulative link weight (Bellman-Ford). When two
/// paths tie, the smaller predecessor id wins.
pub fn bellman_spt(topo: &Topology, root: usize) -> Result<BroadcastTree> {
    let n = topo.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    dist[root] = 0.0;
    for _ in 0..n.saturating_sub(1) {
        let mut changed = false;
        for e in topo.edges() {
            for (u, v) in [(e.a, e.b), (e.b, e.a)] {
                if dist[u].is_finite() {
                    let cand = dist[u] + e.weight;
                    if cand < dist[v] {
                        dist[v] = cand;
                        parent[v] = Some(u);
                        changed = true;
                    } else if cand == dist[v] {
                        if let Some(p) = parent[v] {
                            if u < p {
                                parent[v] = Some(u);
                                changed = true;
                            }
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    if dist.iter().any(|d| !d.is_finite()) {
        return Err(Error::Disconnected);
    }
    BroadcastTree::from_parents(root, parent, topo, GroupSemantics::Children)
}

/// Breadth-first flooding tree. Children are the neighbors first reached
/// through a node (ties go to the smaller transmitter id); for cost purposes
/// every transmitter broadcasts to all of its topology neighbors.
pub fn flood_tree(topo: &Topology, root: usize) -> Result<BroadcastTree> {
    let n = topo.node_count();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut frontier = vec![root];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        // Ascending frontier order gives the smallest-id transmitter claim.
        for &u in &frontier {
            for v in topo.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    next.push(v);
                }
            }
        }
        next.sort_unstable();
        frontier = next;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Disconnected);
    }
    BroadcastTree::from_parents(root, parent, topo, GroupSemantics::AllNeighbors)
}

fn root_at(
    topo: &Topology,
    root: usize,
    adjacency: &[Vec<usize>],
    group: GroupSemantics,
) -> Result<BroadcastTree> {
    let n = topo.node_count();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(root);
    while let Some(u) = queue.pop_front() {
        let mut nbrs = adjacency[u].clone();
        nbrs.sort_unstable();
        for v in nbrs {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    BroadcastTree::from_parents(root, parent, topo, group)
}

/// Per-node priority: the size of the node's broadcast group, or its full
/// tree degree when `by_tree_degree` is set.
pub fn node_priority(tree: &BroadcastTree, by_tree_degree: bool) -> Vec<usize> {
    (0..tree.node_count())
        .map(|i| {
            let mut q = tree.children(i).len();
            if by_tree_degree && tree.parent(i).is_some() {
                q += 1;
            }
            q
        })
        .collect()
}

/// One wave sweep of link modification.
///
/// Nodes are processed starting from the root. For the current node `c`,
/// every non-tree neighbor `v` whose link admits against the maximum weight
/// of `c`'s current broadcast group is re-parented onto `c`; the link to
/// `v`'s previous parent is removed. A re-parenting that would strictly
/// increase the global tree cost is skipped, so the cost of the returned
/// tree never exceeds the input's. Each node is processed exactly once; the
/// next wave is the accumulated candidate set, sorted by descending priority
/// when enabled (ties to the smaller id) and in FIFO order otherwise.
pub fn modify_links(
    tree: &BroadcastTree,
    topo: &Topology,
    condition: LinkCondition,
    config: &RoutingConfig,
) -> BroadcastTree {
    let n = tree.node_count();
    let root = tree.root();
    // Priorities are frozen from the input tree for the whole sweep.
    let priority = node_priority(tree, config.priority_by_tree_degree);

    let mut parent: Vec<Option<usize>> = tree.parents().to_vec();
    let mut children: Vec<Vec<usize>> = (0..n).map(|i| tree.children(i).to_vec()).collect();
    let mut cost = cost_of(&children, topo);

    let mut processed = vec![false; n];
    let mut queued = vec![false; n];
    let mut processed_count = 0usize;
    let mut wave = vec![root];
    queued[root] = true;

    while processed_count < n {
        if wave.is_empty() {
            // Candidate flow can starve if a subtree was moved under an
            // already-processed node; resume with the remaining nodes.
            wave = (0..n).filter(|&i| !processed[i]).collect();
        }
        let mut candidates: Vec<usize> = Vec::new();
        for &c in &wave {
            processed[c] = true;
            processed_count += 1;
            for &child in &children[c] {
                if !queued[child] && !processed[child] {
                    queued[child] = true;
                    candidates.push(child);
                }
            }
            if children[c].is_empty() {
                // No reference link to compare against.
                continue;
            }
            for v in topo.neighbors(c) {
                // Skip links already in the tree.
                if parent[v] == Some(c) || parent[c] == Some(v) {
                    continue;
                }
                // Re-parenting an ancestor would disconnect the tree.
                if is_ancestor(&parent, v, c) {
                    continue;
                }
                let group_max = children[c]
                    .iter()
                    .map(|&j| topo.chi(c, j))
                    .fold(f64::NEG_INFINITY, f64::max);
                if !condition.admits(topo.chi(c, v), group_max) {
                    continue;
                }
                let old_parent = parent[v].expect("non-root candidate has a parent");
                children[old_parent].retain(|&x| x != v);
                children[c].push(v);
                parent[v] = Some(c);
                let new_cost = cost_of(&children, topo);
                if new_cost > cost {
                    // Revert: the admission condition alone does not bound
                    // the freed parent's remaining hop.
                    children[c].retain(|&x| x != v);
                    children[old_parent].push(v);
                    parent[v] = Some(old_parent);
                } else {
                    cost = new_cost;
                    if !queued[v] && !processed[v] {
                        queued[v] = true;
                        candidates.push(v);
                    }
                }
            }
        }
        if config.use_node_priority {
            candidates.sort_by(|&a, &b| priority[b].cmp(&priority[a]).then(a.cmp(&b)));
        }
        wave = candidates;
    }

    BroadcastTree::from_parents(root, parent, topo, GroupSemantics::Children)
        .expect("link modification preserves tree validity")
}

fn is_ancestor(parent: &[Option<usize>], candidate: usize, mut node: usize) -> bool {
    loop {
        if node == candidate {
            return true;
        }
        match parent[node] {
            Some(p) => node = p,
            None => return false,
        }
    }
}

fn cost_of(children: &[Vec<usize>], topo: &Topology) -> f64 {
    let mut total = 0.0;
    for (i, kids) in children.iter().enumerate() {
        if kids.is_empty() {
            continue;
        }
        let mut max_w = f64::NEG_INFINITY;
        for &j in kids {
            max_w = max_w.max(topo.chi(i, j));
        }
        total += max_w;
    }
    total
}

/// Result of a full `p_clt` run: the optimized tree, the transmitter order,
/// and the objective after every stage (MST, weight-gap stage if enabled,
/// then each max-bound stage).
#[derive(Debug, Clone)]
pub struct PCltOutcome {
    pub tree: BroadcastTree,
    pub transmitter_order: Vec<usize>,
    pub stage_costs: Vec<f64>,
}

/// Priority and client-aware link-threshold routing: MST initialization, one
/// weight-gap modification stage, then `iterations` max-bound stages. The
/// stage costs are non-increasing.
pub fn p_clt(topo: &Topology, root: usize, config: &RoutingConfig) -> Result<PCltOutcome> {
    let mut tree = kruskal_tree(topo, root)?;
    let mut stage_costs = vec![tree_cost(&tree, topo)];
    if config.use_condition_theta {
        tree = modify_links(&tree, topo, LinkCondition::WeightGap(config.theta), config);
        stage_costs.push(tree_cost(&tree, topo));
    }
    if config.use_condition_max {
        for _ in 0..config.iterations {
            tree = modify_links(&tree, topo, LinkCondition::MaxBound, config);
            stage_costs.push(tree_cost(&tree, topo));
        }
    }
    let transmitter_order = tree.transmitters().to_vec();
    Ok(PCltOutcome { tree, transmitter_order, stage_costs })
}

/// Named routing schemes accepted by the experiment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Full optimizer: node priority, weight-gap stage, max-bound stages.
    PClt,
    /// Ablation: FIFO waves instead of priority ordering.
    NpClt,
    /// Ablation: no weight-gap stage.
    PNclt,
    /// Ablation: FIFO waves and no weight-gap stage.
    NpNclt,
    /// Weight-gap stage only.
    GapOnly,
    /// Max-bound stages only.
    MaxOnly,
    Kruskal,
    Bellman,
    Flood,
}

impl Scheme {
    pub const ALL: [Scheme; 9] = [
        Scheme::PClt,
        Scheme::NpClt,
        Scheme::PNclt,
        Scheme::NpNclt,
        Scheme::GapOnly,
        Scheme::MaxOnly,
        Scheme::Kruskal,
        Scheme::Bellman,
        Scheme::Flood,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::PClt => "p_clt",
            Scheme::NpClt => "np_clt",
            Scheme::PNclt => "p_nclt",
            Scheme::NpNclt => "np_nclt",
            Scheme::GapOnly => "gap_only",
            Scheme::MaxOnly => "max_only",
            Scheme::Kruskal => "kruskal",
            Scheme::Bellman => "bellman",
            Scheme::Flood => "flood",
        }
    }

    /// Flag overrides applied on top of a base routing configuration.
    pub fn routing_config(&self, base: &RoutingConfig) -> RoutingConfig {
        let mut cfg = base.clone();
        match self {
            Scheme::PClt => {}
            Scheme::NpClt => cfg.use_node_priority = false,
            Scheme::PNclt => cfg.use_condition_theta = false,
            Scheme::NpNclt => {
                cfg.use_node_priority = false;
                cfg.use_condition_theta = false;
            }
            Scheme::GapOnly => cfg.use_condition_max = false,
            Scheme::MaxOnly => cfg.use_condition_theta = false,
            Scheme::Kruskal | Scheme::Bellman | Scheme::Flood => {}
        }
        cfg
    }

    pub fn build_tree(&self, topo: &Topology, root: usize, base: &RoutingConfig) -> Result<BroadcastTree> {
        match self {
            Scheme::Kruskal => kruskal_tree(topo, root),
            Scheme::Bellman => bellman_spt(topo, root),
            Scheme::Flood => flood_tree(topo, root),
            _ => Ok(p_clt(topo, root, &self.routing_config(base))?.tree),
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .iter()
            .find(|scheme| scheme.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown routing scheme {s:?}")))
    }
}
