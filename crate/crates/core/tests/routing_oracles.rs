//! Brute-force oracles for the routing algorithms on small graphs: exhaustive
//! spanning-tree enumeration for the MST and the broadcast objective, and
//! exhaustive simple-path search for the shortest-path tree.

use dflsim_core::netgen::Topology;
use dflsim_core::routing::{
    bellman_spt, flood_tree, kruskal_tree, p_clt, tree_cost, BroadcastTree, GroupSemantics,
    RoutingConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random connected weighted graph on up to `max_n` nodes: a random spanning
/// tree plus random extra edges.
fn random_connected(rng: &mut ChaCha8Rng, max_n: usize) -> Topology {
    let n = rng.gen_range(2..=max_n);
    let mut links: Vec<(usize, usize, f64)> = Vec::new();
    let mut present = std::collections::HashSet::new();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        present.insert((u, v));
        links.push((u, v, 1.0 / rng.gen_range(0.1..10.0f64)));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if !present.contains(&(i, j)) && rng.gen_bool(0.45) {
                present.insert((i, j));
                links.push((i, j, 1.0 / rng.gen_range(0.1..10.0f64)));
            }
        }
    }
    Topology::from_rates(n, &links).unwrap()
}

/// All spanning trees as parent arrays rooted at `root`, via edge-subset
/// enumeration.
fn enumerate_spanning_trees(topo: &Topology, root: usize) -> Vec<Vec<Option<usize>>> {
    let n = topo.node_count();
    let m = topo.edges().len();
    let mut out = Vec::new();
    if n == 1 {
        return vec![vec![None]];
    }
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        let mut adj = vec![Vec::new(); n];
        for (idx, e) in topo.edges().iter().enumerate() {
            if mask & (1 << idx) != 0 {
                adj[e.a].push(e.b);
                adj[e.b].push(e.a);
            }
        }
        // Orient from the root; a disconnected subset will not reach all.
        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[root] = true;
        let mut queue = std::collections::VecDeque::from([root]);
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        if reached == n {
            out.push(parent);
        }
    }
    out
}

fn parent_weight_total(topo: &Topology, parent: &[Option<usize>]) -> f64 {
    parent
        .iter()
        .enumerate()
        .filter_map(|(v, p)| p.map(|p| topo.chi(v, p)))
        .sum()
}

/// All simple-path distances from `root` by DFS.
fn exhaustive_distances(topo: &Topology, root: usize) -> Vec<f64> {
    let n = topo.node_count();
    let mut best = vec![f64::INFINITY; n];
    best[root] = 0.0;
    let mut visited = vec![false; n];
    visited[root] = true;
    fn dfs(
        topo: &Topology,
        u: usize,
        cost: f64,
        visited: &mut Vec<bool>,
        best: &mut Vec<f64>,
    ) {
        for v in topo.neighbors(u) {
            if !visited[v] {
                let c = cost + topo.chi(u, v);
                if c < best[v] {
                    best[v] = c;
                }
                visited[v] = true;
                dfs(topo, v, c, visited, best);
                visited[v] = false;
            }
        }
    }
    dfs(topo, root, 0.0, &mut visited, &mut best);
    best
}

#[test]
fn kruskal_matches_exhaustive_minimum_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..200 {
        let topo = random_connected(&mut rng, 6);
        let trees = enumerate_spanning_trees(&topo, 0);
        assert!(!trees.is_empty());
        let brute_min = trees
            .iter()
            .map(|p| parent_weight_total(&topo, p))
            .fold(f64::INFINITY, f64::min);
        let mst = kruskal_tree(&topo, 0).unwrap();
        let total = parent_weight_total(&topo, mst.parents());
        assert!(
            (total - brute_min).abs() <= 1e-9 * brute_min.max(1.0),
            "kruskal {total} vs brute {brute_min}"
        );
    }
}

#[test]
fn k4_with_distinct_weights_matches_enumeration() {
    // All 16 spanning trees of K4 are enumerated by the oracle.
    let links = [
        (0usize, 1usize, 1.0f64),
        (0, 2, 2.0),
        (0, 3, 3.0),
        (1, 2, 4.0),
        (1, 3, 5.0),
        (2, 3, 6.0),
    ];
    let rates: Vec<(usize, usize, f64)> = links.iter().map(|&(i, j, w)| (i, j, 1.0 / w)).collect();
    let topo = Topology::from_rates(4, &rates).unwrap();
    let trees = enumerate_spanning_trees(&topo, 0);
    assert_eq!(trees.len(), 16);
    let brute_min = trees
        .iter()
        .map(|p| parent_weight_total(&topo, p))
        .fold(f64::INFINITY, f64::min);
    let mst = kruskal_tree(&topo, 0).unwrap();
    assert!((parent_weight_total(&topo, mst.parents()) - brute_min).abs() < 1e-12);
    assert!((brute_min - 6.0).abs() < 1e-12); // edges 1 + 2 + 3
}

#[test]
fn bellman_matches_exhaustive_path_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..120 {
        let topo = random_connected(&mut rng, 6);
        let n = topo.node_count();
        let root = rng.gen_range(0..n);
        let brute = exhaustive_distances(&topo, root);
        let tree = bellman_spt(&topo, root).unwrap();
        // Distance along the tree equals the brute-force shortest distance.
        for v in 0..n {
            let mut d = 0.0;
            let mut u = v;
            while let Some(p) = tree.parent(u) {
                d += topo.chi(u, p);
                u = p;
            }
            assert!(
                (d - brute[v]).abs() <= 1e-9 * brute[v].max(1.0),
                "node {v}: tree {d} vs brute {}",
                brute[v]
            );
        }
    }
}

#[test]
fn flood_levels_match_reference_bfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for _ in 0..60 {
        let topo = random_connected(&mut rng, 6);
        let n = topo.node_count();
        let root = rng.gen_range(0..n);
        let tree = flood_tree(&topo, root).unwrap();
        // Reference hop distances.
        let mut hops = vec![usize::MAX; n];
        hops[root] = 0;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for v in topo.neighbors(u) {
                if hops[v] == usize::MAX {
                    hops[v] = hops[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for v in 0..n {
            let mut depth = 0;
            let mut u = v;
            while let Some(p) = tree.parent(u) {
                depth += 1;
                u = p;
            }
            assert_eq!(depth, hops[v], "node {v}");
        }
    }
}

#[test]
fn p_clt_never_beats_exhaustive_broadcast_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let cfg = RoutingConfig::default();
    for _ in 0..100 {
        let topo = random_connected(&mut rng, 6);
        let n = topo.node_count();
        let root = rng.gen_range(0..n);
        let brute_min = enumerate_spanning_trees(&topo, root)
            .into_iter()
            .map(|parent| {
                let tree =
                    BroadcastTree::from_parents(root, parent, &topo, GroupSemantics::Children)
                        .unwrap();
                tree_cost(&tree, &topo)
            })
            .fold(f64::INFINITY, f64::min);
        let out = p_clt(&topo, root, &cfg).unwrap();
        let cost = tree_cost(&out.tree, &topo);
        assert!(
            cost >= brute_min - 1e-9,
            "heuristic {cost} below brute optimum {brute_min}"
        );
        // And the staged costs never increase.
        for w in out.stage_costs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}
