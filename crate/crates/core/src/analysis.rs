//! Empirical verification of the convergence machinery.
//!
//! Three checks live here:
//!
//! * a closed-form upper bound on the pruning-induced deviation energy of
//!   the aggregation coefficients, checked against the exact double sum;
//! * a per-round contraction bound on the distance between the weighted
//!   global model and the optimum of a strongly convex run, evaluated on a
//!   recorded trajectory with exact spectral constants;
//! * the consistency of the two routes to the optimal retention rate —
//!   the closed form over the route cost versus inverting the latency
//!   constraint hop by hop.

use crate::aggregator::{lambda_coeffs, ClientWeights, ReceivedSet};
use crate::error::{Error, Result};
use crate::fltrainer::Trajectory;
use crate::linkschedule::{bottleneck_rate, optimal_retention};
use crate::netgen::Topology;
use crate::routing::{tree_cost, BroadcastTree};
use serde::{Deserialize, Serialize};

/// Constants entering the contraction bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub learning_rate: f64,
    /// Free tuning parameter balancing the two error terms.
    pub tau_rho: f64,
    pub p_max: f64,
    /// `sum_n p_n^2`
    pub weight_sq_sum: f64,
}

impl BoundParams {
    pub fn new(
        smoothness: f64,
        strong_convexity: f64,
        learning_rate: f64,
        tau_rho: f64,
        weights: &ClientWeights,
    ) -> Result<Self> {
        if !(strong_convexity > 0.0) || smoothness < strong_convexity {
            return Err(Error::NotStronglyConvex);
        }
        if !(tau_rho > 0.0) || !(learning_rate > 0.0) {
            return Err(Error::InvalidConfig("tau_rho and learning rate must be > 0".into()));
        }
        Ok(Self {
            smoothness,
            strong_convexity,
            learning_rate,
            tau_rho,
            p_max: weights.p_max(),
            weight_sq_sum: weights.sum_sq(),
        })
    }
}

/// Closed-form upper bound on the deviation energy at receiver `n`:
/// `sum_{l != n} (K - floor(r_l K)) p_l^2 + (sum_{l != n} (K - floor(r_l K)))^2`.
pub fn pruning_bias_bound(
    retentions: &[f64],
    weights: &ClientWeights,
    k: usize,
    receiver: usize,
) -> f64 {
    let mut weighted = 0.0;
    let mut missing_total = 0.0;
    for (l, &r) in retentions.iter().enumerate() {
        if l == receiver {
            continue;
        }
        let kept = (r * k as f64).floor();
        let missing = k as f64 - kept;
        let p = weights.get(l);
        weighted += missing * p * p;
        missing_total += missing;
    }
    weighted + missing_total * missing_total
}

/// Exact deviation energy `sum_k sum_m lambda[m][k]^2` — the brute-force
/// side of the bound check.
pub fn coefficient_deviation_energy(received: &ReceivedSet, weights: &ClientWeights) -> f64 {
    lambda_coeffs(received, weights)
        .iter()
        .map(|row| row.iter().map(|&v| v * v).sum::<f64>())
        .sum()
}

/// One round of the contraction check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContractionRound {
    pub round: u32,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Evaluates the per-round bound
/// `||w_bar_a - w*||^2 <= (1 + tau) [ (1 - 2 mu eta + eta^2 L^2) ||w_bar_{a-1} - w*||^2
///   + ((1 + eta L) / tau) (sum p^2 + eta L p_max) sum_n ||w_hat_{a-1,n} - w_bar_{a-1}||^2 ]`
/// along a recorded full-batch trajectory.
pub fn contraction_check(
    trajectory: &Trajectory,
    params: &BoundParams,
) -> Result<Vec<ContractionRound>> {
    if !trajectory.full_batch {
        return Err(Error::InvalidConfig(
            "contraction check requires a full-batch single-step trajectory".into(),
        ));
    }
    let l = params.smoothness;
    let mu = params.strong_convexity;
    let eta = params.learning_rate;
    let tau = params.tau_rho;
    let contraction = 1.0 - 2.0 * mu * eta + eta * eta * l * l;
    let bias_factor = (1.0 + eta * l) / tau * (params.weight_sq_sum + eta * l * params.p_max);
    let star = &trajectory.omega_star;

    let mut out = Vec::with_capacity(trajectory.rounds.len());
    for (idx, round) in trajectory.rounds.iter().enumerate() {
        // Every client starts from the common init, so the round-0 global
        // model is the init and its biases vanish.
        let (prev_bar, bias_prev): (&[f64], f64) = if idx == 0 {
            (&trajectory.init, 0.0)
        } else {
            let prev = &trajectory.rounds[idx - 1];
            let bias = prev
                .omega_hat
                .iter()
                .map(|hat| sq_dist(hat, &prev.omega_bar))
                .sum();
            (&prev.omega_bar, bias)
        };
        let lhs = sq_dist(&round.omega_bar, star);
        let rhs = (1.0 + tau) * (contraction * sq_dist(prev_bar, star) + bias_factor * bias_prev);
        let holds = lhs <= rhs * (1.0 + 1e-9) + 1e-18;
        out.push(ContractionRound { round: (idx + 1) as u32, lhs, rhs, holds });
    }
    Ok(out)
}

/// The two routes to the optimal retention rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RetentionConsistency {
    /// `min(1, t_max / (K_bits * tree_cost))`
    pub closed_form: f64,
    /// `min(1, t_max / sum_i K_bits / v~_i)` — the latency constraint
    /// inverted hop by hop with the floor relaxed.
    pub latency_inversion: f64,
    pub equal: bool,
}

pub fn retention_route_consistency(
    tree: &BroadcastTree,
    topo: &Topology,
    k_params: u64,
    bits_per_param: u32,
    t_max_s: f64,
) -> Result<RetentionConsistency> {
    let closed_form =
        optimal_retention(tree_cost(tree, topo), k_params, bits_per_param, t_max_s)?.r_star;
    let full_bits = k_params as f64 * bits_per_param as f64;
    let full_time: f64 = tree
        .transmitters()
        .iter()
        .map(|&i| full_bits / bottleneck_rate(tree, topo, i).expect("transmitter"))
        .sum();
    let latency_inversion = (t_max_s / full_time).min(1.0);
    let denom = closed_form.abs().max(latency_inversion.abs()).max(f64::MIN_POSITIVE);
    let equal = (closed_form - latency_inversion).abs() / denom <= 1e-12;
    Ok(RetentionConsistency { closed_form, latency_inversion, equal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::Indicator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bias_bound_vanishes_without_pruning() {
        let w = ClientWeights::uniform(4).unwrap();
        let r = vec![1.0; 4];
        assert_eq!(pruning_bias_bound(&r, &w, 100, 0), 0.0);
    }

    #[test]
    fn bias_bound_two_client_case() {
        // K=2, p=(0.5, 0.5), the other client keeps floor(0.5*2)=1 element:
        // (2-1)*0.25 + 1^2 = 1.25.
        let w = ClientWeights::uniform(2).unwrap();
        let bound = pruning_bias_bound(&[1.0, 0.5], &w, 2, 0);
        assert!((bound - 1.25).abs() < 1e-15);
    }

    #[test]
    fn bias_bound_monotone_in_retention() {
        let w = ClientWeights::from_probs(vec![0.2, 0.3, 0.5]).unwrap();
        let mut prev = f64::INFINITY;
        for r in [0.2, 0.4, 0.6, 0.8, 1.0] {
            let b = pruning_bias_bound(&[1.0, r, r], &w, 64, 0);
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn floored_bound_dominates_the_relaxed_one() {
        // Flooring retains fewer elements, so the bound computed with
        // floor(r K) is never below the one computed with r K directly.
        let w = ClientWeights::from_probs(vec![0.25, 0.35, 0.4]).unwrap();
        let k = 37;
        for r in [0.31, 0.57, 0.83] {
            let floored = pruning_bias_bound(&[1.0, r, r], &w, k, 0);
            let missing = (k as f64 - r * k as f64) * 2.0;
            let weighted = (k as f64 - r * k as f64)
                * (w.get(1) * w.get(1) + w.get(2) * w.get(2));
            let relaxed = weighted + missing * missing;
            assert!(floored >= relaxed - 1e-12);
        }
    }

    fn prefix_mask(k: usize, kept: usize) -> Vec<bool> {
        (0..k).map(|i| i < kept).collect()
    }

    #[test]
    fn deviation_energy_zero_without_pruning() {
        let models = vec![vec![0.0; 4]; 3];
        let refs: Vec<&[f64]> = models.iter().map(|m| m.as_slice()).collect();
        let rs = ReceivedSet::new(0, refs, vec![Indicator::AllOnes; 3]).unwrap();
        let w = ClientWeights::uniform(3).unwrap();
        assert_eq!(coefficient_deviation_energy(&rs, &w), 0.0);
    }

    #[test]
    fn two_client_energy_below_closed_form() {
        let models = vec![vec![0.0; 2]; 2];
        let refs: Vec<&[f64]> = models.iter().map(|m| m.as_slice()).collect();
        let mask = prefix_mask(2, 1);
        let inds = vec![Indicator::AllOnes, Indicator::Mask(&mask)];
        let rs = ReceivedSet::new(0, refs, inds).unwrap();
        let w = ClientWeights::uniform(2).unwrap();
        let energy = coefficient_deviation_energy(&rs, &w);
        assert!((energy - 0.5).abs() < 1e-15);
        assert!(energy <= pruning_bias_bound(&[1.0, 0.5], &w, 2, 0));
    }

    #[test]
    fn randomized_energy_never_exceeds_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let n = rng.gen_range(2..=8usize);
            let k = rng.gen_range(1..=64usize);
            let receiver = rng.gen_range(0..n);
            let retentions: Vec<f64> =
                (0..n).map(|m| if m == receiver { 1.0 } else { rng.gen_range(0.05..=1.0) }).collect();
            let masks: Vec<Vec<bool>> = retentions
                .iter()
                .map(|&r| prefix_mask(k, (r * k as f64).floor() as usize))
                .collect();
            let models = vec![vec![0.0; k]; n];
            let refs: Vec<&[f64]> = models.iter().map(|m| m.as_slice()).collect();
            let inds: Vec<Indicator> = (0..n)
                .map(|m| {
                    if m == receiver {
                        Indicator::AllOnes
                    } else {
                        Indicator::Mask(&masks[m])
                    }
                })
                .collect();
            let rs = ReceivedSet::new(receiver, refs, inds).unwrap();
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let w = ClientWeights::from_probs(raw.iter().map(|v| v / total).collect()).unwrap();
            let lhs = coefficient_deviation_energy(&rs, &w);
            let rhs = pruning_bias_bound(&retentions, &w, k, receiver);
            assert!(lhs <= rhs + 1e-9, "lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn isotropic_quadratic_contracts_at_closed_rate() {
        // L = mu = 1, eta = 0.5, single client, no pruning: the bound is
        // (1 + tau) * 0.25 per round and the in-run factor is exactly 0.25.
        let init = vec![1.0, 1.0];
        let star = vec![0.0, 0.0];
        let mut rounds = Vec::new();
        let mut current = init.clone();
        for _ in 0..5 {
            let next: Vec<f64> = current.iter().map(|&w| w - 0.5 * w).collect();
            rounds.push(crate::fltrainer::TrajectoryRound {
                omega_bar: next.clone(),
                omega_hat: vec![next.clone()],
            });
            current = next;
        }
        let traj = Trajectory {
            schema: crate::fltrainer::TRAJECTORY_SCHEMA.to_string(),
            weights: vec![1.0],
            smoothness: 1.0,
            strong_convexity: 1.0,
            learning_rate: 0.5,
            full_batch: true,
            omega_star: star,
            init,
            rounds,
        };
        let w = ClientWeights::uniform(1).unwrap();
        for tau in [0.1, 1.0, 10.0] {
            let params = BoundParams::new(1.0, 1.0, 0.5, tau, &w).unwrap();
            let report = contraction_check(&traj, &params).unwrap();
            for (idx, r) in report.iter().enumerate() {
                assert!(r.holds);
                // lhs / prev_lhs = 0.25 exactly; rhs = (1+tau) * 0.25 * prev.
                let prev = if idx == 0 { 2.0 } else { report[idx - 1].lhs };
                assert!((r.lhs / prev - 0.25).abs() < 1e-12);
                assert!((r.rhs / prev - (1.0 + tau) * 0.25).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mini_batch_trajectories_are_rejected() {
        let traj = Trajectory {
            schema: crate::fltrainer::TRAJECTORY_SCHEMA.to_string(),
            weights: vec![1.0],
            smoothness: 1.0,
            strong_convexity: 1.0,
            learning_rate: 0.5,
            full_batch: false,
            omega_star: vec![0.0],
            init: vec![1.0],
            rounds: vec![],
        };
        let w = ClientWeights::uniform(1).unwrap();
        let params = BoundParams::new(1.0, 1.0, 0.5, 1.0, &w).unwrap();
        assert!(contraction_check(&traj, &params).is_err());
    }

    #[test]
    fn retention_routes_agree() {
        use crate::netgen::{generate_rgg, RadioParams};
        use crate::routing::{p_clt, RoutingConfig};
        let radio = RadioParams::default();
        for seed in 0..20 {
            let topo = generate_rgg(10, 0.6, 1.0, &radio, seed).unwrap();
            for root in 0..10 {
                let tree = p_clt(&topo, root, &RoutingConfig::default()).unwrap().tree;
                let c = retention_route_consistency(&tree, &topo, 11_690_000, 32, 2.0).unwrap();
                assert!(c.equal, "seed {seed} root {root}: {c:?}");
            }
        }
    }

    #[test]
    fn retention_routes_trivial_and_half_cases() {
        let topo = Topology::from_rates(2, &[(0, 1, 1e8)]).unwrap();
        let tree = crate::routing::kruskal_tree(&topo, 0).unwrap();
        // Full model fits.
        let c = retention_route_consistency(&tree, &topo, 1000, 32, 1.0).unwrap();
        assert_eq!(c.closed_form, 1.0);
        assert_eq!(c.latency_inversion, 1.0);
        // K_bits = 4e8, single hop at 1e8 bit/s, t_max = 2 -> r = 0.5.
        let c = retention_route_consistency(&tree, &topo, 12_500_000, 32, 2.0).unwrap();
        assert!((c.closed_form - 0.5).abs() < 1e-12);
        assert!(c.equal);
    }
}
