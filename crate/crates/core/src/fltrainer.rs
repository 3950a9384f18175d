//! Synchronous decentralized training rounds.
//!
//! Each round every client (1) runs local SGD from its previous aggregate,
//! (2) prunes its model to the policy's retention rate, (3) forwards the
//! payload along its broadcast tree — a payload arrives everywhere or, if it
//! misses the per-round deadline, nowhere — and (4) aggregates whatever
//! arrived, always including its own full model. Topology, routes, retention
//! and delivery outcomes are all static across rounds; the only per-round
//! variation is the stochastic gradient noise.

use crate::aggregator::{
    bias_norm_sum, coefficient_norm_deviation, ideal_global, local_aggregate, ClientWeights,
    Indicator, ReceivedSet,
};
use crate::config::{ExperimentConfig, TaskBlock};
use crate::enhanced::{cam_adjust, fpsr_deliver, BottleneckConfig, DeliveryLedger};
use crate::error::{Error, Result};
use crate::linkschedule::{optimal_retention, total_latency, LatencyBudget};
use crate::netgen::Topology;
use crate::pruner::{build_plan, PruningPlan};
use crate::routing::{p_clt, tree_cost, BroadcastTree, Scheme};
use crate::task::{MlpTask, RidgeTask, SgdParams, TrainTask};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How each client chooses its model retention rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruningPolicy {
    /// Invert the latency budget against the route cost.
    Optimal,
    /// A preset retention rate shared by every client.
    Fixed(f64),
    /// Transmit the full model.
    NoPruning,
}

impl PruningPolicy {
    pub fn name(&self) -> String {
        match self {
            PruningPolicy::Optimal => "optimal".into(),
            PruningPolicy::Fixed(r) => format!("fixed_{r}"),
            PruningPolicy::NoPruning => "none".into(),
        }
    }
}

/// Jain's fairness index `(sum x)^2 / (N sum x^2)`; 1 for equal allocations,
/// `1/N` for a one-hot allocation.
pub fn jain_index(values: &[f64]) -> Result<f64> {
    if values.is_empty() || values.iter().all(|&v| v == 0.0) {
        return Err(Error::AllZeroAllocation);
    }
    if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::NonFinite("fairness values must be non-negative".into()));
    }
    let sum: f64 = values.iter().sum();
    let sum_sq: f64 = values.iter().map(|&v| v * v).sum();
    Ok(sum * sum / (values.len() as f64 * sum_sq))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientRound {
    pub client: usize,
    pub tree_cost: f64,
    pub retention: f64,
    pub payload_bits: u64,
    pub latency_s: f64,
    pub delivered: bool,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub clients: Vec<ClientRound>,
    pub mean_loss: f64,
    pub mean_accuracy: Option<f64>,
    pub accuracy_spread: Option<f64>,
    pub bias_norm_sum: f64,
    pub jain_delivered: Option<f64>,
    /// Max deviation of any element's aggregation-coefficient sum from 1.
    pub coeff_norm_max_dev: f64,
}

/// Recorded model trajectory of a strongly convex run, for post-hoc bound
/// checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema: String,
    pub weights: Vec<f64>,
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub learning_rate: f64,
    pub full_batch: bool,
    pub omega_star: Vec<f64>,
    /// Common initial model (every client starts here).
    pub init: Vec<f64>,
    pub rounds: Vec<TrajectoryRound>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRound {
    /// Weighted mean of the post-update local models.
    pub omega_bar: Vec<f64>,
    /// Locally aggregated models at the end of the round.
    pub omega_hat: Vec<Vec<f64>>,
}

pub const TRAJECTORY_SCHEMA: &str = "dflsim/trajectory-v1";

/// Immutable per-run state: topology, routes, plans and delivery outcomes.
pub struct Simulation {
    pub topo: Topology,
    pub scheme: Scheme,
    pub policy: PruningPolicy,
    pub seed: u64,
    pub task: TrainTask,
    pub weights: ClientWeights,
    pub budget: LatencyBudget,
    pub bits_per_param: u32,
    pub trees: Vec<BroadcastTree>,
    pub tree_costs: Vec<f64>,
    /// Per-stage objective values for link-modification schemes.
    pub stage_costs: Vec<Vec<f64>>,
    pub retention: Vec<f64>,
    pub payload_bits: Vec<u64>,
    pub latency_s: Vec<f64>,
    pub on_time: Vec<bool>,
    /// Clients whose plan could not be built at their retention rate.
    pub infeasible_plans: Vec<usize>,
    pub delivery: Option<DeliveryLedger>,
    plans: Vec<Option<PruningPlan>>,
    /// Bottleneck-truncated indicator per (sender, receiver); None means the
    /// sender's full plan indicator applies.
    pair_masks: Vec<Vec<Option<Vec<bool>>>>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn round_rng(seed: u64, round: u32, client: usize) -> ChaCha8Rng {
    let mixed = splitmix(splitmix(splitmix(seed) ^ round as u64) ^ client as u64);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Instantiates a task block for one run.
pub fn build_task(block: &TaskBlock, n_clients: usize, seed: u64) -> Result<TrainTask> {
    match block {
        TaskBlock::RidgeRegression {
            layers,
            samples_per_client,
            noise_std,
            l2_reg,
            learning_rate,
            batch_size,
            local_epochs,
        } => {
            let spec = crate::pruner::ModelSpec::new(layers.clone())?;
            let sgd = SgdParams {
                learning_rate: *learning_rate,
                batch_size: *batch_size,
                local_epochs: *local_epochs,
            };
            Ok(TrainTask::Ridge(RidgeTask::generate(
                n_clients,
                spec,
                *samples_per_client,
                *noise_std,
                *l2_reg,
                sgd,
                seed,
            )?))
        }
        TaskBlock::SoftmaxMlp {
            layers,
            samples_per_client,
            dirichlet_alpha,
            noise_std,
            learning_rate,
            batch_size,
            local_epochs,
        } => {
            let spec = crate::pruner::ModelSpec::new(layers.clone())?;
            let sgd = SgdParams {
                learning_rate: *learning_rate,
                batch_size: *batch_size,
                local_epochs: *local_epochs,
            };
            Ok(TrainTask::Mlp(MlpTask::generate(
                n_clients,
                spec,
                *samples_per_client,
                *dirichlet_alpha,
                *noise_std,
                sgd,
                seed,
            )?))
        }
    }
}

impl Simulation {
    pub fn build(
        config: &ExperimentConfig,
        scheme: Scheme,
        policy: PruningPolicy,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let radio = config.radio.to_params()?;
        let topo_seed = config.topology.seed.unwrap_or(seed);
        let topo = crate::netgen::generate_rgg(
            config.topology.n,
            config.topology.density,
            config.topology.area_km,
            &radio,
            topo_seed,
        )?;
        let task = build_task(&config.task, config.topology.n, seed)?;
        let weights = ClientWeights::from_sizes(&task.data_sizes())?;
        let budget = config.budget.to_budget()?;
        let bits_per_param = config.budget.bits_per_param;
        let bottleneck = config.bottleneck.as_ref().map(|b| b.to_config());
        Self::assemble(topo, scheme, policy, seed, task, weights, budget, bits_per_param, bottleneck, config)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        topo: Topology,
        scheme: Scheme,
        policy: PruningPolicy,
        seed: u64,
        task: TrainTask,
        weights: ClientWeights,
        budget: LatencyBudget,
        bits_per_param: u32,
        bottleneck: Option<BottleneckConfig>,
        config: &ExperimentConfig,
    ) -> Result<Self> {
        let n = topo.node_count();
        let k_params = task.param_count() as u64;
        let base_cfg = config.routing.to_routing_config();
        let routing_cfg = scheme.routing_config(&base_cfg);

        let mut trees = Vec::with_capacity(n);
        let mut stage_costs = Vec::with_capacity(n);
        for root in 0..n {
            match scheme {
                Scheme::Kruskal | Scheme::Bellman | Scheme::Flood => {
                    trees.push(scheme.build_tree(&topo, root, &base_cfg)?);
                    stage_costs.push(Vec::new());
                }
                _ => {
                    let out = p_clt(&topo, root, &routing_cfg)?;
                    trees.push(out.tree);
                    stage_costs.push(out.stage_costs);
                }
            }
        }

        // CAM may swap trees and tighten retention before plans are built.
        let mut retention = vec![1.0; n];
        if let Some(bcfg) = &bottleneck {
            if bcfg.mechanism.cam_enabled() {
                for root in 0..n {
                    let plan = cam_adjust(
                        &topo,
                        root,
                        &trees[root],
                        bcfg,
                        &routing_cfg,
                        k_params,
                        bits_per_param,
                        budget.t_max_s,
                    )?;
                    trees[root] = plan.tree;
                    retention[root] = plan.retention;
                }
            }
        }

        let tree_costs: Vec<f64> = trees.iter().map(|t| tree_cost(t, &topo)).collect();
        for (root, r) in retention.iter_mut().enumerate() {
            let cam_active = bottleneck
                .as_ref()
                .map(|b| b.mechanism.cam_enabled())
                .unwrap_or(false);
            match policy {
                PruningPolicy::Optimal => {
                    if !cam_active {
                        *r = optimal_retention(
                            tree_costs[root],
                            k_params,
                            bits_per_param,
                            budget.t_max_s,
                        )?
                        .r_star;
                    }
                }
                PruningPolicy::Fixed(rate) => *r = rate,
                PruningPolicy::NoPruning => *r = 1.0,
            }
        }

        let mut plans: Vec<Option<PruningPlan>> = Vec::with_capacity(n);
        let mut infeasible_plans = Vec::new();
        for (client, &r) in retention.iter().enumerate() {
            if !(r > 0.0) {
                plans.push(None);
                infeasible_plans.push(client);
                continue;
            }
            match build_plan(task.model_spec(), r.min(1.0).sqrt()) {
                Ok(plan) => plans.push(Some(plan)),
                Err(Error::LayerFullyPruned { .. }) => {
                    plans.push(None);
                    infeasible_plans.push(client);
                }
                Err(e) => return Err(e),
            }
        }

        let payload_bits: Vec<u64> = plans
            .iter()
            .map(|p| p.as_ref().map_or(0, |p| p.retained_count as u64 * bits_per_param as u64))
            .collect();
        let latency_s: Vec<f64> = (0..n)
            .map(|m| total_latency(&trees[m], &topo, payload_bits[m]))
            .collect();
        let on_time: Vec<bool> = (0..n)
            .map(|m| match policy {
                PruningPolicy::Optimal => {
                    let ok = plans[m].is_some();
                    debug_assert!(!ok || latency_s[m] <= budget.t_max_s + 1e-9);
                    ok
                }
                _ => plans[m].is_some() && latency_s[m] <= budget.t_max_s + 1e-9,
            })
            .collect();

        let mut pair_masks: Vec<Vec<Option<Vec<bool>>>> = vec![vec![None; n]; n];
        let delivery = if let Some(bcfg) = &bottleneck {
            let counts: Vec<u64> = (0..n)
                .map(|m| {
                    if on_time[m] {
                        plans[m].as_ref().map_or(0, |p| p.retained_count as u64)
                    } else {
                        0
                    }
                })
                .collect();
            let ledger = fpsr_deliver(
                &topo,
                &trees,
                &counts,
                k_params,
                bcfg,
                &routing_cfg,
                bcfg.mechanism.reroute_enabled(),
            );
            for m in 0..n {
                if let Some(plan) = &plans[m] {
                    let retained_idx = plan.retained_indices();
                    for x in 0..n {
                        if x == m {
                            continue;
                        }
                        let c = ledger.delivered[m][x] as usize;
                        if c < retained_idx.len() {
                            // Priority order equals flattening order, so the
                            // delivered set is a prefix of the retained list.
                            let mut mask = vec![false; plan.indicator.len()];
                            for &k in &retained_idx[..c] {
                                mask[k] = true;
                            }
                            pair_masks[m][x] = Some(mask);
                        }
                    }
                }
            }
            Some(ledger)
        } else {
            None
        };

        Ok(Self {
            topo,
            scheme,
            policy,
            seed,
            task,
            weights,
            budget,
            bits_per_param,
            trees,
            tree_costs,
            stage_costs,
            retention,
            payload_bits,
            latency_s,
            on_time,
            infeasible_plans,
            delivery,
            plans,
            pair_masks,
        })
    }

    /// Per-sender totals of elements delivered to other clients.
    fn delivered_totals(&self) -> Vec<f64> {
        let n = self.topo.node_count();
        match &self.delivery {
            Some(ledger) => ledger.delivered_per_sender().iter().map(|&c| c as f64).collect(),
            None => (0..n)
                .map(|m| {
                    if self.on_time[m] {
                        let retained =
                            self.plans[m].as_ref().map_or(0, |p| p.retained_count) as f64;
                        retained * (n - 1) as f64
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }

    /// One synchronous round: local updates, delivery, aggregation, metrics.
    pub fn run_round(&self, models: &[Vec<f64>], round: u32) -> Result<RoundStep> {
        let n = self.topo.node_count();
        let mut locals = Vec::with_capacity(n);
        for client in 0..n {
            let mut rng = round_rng(self.seed, round, client);
            locals.push(self.task.local_update(client, &models[client], &mut rng)?);
        }
        let omega_bar = ideal_global(&locals, &self.weights)?;

        let mut aggregated = Vec::with_capacity(n);
        let mut coeff_norm_max_dev: f64 = 0.0;
        for receiver in 0..n {
            let model_refs: Vec<&[f64]> = locals.iter().map(|m| m.as_slice()).collect();
            let indicators: Vec<Indicator> = (0..n)
                .map(|sender| {
                    if sender == receiver {
                        Indicator::AllOnes
                    } else if !self.on_time[sender] {
                        Indicator::AllZeros
                    } else if let Some(mask) = &self.pair_masks[sender][receiver] {
                        Indicator::Mask(mask)
                    } else {
                        match &self.plans[sender] {
                            Some(plan) => Indicator::Mask(&plan.indicator),
                            None => Indicator::AllZeros,
                        }
                    }
                })
                .collect();
            let received = ReceivedSet::new(receiver, model_refs, indicators)?;
            coeff_norm_max_dev =
                coeff_norm_max_dev.max(coefficient_norm_deviation(&received, &self.weights));
            aggregated.push(local_aggregate(&received, &self.weights)?);
        }

        let bias = bias_norm_sum(&aggregated, &omega_bar);
        let mut clients = Vec::with_capacity(n);
        let mut losses = Vec::with_capacity(n);
        let mut accs: Vec<f64> = Vec::new();
        for client in 0..n {
            let loss = self.task.test_loss(&aggregated[client]);
            let accuracy = self.task.test_accuracy(&aggregated[client]);
            losses.push(loss);
            if let Some(a) = accuracy {
                accs.push(a);
            }
            clients.push(ClientRound {
                client,
                tree_cost: self.tree_costs[client],
                retention: self.retention[client],
                payload_bits: self.payload_bits[client],
                latency_s: self.latency_s[client],
                delivered: self.on_time[client],
                loss,
                accuracy,
            });
        }
        let mean_loss = losses.iter().sum::<f64>() / n as f64;
        let (mean_accuracy, accuracy_spread) = if accs.is_empty() {
            (None, None)
        } else {
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let spread = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - accs.iter().copied().fold(f64::INFINITY, f64::min);
            (Some(mean), Some(spread))
        };
        let jain_delivered = jain_index(&self.delivered_totals()).ok();

        let metrics = RoundMetrics {
            round,
            clients,
            mean_loss,
            mean_accuracy,
            accuracy_spread,
            bias_norm_sum: bias,
            jain_delivered,
            coeff_norm_max_dev,
        };
        Ok(RoundStep { new_models: aggregated, locals, omega_bar, metrics })
    }
}

/// Output of one round.
pub struct RoundStep {
    /// The locally aggregated models that seed the next round.
    pub new_models: Vec<Vec<f64>>,
    /// Post-update, pre-aggregation local models.
    pub locals: Vec<Vec<f64>>,
    /// Weighted mean of `locals`.
    pub omega_bar: Vec<f64>,
    pub metrics: RoundMetrics,
}

/// Everything one seeded run produces.
pub struct ExperimentResult {
    pub scheme: Scheme,
    pub policy: PruningPolicy,
    pub seed: u64,
    pub topology: Topology,
    pub tree_costs: Vec<f64>,
    pub stage_costs: Vec<Vec<f64>>,
    pub retention: Vec<f64>,
    pub payload_bits: Vec<u64>,
    pub latency_s: Vec<f64>,
    pub on_time: Vec<bool>,
    pub infeasible_plans: Vec<usize>,
    pub rounds: Vec<RoundMetrics>,
    pub trajectory: Option<Trajectory>,
    pub delivery: Option<DeliveryLedger>,
    pub final_models: Vec<Vec<f64>>,
}

/// Runs `config.rounds` synchronous rounds for one (scheme, policy, seed)
/// cell. Strongly convex runs record their model trajectory for the
/// post-hoc bound checks.
pub fn run_experiment(
    config: &ExperimentConfig,
    scheme: Scheme,
    policy: PruningPolicy,
    seed: u64,
) -> Result<ExperimentResult> {
    let sim = Simulation::build(config, scheme, policy, seed)?;
    let n = sim.topo.node_count();
    let init = sim.task.init_model(seed);
    let mut models: Vec<Vec<f64>> = vec![init.clone(); n];
    let mut rounds = Vec::with_capacity(config.rounds as usize);

    let mut trajectory = match &sim.task {
        TrainTask::Ridge(ridge) => {
            let sgd = sim.task.sgd();
            let rows = ridge.clients[0].rows;
            let full_batch =
                (sgd.batch_size == 0 || sgd.batch_size >= rows) && sgd.local_epochs == 1;
            Some(Trajectory {
                schema: TRAJECTORY_SCHEMA.to_string(),
                weights: sim.weights.as_slice().to_vec(),
                smoothness: ridge.smoothness(),
                strong_convexity: ridge.strong_convexity(),
                learning_rate: sgd.learning_rate,
                full_batch,
                omega_star: ridge.optimum(sim.weights.as_slice())?,
                init: init.clone(),
                rounds: Vec::new(),
            })
        }
        TrainTask::Mlp(_) => None,
    };

    for round in 1..=config.rounds {
        let step = sim.run_round(&models, round)?;
        if let Some(traj) = trajectory.as_mut() {
            traj.rounds.push(TrajectoryRound {
                omega_bar: step.omega_bar.clone(),
                omega_hat: step.new_models.clone(),
            });
        }
        rounds.push(step.metrics);
        models = step.new_models;
    }

    Ok(ExperimentResult {
        scheme,
        policy,
        seed,
        topology: sim.topo,
        tree_costs: sim.tree_costs,
        stage_costs: sim.stage_costs,
        retention: sim.retention,
        payload_bits: sim.payload_bits,
        latency_s: sim.latency_s,
        on_time: sim.on_time,
        infeasible_plans: sim.infeasible_plans,
        rounds,
        trajectory,
        delivery: sim.delivery,
        final_models: models,
    })
}
