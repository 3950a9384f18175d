//! Experiment configuration document.
//!
//! A single JSON document drives every CLI command. Unknown keys are
//! rejected and all defaults are spelled out here so a config echo written
//! into an output file reproduces the run exactly.

use crate::enhanced::{BottleneckConfig, Mechanism};
use crate::error::{Error, Result};
use crate::netgen::RadioParams;
use crate::routing::{RoutingConfig, Scheme};
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA: &str = "dflsim/config-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub topology: TopologyBlock,
    #[serde(default)]
    pub radio: RadioBlock,
    #[serde(default)]
    pub budget: BudgetBlock,
    #[serde(default)]
    pub routing: RoutingBlock,
    #[serde(default)]
    pub pruning: PruningBlock,
    #[serde(default)]
    pub task: TaskBlock,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub bottleneck: Option<BottleneckBlock>,
}

fn default_schema() -> String {
    CONFIG_SCHEMA.to_string()
}

fn default_rounds() -> u32 {
    200
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are complete")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyBlock {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_area")]
    pub area_km: f64,
    /// When set, every seed reuses this topology seed; otherwise the run
    /// seed doubles as the topology seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_n() -> usize {
    20
}
fn default_density() -> f64 {
    0.6
}
fn default_area() -> f64 {
    1.0
}

impl Default for TopologyBlock {
    fn default() -> Self {
        Self { n: 20, density: 0.6, area_km: 1.0, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioBlock {
    #[serde(default = "default_fc")]
    pub carrier_freq_hz: f64,
    #[serde(default = "default_bw")]
    pub bandwidth_hz: f64,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    #[serde(default = "default_noise")]
    pub noise_psd_dbm_per_hz: f64,
    #[serde(default = "default_prop")]
    pub propagation_const: f64,
}

fn default_fc() -> f64 {
    2.5e9
}
fn default_bw() -> f64 {
    30.0e6
}
fn default_tx_power() -> f64 {
    20.0
}
fn default_noise() -> f64 {
    -174.0
}
fn default_prop() -> f64 {
    crate::netgen::SPEED_OF_LIGHT_M_PER_S
}

impl Default for RadioBlock {
    fn default() -> Self {
        Self {
            carrier_freq_hz: default_fc(),
            bandwidth_hz: default_bw(),
            tx_power_dbm: default_tx_power(),
            noise_psd_dbm_per_hz: default_noise(),
            propagation_const: default_prop(),
        }
    }
}

impl RadioBlock {
    pub fn to_params(&self) -> Result<RadioParams> {
        RadioParams::new(
            self.carrier_freq_hz,
            self.bandwidth_hz,
            self.tx_power_dbm,
            self.noise_psd_dbm_per_hz,
            self.propagation_const,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetBlock {
    #[serde(default = "default_t_max")]
    pub t_max_s: f64,
    /// Slot duration; defaults to the whole budget (a single frame).
    #[serde(default)]
    pub slot_s: Option<f64>,
    #[serde(default)]
    pub frames: Option<u32>,
    #[serde(default = "default_bits_per_param")]
    pub bits_per_param: u32,
}

fn default_t_max() -> f64 {
    2.0
}
fn default_bits_per_param() -> u32 {
    32
}

impl Default for BudgetBlock {
    fn default() -> Self {
        Self { t_max_s: 2.0, slot_s: None, frames: None, bits_per_param: 32 }
    }
}

impl BudgetBlock {
    pub fn to_budget(&self) -> Result<crate::linkschedule::LatencyBudget> {
        match (self.slot_s, self.frames) {
            (None, None) => crate::linkschedule::LatencyBudget::from_t_max(self.t_max_s),
            (slot, frames) => {
                let frames = frames.unwrap_or(1);
                let slot = slot.unwrap_or(self.t_max_s / frames as f64);
                let b = crate::linkschedule::LatencyBudget::new(slot, frames)?;
                if (b.t_max_s - self.t_max_s).abs() > 1e-9 * self.t_max_s.max(1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "slot_s * frames = {} does not match t_max_s = {}",
                        b.t_max_s, self.t_max_s
                    )));
                }
                Ok(b)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingBlock {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_iterations")]
    pub iterations: u32,
    #[serde(default)]
    pub priority_by_tree_degree: bool,
}

fn default_scheme() -> Scheme {
    Scheme::PClt
}
fn default_theta() -> f64 {
    0.1
}
fn default_iterations() -> u32 {
    3
}

impl Default for RoutingBlock {
    fn default() -> Self {
        Self {
            scheme: Scheme::PClt,
            theta: 0.1,
            iterations: 3,
            priority_by_tree_degree: false,
        }
    }
}

impl RoutingBlock {
    /// Base routing configuration before scheme flag overrides.
    pub fn to_routing_config(&self) -> RoutingConfig {
        RoutingConfig {
            theta: self.theta,
            iterations: self.iterations,
            priority_by_tree_degree: self.priority_by_tree_degree,
            ..RoutingConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Optimal,
    Fixed,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningBlock {
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    /// Retention rates evaluated when `policy == fixed`; one run per rate.
    #[serde(default = "default_fixed_r")]
    pub fixed_r: Vec<f64>,
}

fn default_policy() -> PolicyKind {
    PolicyKind::Optimal
}
fn default_fixed_r() -> Vec<f64> {
    vec![0.6]
}

impl Default for PruningBlock {
    fn default() -> Self {
        Self { policy: PolicyKind::Optimal, fixed_r: vec![0.6] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskBlock {
    RidgeRegression {
        #[serde(default = "default_ridge_layers")]
        layers: Vec<usize>,
        #[serde(default = "default_ridge_samples")]
        samples_per_client: usize,
        #[serde(default = "default_ridge_noise")]
        noise_std: f64,
        #[serde(default = "default_ridge_reg")]
        l2_reg: f64,
        #[serde(default = "default_ridge_lr")]
        learning_rate: f64,
        /// 0 means full batch.
        #[serde(default)]
        batch_size: usize,
        #[serde(default = "default_epochs")]
        local_epochs: u32,
    },
    SoftmaxMlp {
        #[serde(default = "default_mlp_layers")]
        layers: Vec<usize>,
        #[serde(default = "default_mlp_samples")]
        samples_per_client: usize,
        /// Label-skew concentration; absent means IID.
        #[serde(default)]
        dirichlet_alpha: Option<f64>,
        #[serde(default = "default_mlp_noise")]
        noise_std: f64,
        #[serde(default = "default_mlp_lr")]
        learning_rate: f64,
        #[serde(default = "default_mlp_batch")]
        batch_size: usize,
        #[serde(default = "default_epochs")]
        local_epochs: u32,
    },
}

fn default_ridge_layers() -> Vec<usize> {
    vec![4, 4]
}
fn default_ridge_samples() -> usize {
    40
}
fn default_ridge_noise() -> f64 {
    0.1
}
fn default_ridge_reg() -> f64 {
    0.1
}
fn default_ridge_lr() -> f64 {
    0.02
}
fn default_epochs() -> u32 {
    1
}
fn default_mlp_layers() -> Vec<usize> {
    vec![16, 32, 4]
}
fn default_mlp_samples() -> usize {
    64
}
fn default_mlp_noise() -> f64 {
    1.0
}
fn default_mlp_lr() -> f64 {
    0.05
}
fn default_mlp_batch() -> usize {
    16
}

impl Default for TaskBlock {
    fn default() -> Self {
        serde_json::from_str(r#"{"kind":"softmax_mlp"}"#).expect("defaults are complete")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BottleneckBlock {
    #[serde(default)]
    pub bw_limited: Vec<usize>,
    #[serde(default = "default_bw_cap")]
    pub bw_cap: f64,
    #[serde(default)]
    pub fwd_limited: Vec<usize>,
    #[serde(default = "default_fwd_budget")]
    pub fwd_budget: u32,
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
}

fn default_bw_cap() -> f64 {
    0.8
}
fn default_fwd_budget() -> u32 {
    6
}
fn default_mechanism() -> Mechanism {
    Mechanism::CamFpsr
}

impl BottleneckBlock {
    pub fn to_config(&self) -> BottleneckConfig {
        BottleneckConfig {
            bw_limited: self.bw_limited.clone(),
            bw_cap_fraction: self.bw_cap,
            fwd_limited: self.fwd_limited.clone(),
            fwd_budget_models: self.fwd_budget,
            mechanism: self.mechanism,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::InvalidConfig(format!("unknown config schema {:?}", self.schema)));
        }
        let t = &self.topology;
        if t.n < 2 {
            return Err(Error::InvalidConfig("topology.n must be >= 2".into()));
        }
        if !(t.density > 0.0 && t.density <= 1.0) {
            return Err(Error::InvalidConfig("topology.density must be in (0, 1]".into()));
        }
        let target = (t.density * (t.n * (t.n - 1) / 2) as f64).floor() as usize;
        if target < t.n - 1 {
            return Err(Error::DensityTooLow { nodes: t.n, density: t.density });
        }
        if !(t.area_km > 0.0) {
            return Err(Error::InvalidConfig("topology.area_km must be > 0".into()));
        }
        self.radio.to_params()?;
        if !(self.budget.t_max_s > 0.0) {
            return Err(Error::InvalidConfig("budget.t_max_s must be > 0".into()));
        }
        if self.budget.bits_per_param == 0 {
            return Err(Error::InvalidConfig("budget.bits_per_param must be >= 1".into()));
        }
        self.budget.to_budget()?;
        if !(self.routing.theta >= 0.0 && self.routing.theta.is_finite()) {
            return Err(Error::InvalidConfig("routing.theta must be finite and >= 0".into()));
        }
        if self.pruning.policy == PolicyKind::Fixed {
            if self.pruning.fixed_r.is_empty() {
                return Err(Error::InvalidConfig("pruning.fixed_r must list at least one rate".into()));
            }
            for &r in &self.pruning.fixed_r {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::RetentionOutOfRange(r));
                }
            }
        }
        match &self.task {
            TaskBlock::RidgeRegression { layers, samples_per_client, learning_rate, .. }
            | TaskBlock::SoftmaxMlp { layers, samples_per_client, learning_rate, .. } => {
                crate::pruner::ModelSpec::new(layers.clone())?;
                if *samples_per_client == 0 {
                    return Err(Error::InvalidConfig("task.samples_per_client must be >= 1".into()));
                }
                if !(*learning_rate > 0.0) {
                    return Err(Error::InvalidConfig("task.learning_rate must be > 0".into()));
                }
            }
        }
        if let TaskBlock::SoftmaxMlp { layers, .. } = &self.task {
            if *layers.last().unwrap() < 2 {
                return Err(Error::InvalidConfig("softmax task needs at least two classes".into()));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must list at least one seed".into()));
        }
        if let Some(b) = &self.bottleneck {
            b.to_config().validate(self.topology.n)?;
            if matches!(
                self.routing.scheme,
                Scheme::Kruskal | Scheme::Bellman | Scheme::Flood
            ) {
                return Err(Error::InvalidConfig(
                    "bottleneck scenarios require a link-modification scheme (detours re-run the optimizer)".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_defaults() {
        let cfg = ExperimentConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg.topology.n, 20);
        assert_eq!(cfg.topology.density, 0.6);
        assert_eq!(cfg.radio.bandwidth_hz, 30.0e6);
        assert_eq!(cfg.radio.tx_power_dbm, 20.0);
        assert_eq!(cfg.radio.noise_psd_dbm_per_hz, -174.0);
        assert_eq!(cfg.radio.carrier_freq_hz, 2.5e9);
        assert_eq!(cfg.budget.t_max_s, 2.0);
        assert_eq!(cfg.budget.bits_per_param, 32);
        assert_eq!(cfg.routing.scheme, Scheme::PClt);
        assert_eq!(cfg.routing.theta, 0.1);
        assert_eq!(cfg.routing.iterations, 3);
        assert_eq!(cfg.rounds, 200);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_json_str(r#"{"topologee":{}}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"topology":{"nodes":5}}"#).is_err());
    }

    #[test]
    fn echo_round_trip() {
        let cfg = ExperimentConfig::from_json_str(
            r#"{"topology":{"n":10,"density":0.7},"task":{"kind":"ridge_regression"},"seeds":[4,5]}"#,
        )
        .unwrap();
        let echo = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json_str(&echo).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn invalid_combinations_rejected() {
        // Too sparse for connectivity.
        assert!(ExperimentConfig::from_json_str(r#"{"topology":{"n":5,"density":0.1}}"#).is_err());
        // Fixed policy with a bad rate.
        assert!(ExperimentConfig::from_json_str(
            r#"{"pruning":{"policy":"fixed","fixed_r":[1.5]}}"#
        )
        .is_err());
        // Bottlenecks with a baseline scheme cannot detour.
        assert!(ExperimentConfig::from_json_str(
            r#"{"routing":{"scheme":"kruskal"},"bottleneck":{"bw_limited":[0]}}"#
        )
        .is_err());
        // Bottleneck node out of range.
        assert!(ExperimentConfig::from_json_str(
            r#"{"bottleneck":{"bw_limited":[99]}}"#
        )
        .is_err());
    }
}
