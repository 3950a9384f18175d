//! Structured channel pruning with prefix masks.
//!
//! Every layer is a `delta_z x delta_{z+1}` weight grid. At channel retention
//! `eta` a client keeps the first `floor(eta * delta_z)` input channels and
//! the first `floor(eta * delta_{z+1})` output channels of each layer, which
//! retains the fraction `r = eta^2` of the weights up to per-layer floor
//! effects. Because the masks are a pure function of the shared model shape
//! and `eta`, receivers reconstruct parameter positions locally and no index
//! side-channel is transmitted.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Channel counts `delta_1 .. delta_{Z+1}`; layer `z` holds a
/// `delta_z x delta_{z+1}` weight grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    layer_channels: Vec<usize>,
}

impl ModelSpec {
    pub fn new(layer_channels: Vec<usize>) -> Result<Self> {
        if layer_channels.len() < 2 {
            return Err(Error::InvalidConfig("need at least two channel counts (one layer)".into()));
        }
        if layer_channels.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("all channel counts must be >= 1".into()));
        }
        Ok(Self { layer_channels })
    }

    pub fn layer_channels(&self) -> &[usize] {
        &self.layer_channels
    }

    /// Number of weight grids.
    pub fn num_layers(&self) -> usize {
        self.layer_channels.len() - 1
    }

    pub fn layer_param_count(&self, layer: usize) -> usize {
        self.layer_channels[layer] * self.layer_channels[layer + 1]
    }

    /// Total parameter count K.
    pub fn total_params(&self) -> usize {
        (0..self.num_layers()).map(|z| self.layer_param_count(z)).sum()
    }

    /// Offset of layer `z` in the flattened parameter vector (layers in
    /// order, row-major within a layer).
    pub fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|z| self.layer_param_count(z)).sum()
    }
}

/// `eta = sqrt(r)`: the channel retention that realizes model retention `r`.
pub fn eta_from_retention(r: f64) -> Result<f64> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::RetentionOutOfRange(r));
    }
    Ok(r.sqrt())
}

/// A concrete pruning decision for one model shape and one `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningPlan {
    pub eta: f64,
    /// Model retention rate `eta^2`.
    pub retention: f64,
    /// Kept input channels per layer: `floor(eta * delta_z)`.
    pub keep_in: Vec<usize>,
    /// Kept output channels per layer: `floor(eta * delta_{z+1})`.
    pub keep_out: Vec<usize>,
    /// Per-layer input channel masks (prefix form).
    pub input_masks: Vec<Vec<bool>>,
    /// Per-layer output channel masks (prefix form).
    pub output_masks: Vec<Vec<bool>>,
    /// Length-K transmit indicator in flattening order.
    pub indicator: Vec<bool>,
    /// Realized retained parameter count (sum of the indicator).
    pub retained_count: usize,
    /// Nominal count `floor(r * K)`; differs from `retained_count` by at
    /// most the per-layer floor error.
    pub nominal_count: usize,
    spec: ModelSpec,
}

impl PruningPlan {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Flattened indices of the retained parameters, ascending.
    pub fn retained_indices(&self) -> Vec<usize> {
        self.indicator
            .iter()
            .enumerate()
            .filter_map(|(k, &keep)| keep.then_some(k))
            .collect()
    }
}

/// Builds the mask set for `eta`, rejecting any layer that would lose all of
/// its channels.
pub fn build_plan(spec: &ModelSpec, eta: f64) -> Result<PruningPlan> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::RetentionOutOfRange(eta * eta));
    }
    let deltas = spec.layer_channels();
    let kept: Vec<usize> = deltas.iter().map(|&d| (eta * d as f64).floor() as usize).collect();
    for (boundary, &k) in kept.iter().enumerate() {
        if k == 0 {
            return Err(Error::LayerFullyPruned { layer: boundary, eta });
        }
    }

    let num_layers = spec.num_layers();
    let keep_in: Vec<usize> = kept[..num_layers].to_vec();
    let keep_out: Vec<usize> = kept[1..].to_vec();
    let input_masks: Vec<Vec<bool>> = (0..num_layers)
        .map(|z| (0..deltas[z]).map(|l| l < keep_in[z]).collect())
        .collect();
    let output_masks: Vec<Vec<bool>> = (0..num_layers)
        .map(|z| (0..deltas[z + 1]).map(|l| l < keep_out[z]).collect())
        .collect();

    let k_total = spec.total_params();
    let mut indicator = Vec::with_capacity(k_total);
    for z in 0..num_layers {
        for row in 0..deltas[z] {
            for col in 0..deltas[z + 1] {
                indicator.push(row < keep_in[z] && col < keep_out[z]);
            }
        }
    }
    let retained_count: usize = (0..num_layers).map(|z| keep_in[z] * keep_out[z]).sum();
    debug_assert_eq!(retained_count, indicator.iter().filter(|&&b| b).count());

    let retention = eta * eta;
    let nominal_count = (retention * k_total as f64).floor() as usize;
    Ok(PruningPlan {
        eta,
        retention,
        keep_in,
        keep_out,
        input_masks,
        output_masks,
        indicator,
        retained_count,
        nominal_count,
        spec: spec.clone(),
    })
}

/// Pruned payload: the retained values in flattening order. Positions are
/// implicit — they are recovered from the shared model shape and `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedPayload {
    pub client: u32,
    pub round: u32,
    pub eta: f64,
    pub values: Vec<f64>,
}

pub fn prune_payload(
    model: &[f64],
    plan: &PruningPlan,
    client: u32,
    round: u32,
) -> Result<PrunedPayload> {
    let k = plan.spec.total_params();
    if model.len() != k {
        return Err(Error::LengthMismatch { expected: k, got: model.len() });
    }
    let values = plan
        .indicator
        .iter()
        .zip(model)
        .filter_map(|(&keep, &w)| keep.then_some(w))
        .collect();
    Ok(PrunedPayload { client, round, eta: plan.eta, values })
}

/// Places every retained value back at its original index; pruned positions
/// are zero.
pub fn reconstruct(payload: &PrunedPayload, plan: &PruningPlan) -> Result<Vec<f64>> {
    if payload.values.len() != plan.retained_count {
        return Err(Error::LengthMismatch {
            expected: plan.retained_count,
            got: payload.values.len(),
        });
    }
    let mut model = vec![0.0; plan.spec.total_params()];
    let mut next = 0usize;
    for (k, &keep) in plan.indicator.iter().enumerate() {
        if keep {
            model[k] = payload.values[next];
            next += 1;
        }
    }
    Ok(model)
}

impl PrunedPayload {
    /// Wire format: `client: u32 | round: u32 | eta: f64 | count: u64`
    /// followed by `count` little-endian 8-byte values in flattening order.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.values.len());
        out.extend_from_slice(&self.client.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.eta.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(Error::Decode(format!("header needs 24 bytes, got {}", bytes.len())));
        }
        let client = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let round = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let eta = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let expected = 24 + 8 * count;
        if bytes.len() != expected {
            return Err(Error::Decode(format!("expected {expected} bytes, got {}", bytes.len())));
        }
        let values = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { client, round, eta, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_is_square_root_of_retention() {
        assert_eq!(eta_from_retention(1.0).unwrap(), 1.0);
        assert_eq!(eta_from_retention(0.25).unwrap(), 0.5);
        assert!((eta_from_retention(0.5).unwrap() - 0.7071067811865476).abs() < 1e-15);
        assert!(eta_from_retention(0.0).is_err());
        assert!(eta_from_retention(1.5).is_err());
    }

    #[test]
    fn plan_half_eta_on_4x8() {
        let spec = ModelSpec::new(vec![4, 8]).unwrap();
        let plan = build_plan(&spec, 0.5).unwrap();
        assert_eq!(plan.keep_in, vec![2]);
        assert_eq!(plan.keep_out, vec![4]);
        assert_eq!(plan.retained_count, 8);
        assert_eq!(spec.total_params(), 32);
        assert!((plan.retention - 0.25).abs() < 1e-15);
        assert_eq!(plan.nominal_count, 8);
    }

    #[test]
    fn plan_eta_one_keeps_everything() {
        let spec = ModelSpec::new(vec![3, 5, 2]).unwrap();
        let plan = build_plan(&spec, 1.0).unwrap();
        assert!(plan.indicator.iter().all(|&b| b));
        assert_eq!(plan.retained_count, spec.total_params());
        assert_eq!(plan.nominal_count, spec.total_params());
    }

    #[test]
    fn plan_floor_discrepancy_case() {
        // delta = (3, 5), eta = 0.6: keeps 1 input and 3 output channels,
        // so 3 of 15 weights versus the nominal floor(0.36 * 15) = 5.
        let spec = ModelSpec::new(vec![3, 5]).unwrap();
        let plan = build_plan(&spec, 0.6).unwrap();
        assert_eq!(plan.keep_in, vec![1]);
        assert_eq!(plan.keep_out, vec![3]);
        assert_eq!(plan.retained_count, 3);
        assert_eq!(plan.nominal_count, 5);
    }

    #[test]
    fn plan_rejects_wiped_layer() {
        let spec = ModelSpec::new(vec![2, 16]).unwrap();
        match build_plan(&spec, 0.3) {
            Err(Error::LayerFullyPruned { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected LayerFullyPruned, got {other:?}"),
        }
    }

    #[test]
    fn indicator_is_prefix_monotone() {
        let spec = ModelSpec::new(vec![4, 6, 3]).unwrap();
        let plan = build_plan(&spec, 0.7).unwrap();
        // Within each layer, a kept cell implies the cell above/left is kept.
        let deltas = spec.layer_channels();
        for z in 0..spec.num_layers() {
            let off = spec.layer_offset(z);
            for row in 0..deltas[z] {
                for col in 0..deltas[z + 1] {
                    let here = plan.indicator[off + row * deltas[z + 1] + col];
                    if row > 0 {
                        let above = plan.indicator[off + (row - 1) * deltas[z + 1] + col];
                        assert!(!here || above);
                    }
                    if col > 0 {
                        let left = plan.indicator[off + row * deltas[z + 1] + col - 1];
                        assert!(!here || left);
                    }
                }
            }
        }
    }

    #[test]
    fn realized_count_close_to_nominal() {
        let spec = ModelSpec::new(vec![7, 13, 5, 11]).unwrap();
        let slack: usize = (0..spec.num_layers())
            .map(|z| spec.layer_channels()[z] + spec.layer_channels()[z + 1])
            .sum();
        for eta in [0.31, 0.5, 0.62, 0.77, 0.93, 1.0] {
            let plan = build_plan(&spec, eta).unwrap();
            let diff = plan.nominal_count.abs_diff(plan.retained_count);
            assert!(diff <= slack, "eta {eta}: |{} - {}| > {slack}", plan.nominal_count, plan.retained_count);
        }
    }

    #[test]
    fn plans_are_deterministic() {
        let spec = ModelSpec::new(vec![6, 9]).unwrap();
        assert_eq!(build_plan(&spec, 0.8).unwrap(), build_plan(&spec, 0.8).unwrap());
    }

    #[test]
    fn payload_identity_at_full_retention() {
        let spec = ModelSpec::new(vec![2, 3]).unwrap();
        let plan = build_plan(&spec, 1.0).unwrap();
        let model: Vec<f64> = (0..6).map(|i| i as f64 * 1.5).collect();
        let payload = prune_payload(&model, &plan, 4, 9, ).unwrap();
        assert_eq!(payload.values, model);
    }

    #[test]
    fn payload_round_trip_restores_positions() {
        let spec = ModelSpec::new(vec![4, 4]).unwrap();
        let plan = build_plan(&spec, 0.75).unwrap();
        let model: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let payload = prune_payload(&model, &plan, 1, 2).unwrap();
        assert_eq!(payload.values.len(), plan.retained_count);
        let back = reconstruct(&payload, &plan).unwrap();
        for (k, &keep) in plan.indicator.iter().enumerate() {
            if keep {
                assert_eq!(back[k], model[k]);
            } else {
                assert_eq!(back[k], 0.0);
            }
        }
    }

    #[test]
    fn payload_rejects_length_mismatch() {
        let spec = ModelSpec::new(vec![2, 2]).unwrap();
        let plan = build_plan(&spec, 1.0).unwrap();
        assert!(prune_payload(&[0.0; 3], &plan, 0, 0).is_err());
    }

    #[test]
    fn wire_format_is_byte_exact() {
        let payload = PrunedPayload {
            client: 0x01020304,
            round: 7,
            eta: 0.5,
            values: vec![1.0, -2.0],
        };
        let bytes = payload.encode();
        assert_eq!(bytes.len(), 24 + 16);
        assert_eq!(&bytes[0..4], &[0x04, 0x03, 0x02, 0x01]);
        assert_eq!(&bytes[4..8], &[7, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &0.5f64.to_le_bytes());
        assert_eq!(&bytes[16..24], &2u64.to_le_bytes());
        let back = PrunedPayload::decode(&bytes).unwrap();
        assert_eq!(back, payload);
        assert!(PrunedPayload::decode(&bytes[..30]).is_err());
    }
}
