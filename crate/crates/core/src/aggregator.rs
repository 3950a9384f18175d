//! Per-element weighted model aggregation.
//!
//! Each receiver renormalizes the ideal weights over the senders whose
//! indicator covers an element, so the aggregate of element `k` is a convex
//! combination of the values that actually arrived. A receiver always holds
//! its own model with a full indicator, which keeps every denominator
//! strictly positive. Missing senders are all-zero indicator rows; the same
//! mechanism therefore covers both pruning and failed delivery.

use crate::error::{Error, Result};

/// Ideal aggregation weights `p_n = D_n / sum(D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientWeights {
    p: Vec<f64>,
}

impl ClientWeights {
    pub fn from_sizes(sizes: &[u64]) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&d| d == 0) {
            return Err(Error::InvalidWeights("dataset sizes must be positive".into()));
        }
        let total: u64 = sizes.iter().sum();
        Self::from_probs(sizes.iter().map(|&d| d as f64 / total as f64).collect())
    }

    pub fn from_probs(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidWeights("no clients".into()));
        }
        if p.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidWeights("all weights must be > 0".into()));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { p })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_probs(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn get(&self, n: usize) -> f64 {
        self.p[n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn p_max(&self) -> f64 {
        self.p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum_n p_n^2`
    pub fn sum_sq(&self) -> f64 {
        self.p.iter().map(|&w| w * w).sum()
    }
}

/// Which elements of a sender's model reached the receiver.
#[derive(Debug, Clone, Copy)]
pub enum Indicator<'a> {
    AllOnes,
    Mask(&'a [bool]),
    AllZeros,
}

impl Indicator<'_> {
    pub fn covers(&self, k: usize) -> bool {
        match self {
            Indicator::AllOnes => true,
            Indicator::Mask(m) => m[k],
            Indicator::AllZeros => false,
        }
    }

    fn is_full(&self, len: usize) -> bool {
        match self {
            Indicator::AllOnes => true,
            Indicator::Mask(m) => m.iter().take(len).all(|&b| b),
            Indicator::AllZeros => len == 0,
        }
    }
}

/// Snapshot of everything receiver `n` holds at aggregation time: one model
/// and one indicator row per sender (index = sender id).
pub struct ReceivedSet<'a> {
    receiver: usize,
    models: Vec<&'a [f64]>,
    indicators: Vec<Indicator<'a>>,
    dim: usize,
}

impl<'a> ReceivedSet<'a> {
    pub fn new(
        receiver: usize,
        models: Vec<&'a [f64]>,
        indicators: Vec<Indicator<'a>>,
    ) -> Result<Self> {
        let n = models.len();
        if indicators.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: indicators.len() });
        }
        if receiver >= n {
            return Err(Error::InvalidWeights(format!("receiver {receiver} out of range")));
        }
        let dim = models[0].len();
        for m in &models {
            if m.len() != dim {
                return Err(Error::LengthMismatch { expected: dim, got: m.len() });
            }
        }
        if let Indicator::Mask(m) = indicators[receiver] {
            if m.len() != dim {
                return Err(Error::LengthMismatch { expected: dim, got: m.len() });
            }
        }
        if !indicators[receiver].is_full(dim) {
            return Err(Error::MissingSelfModel(receiver));
        }
        Ok(Self { receiver, models, indicators, dim })
    }

    pub fn receiver(&self) -> usize {
        self.receiver
    }

    pub fn sender_count(&self) -> usize {
        self.models.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model(&self, m: usize) -> &[f64] {
        self.models[m]
    }

    pub fn indicator(&self, m: usize) -> &Indicator<'a> {
        &self.indicators[m]
    }
}

/// Locally aggregated model: element `k` is the p-weighted mean over the
/// senders that delivered it, renormalized so the coefficients sum to one.
pub fn local_aggregate(received: &ReceivedSet, weights: &ClientWeights) -> Result<Vec<f64>> {
    let n = received.sender_count();
    if weights.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: weights.len() });
    }
    let mut out = vec![0.0; received.dim()];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut denom = 0.0;
        let mut num = 0.0;
        for m in 0..n {
            if received.indicator(m).covers(k) {
                let p = weights.get(m);
                denom += p;
                num += p * received.model(m)[k];
            }
        }
        // The receiver's own full indicator guarantees denom >= p_n > 0.
        *slot = num / denom;
    }
    Ok(out)
}

/// Ideal global model: the plain p-weighted mean of all local models.
pub fn ideal_global(models: &[Vec<f64>], weights: &ClientWeights) -> Result<Vec<f64>> {
    if models.len() != weights.len() {
        return Err(Error::LengthMismatch { expected: weights.len(), got: models.len() });
    }
    let dim = models.first().map_or(0, |m| m.len());
    for m in models {
        if m.len() != dim {
            return Err(Error::LengthMismatch { expected: dim, got: m.len() });
        }
    }
    let mut out = vec![0.0; dim];
    for (m, model) in models.iter().enumerate() {
        let p = weights.get(m);
        for (slot, &w) in out.iter_mut().zip(model) {
            *slot += p * w;
        }
    }
    Ok(out)
}

/// Sum over clients of the squared l2 distance to the global model.
pub fn bias_norm_sum(locals: &[Vec<f64>], global: &[f64]) -> f64 {
    locals
        .iter()
        .map(|local| {
            local
                .iter()
                .zip(global)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

/// Max over elements of how far the realized coefficient sum strays from 1.
pub fn coefficient_norm_deviation(received: &ReceivedSet, weights: &ClientWeights) -> f64 {
    let n = received.sender_count();
    let mut worst: f64 = 0.0;
    for k in 0..received.dim() {
        let mut denom = 0.0;
        for m in 0..n {
            if received.indicator(m).covers(k) {
                denom += weights.get(m);
            }
        }
        let mut sum = 0.0;
        for m in 0..n {
            if received.indicator(m).covers(k) {
                sum += weights.get(m) / denom;
            }
        }
        worst = worst.max((sum - 1.0).abs());
    }
    worst
}

/// Deviation of the realized per-element coefficients from the ideal
/// weights: `lambda[m][k] = p_realized(m, k) - p_m`. Columns sum to zero.
pub fn lambda_coeffs(received: &ReceivedSet, weights: &ClientWeights) -> Vec<Vec<f64>> {
    let n = received.sender_count();
    let dim = received.dim();
    let mut lambda = vec![vec![0.0; dim]; n];
    for k in 0..dim {
        let mut denom = 0.0;
        for m in 0..n {
            if received.indicator(m).covers(k) {
                denom += weights.get(m);
            }
        }
        for m in 0..n {
            let realized = if received.indicator(m).covers(k) {
                weights.get(m) / denom
            } else {
                0.0
            };
            lambda[m][k] = realized - weights.get(m);
        }
    }
    lambda
}
