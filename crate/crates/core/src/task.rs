//! Synthetic desk-scale training tasks.
//!
//! Two task kinds drive the training loop:
//!
//! * ridge regression on Gaussian data — its exact smoothness and
//!   strong-convexity constants come from the regularized Gram spectrum and
//!   the optimum has a closed form, which makes the contraction bound
//!   checkable without solver error;
//! * a small softmax MLP on a Gaussian-mixture classification problem —
//!   layer widths double as channel counts, so structured channel pruning
//!   acts on a model with a real accuracy curve.

use crate::error::{Error, Result};
use crate::pruner::ModelSpec;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};

/// Mini-batch SGD hyperparameters. `batch_size == 0` means full batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: u32,
}

/// Regression dataset, features stored row-major.
#[derive(Debug, Clone)]
pub struct RegressionData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub rows: usize,
    pub dim: usize,
}

impl RegressionData {
    fn row(&self, r: usize) -> &[f64] {
        &self.x[r * self.dim..(r + 1) * self.dim]
    }
}

/// Classification dataset, features stored row-major.
#[derive(Debug, Clone)]
pub struct LabeledData {
    pub x: Vec<f64>,
    pub labels: Vec<usize>,
    pub rows: usize,
    pub dim: usize,
}

impl LabeledData {
    fn row(&self, r: usize) -> &[f64] {
        &self.x[r * self.dim..(r + 1) * self.dim]
    }
}

/// Ridge regression task. The model is a flat weight vector laid out on the
/// channel grid of `spec` so pruning plans apply to it directly.
#[derive(Debug, Clone)]
pub struct RidgeTask {
    pub spec: ModelSpec,
    pub clients: Vec<RegressionData>,
    pub test: RegressionData,
    pub l2_reg: f64,
    pub sgd: SgdParams,
}

impl RidgeTask {
    pub fn generate(
        n_clients: usize,
        spec: ModelSpec,
        samples_per_client: usize,
        noise_std: f64,
        l2_reg: f64,
        sgd: SgdParams,
        seed: u64,
    ) -> Result<Self> {
        if n_clients == 0 || samples_per_client == 0 {
            return Err(Error::InvalidConfig("need clients and samples".into()));
        }
        if !(l2_reg >= 0.0) {
            return Err(Error::InvalidConfig("regularizer must be >= 0".into()));
        }
        let dim = spec.total_params();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5249_4447);
        let scale = 1.0 / (dim as f64).sqrt();
        let w_true: Vec<f64> = (0..dim)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let gen_set = |rows: usize, rng: &mut ChaCha8Rng| {
            let mut x = Vec::with_capacity(rows * dim);
            let mut y = Vec::with_capacity(rows);
            for _ in 0..rows {
                let start = x.len();
                for _ in 0..dim {
                    x.push(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
                }
                let dot: f64 = x[start..].iter().zip(&w_true).map(|(a, b)| a * b).sum();
                let noise: f64 =
                    noise_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
                y.push(dot + noise);
            }
            RegressionData { x, y, rows, dim }
        };
        let clients: Vec<RegressionData> =
            (0..n_clients).map(|_| gen_set(samples_per_client, &mut rng)).collect();
        let test = gen_set(samples_per_client.max(64), &mut rng);
        Ok(Self { spec, clients, test, l2_reg, sgd })
    }

    /// `F_n(w) = 1/(2 D_n) ||X w - y||^2 + reg/2 ||w||^2`
    pub fn client_loss(&self, client: usize, model: &[f64]) -> f64 {
        Self::loss_on(&self.clients[client], model, self.l2_reg)
    }

    fn loss_on(data: &RegressionData, model: &[f64], reg: f64) -> f64 {
        let mut sq = 0.0;
        for r in 0..data.rows {
            let pred: f64 = data.row(r).iter().zip(model).map(|(a, b)| a * b).sum();
            sq += (pred - data.y[r]).powi(2);
        }
        let reg_term: f64 = 0.5 * reg * model.iter().map(|w| w * w).sum::<f64>();
        sq / (2.0 * data.rows as f64) + reg_term
    }

    fn batch_gradient(&self, client: usize, model: &[f64], batch: &[usize]) -> Vec<f64> {
        let data = &self.clients[client];
        let mut grad = vec![0.0; data.dim];
        for &r in batch {
            let row = data.row(r);
            let residual: f64 =
                row.iter().zip(model).map(|(a, b)| a * b).sum::<f64>() - data.y[r];
            for (g, &xr) in grad.iter_mut().zip(row) {
                *g += residual * xr;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for (g, &w) in grad.iter_mut().zip(model) {
            *g = *g * inv + self.l2_reg * w;
        }
        grad
    }

    fn hessian(&self, client: usize) -> DMatrix<f64> {
        let data = &self.clients[client];
        let x = DMatrix::from_row_slice(data.rows, data.dim, &data.x);
        let mut h = x.transpose() * &x / data.rows as f64;
        for i in 0..data.dim {
            h[(i, i)] += self.l2_reg;
        }
        h
    }

    /// Largest regularized-Gram eigenvalue over all clients.
    pub fn smoothness(&self) -> f64 {
        (0..self.clients.len())
            .map(|c| {
                let eig = self.hessian(c).symmetric_eigen();
                eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest regularized-Gram eigenvalue over all clients.
    pub fn strong_convexity(&self) -> f64 {
        (0..self.clients.len())
            .map(|c| {
                let eig = self.hessian(c).symmetric_eigen();
                eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Closed-form minimizer of the p-weighted global objective.
    pub fn optimum(&self, weights: &[f64]) -> Result<Vec<f64>> {
        let dim = self.spec.total_params();
        let mut lhs = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for (c, data) in self.clients.iter().enumerate() {
            let p = weights[c];
            lhs += self.hessian(c) * p;
            let x = DMatrix::from_row_slice(data.rows, data.dim, &data.x);
            let y = DVector::from_column_slice(&data.y);
            rhs += x.transpose() * y * (p / data.rows as f64);
        }
        let sol = lhs
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .or_else(|| lhs.lu().solve(&rhs))
            .ok_or(Error::NotStronglyConvex)?;
        Ok(sol.iter().copied().collect())
    }
}

/// Two-layer-plus softmax MLP on a Gaussian mixture; tanh hidden units, no
/// biases. `spec` doubles as the architecture: input width, hidden widths,
/// class count.
#[derive(Debug, Clone)]
pub struct MlpTask {
    pub spec: ModelSpec,
    pub clients: Vec<LabeledData>,
    pub test: LabeledData,
    pub sgd: SgdParams,
}

impl MlpTask {
    pub fn generate(
        n_clients: usize,
        spec: ModelSpec,
        samples_per_client: usize,
        dirichlet_alpha: Option<f64>,
        noise_std: f64,
        sgd: SgdParams,
        seed: u64,
    ) -> Result<Self> {
        if n_clients == 0 || samples_per_client == 0 {
            return Err(Error::InvalidConfig("need clients and samples".into()));
        }
        let dims = spec.layer_channels();
        let feature_dim = dims[0];
        let classes = *dims.last().unwrap();
        if classes < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4d4c_5000);
        // Class means on a fixed-radius sphere.
        let radius = 2.5;
        let means: Vec<Vec<f64>> = (0..classes)
            .map(|_| {
                let v: Vec<f64> = (0..feature_dim)
                    .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-9);
                v.into_iter().map(|a| a * radius / norm).collect()
            })
            .collect();

        let sample_set = |rows: usize, proportions: &[f64], rng: &mut ChaCha8Rng| {
            let mut x = Vec::with_capacity(rows * feature_dim);
            let mut labels = Vec::with_capacity(rows);
            for _ in 0..rows {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut label = classes - 1;
                for (c, &p) in proportions.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        label = c;
                        break;
                    }
                }
                labels.push(label);
                for d in 0..feature_dim {
                    let noise: f64 =
                        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
                    x.push(means[label][d] + noise_std * noise);
                }
            }
            LabeledData { x, labels, rows, dim: feature_dim }
        };

        let uniform = vec![1.0 / classes as f64; classes];
        let clients: Vec<LabeledData> = (0..n_clients)
            .map(|_| {
                let proportions = match dirichlet_alpha {
                    Some(alpha) => {
                        let dir = Dirichlet::new(&vec![alpha; classes])
                            .expect("valid Dirichlet concentration");
                        dir.sample(&mut rng)
                    }
                    None => uniform.clone(),
                };
                sample_set(samples_per_client, &proportions, &mut rng)
            })
            .collect();
        let test = sample_set(512, &uniform, &mut rng);
        Ok(Self { spec, clients, test, sgd })
    }

    fn forward(&self, model: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
        let dims = self.spec.layer_channels();
        let layers = self.spec.num_layers();
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input.to_vec());
        let mut offset = 0usize;
        for z in 0..layers {
            let (rows, cols) = (dims[z], dims[z + 1]);
            let prev = &activations[z];
            let mut pre = vec![0.0; cols];
            for r in 0..rows {
                let a = prev[r];
                if a == 0.0 {
                    continue;
                }
                let w_row = &model[offset + r * cols..offset + (r + 1) * cols];
                for (p, &w) in pre.iter_mut().zip(w_row) {
                    *p += a * w;
                }
            }
            if z + 1 < layers {
                for p in pre.iter_mut() {
                    *p = p.tanh();
                }
            }
            activations.push(pre);
            offset += rows * cols;
        }
        activations
    }

    fn softmax(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    fn sample_loss(&self, model: &[f64], input: &[f64], label: usize) -> f64 {
        let acts = self.forward(model, input);
        let probs = Self::softmax(acts.last().unwrap());
        -(probs[label].max(1e-300)).ln()
    }

    /// Accumulates the backpropagated gradient of one sample into `grad`.
    fn accumulate_gradient(&self, model: &[f64], input: &[f64], label: usize, grad: &mut [f64]) {
        let dims = self.spec.layer_channels();
        let layers = self.spec.num_layers();
        let acts = self.forward(model, input);
        let mut delta = Self::softmax(acts.last().unwrap());
        delta[label] -= 1.0;
        for z in (0..layers).rev() {
            let (rows, cols) = (dims[z], dims[z + 1]);
            let offset = self.spec.layer_offset(z);
            let prev = &acts[z];
            for r in 0..rows {
                let a = prev[r];
                for c in 0..cols {
                    grad[offset + r * cols + c] += a * delta[c];
                }
            }
            if z > 0 {
                let mut next = vec![0.0; rows];
                for (r, slot) in next.iter_mut().enumerate() {
                    let w_row = &model[offset + r * cols..offset + (r + 1) * cols];
                    let dot: f64 = w_row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                    // Backing through tanh: prev holds tanh(pre).
                    *slot = dot * (1.0 - prev[r] * prev[r]);
                }
                delta = next;
            }
        }
    }

    fn batch_gradient(&self, client: usize, model: &[f64], batch: &[usize]) -> Vec<f64> {
        let data = &self.clients[client];
        let mut grad = vec![0.0; model.len()];
        for &r in batch {
            self.accumulate_gradient(model, data.row(r), data.labels[r], &mut grad);
        }
        let inv = 1.0 / batch.len() as f64;
        for g in grad.iter_mut() {
            *g *= inv;
        }
        grad
    }

    pub fn client_loss(&self, client: usize, model: &[f64]) -> f64 {
        let data = &self.clients[client];
        let total: f64 = (0..data.rows)
            .map(|r| self.sample_loss(model, data.row(r), data.labels[r]))
            .sum();
        total / data.rows as f64
    }

    fn eval(&self, data: &LabeledData, model: &[f64]) -> (f64, f64) {
        let mut loss = 0.0;
        let mut correct = 0usize;
        for r in 0..data.rows {
            let acts = self.forward(model, data.row(r));
            let logits = acts.last().unwrap();
            let probs = Self::softmax(logits);
            loss -= probs[data.labels[r]].max(1e-300).ln();
            let pred = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if pred == data.labels[r] {
                correct += 1;
            }
        }
        (loss / data.rows as f64, correct as f64 / data.rows as f64)
    }
}

/// A training task together with its model layout.
#[derive(Debug, Clone)]
pub enum TrainTask {
    Ridge(RidgeTask),
    Mlp(MlpTask),
}

impl TrainTask {
    pub fn model_spec(&self) -> &ModelSpec {
        match self {
            TrainTask::Ridge(t) => &t.spec,
            TrainTask::Mlp(t) => &t.spec,
        }
    }

    pub fn param_count(&self) -> usize {
        self.model_spec().total_params()
    }

    pub fn client_count(&self) -> usize {
        match self {
            TrainTask::Ridge(t) => t.clients.len(),
            TrainTask::Mlp(t) => t.clients.len(),
        }
    }

    pub fn data_sizes(&self) -> Vec<u64> {
        match self {
            TrainTask::Ridge(t) => t.clients.iter().map(|c| c.rows as u64).collect(),
            TrainTask::Mlp(t) => t.clients.iter().map(|c| c.rows as u64).collect(),
        }
    }

    pub fn sgd(&self) -> SgdParams {
        match self {
            TrainTask::Ridge(t) => t.sgd,
            TrainTask::Mlp(t) => t.sgd,
        }
    }

    pub fn is_strongly_convex(&self) -> bool {
        matches!(self, TrainTask::Ridge(_))
    }

    /// Common starting model shared by every client.
    pub fn init_model(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x494e_4954);
        match self {
            TrainTask::Ridge(_) => vec![0.0; self.param_count()],
            TrainTask::Mlp(t) => {
                let dims = t.spec.layer_channels();
                let mut model = Vec::with_capacity(t.spec.total_params());
                for z in 0..t.spec.num_layers() {
                    let scale = 1.0 / (dims[z] as f64).sqrt();
                    for _ in 0..dims[z] * dims[z + 1] {
                        let g: f64 =
                            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                        model.push(scale * g);
                    }
                }
                model
            }
        }
    }

    fn rows_of(&self, client: usize) -> usize {
        match self {
            TrainTask::Ridge(t) => t.clients[client].rows,
            TrainTask::Mlp(t) => t.clients[client].rows,
        }
    }

    pub fn batch_gradient(&self, client: usize, model: &[f64], batch: &[usize]) -> Vec<f64> {
        match self {
            TrainTask::Ridge(t) => t.batch_gradient(client, model, batch),
            TrainTask::Mlp(t) => t.batch_gradient(client, model, batch),
        }
    }

    /// Gradient of the client's full local objective.
    pub fn full_gradient(&self, client: usize, model: &[f64]) -> Vec<f64> {
        let all: Vec<usize> = (0..self.rows_of(client)).collect();
        self.batch_gradient(client, model, &all)
    }

    pub fn client_loss(&self, client: usize, model: &[f64]) -> f64 {
        match self {
            TrainTask::Ridge(t) => t.client_loss(client, model),
            TrainTask::Mlp(t) => t.client_loss(client, model),
        }
    }

    /// `local_epochs` passes of mini-batch SGD from the given model.
    pub fn local_update(&self, client: usize, model: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let sgd = self.sgd();
        let rows = self.rows_of(client);
        let batch = if sgd.batch_size == 0 || sgd.batch_size >= rows {
            rows
        } else {
            sgd.batch_size
        };
        let mut w = model.to_vec();
        for _ in 0..sgd.local_epochs {
            let mut order: Vec<usize> = (0..rows).collect();
            if batch < rows {
                order.shuffle(rng);
            }
            for chunk in order.chunks(batch) {
                let grad = self.batch_gradient(client, &w, chunk);
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient at client {client}")));
                }
                for (wi, gi) in w.iter_mut().zip(&grad) {
                    *wi -= sgd.learning_rate * gi;
                }
            }
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("model at client {client}")));
        }
        Ok(w)
    }

    /// Mean loss on the held-out test set.
    pub fn test_loss(&self, model: &[f64]) -> f64 {
        match self {
            TrainTask::Ridge(t) => RidgeTask::loss_on(&t.test, model, t.l2_reg),
            TrainTask::Mlp(t) => t.eval(&t.test, model).0,
        }
    }

    /// Test accuracy; undefined for regression.
    pub fn test_accuracy(&self, model: &[f64]) -> Option<f64> {
        match self {
            TrainTask::Ridge(_) => None,
            TrainTask::Mlp(t) => Some(t.eval(&t.test, model).1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_ridge() -> RidgeTask {
        RidgeTask::generate(
            3,
            ModelSpec::new(vec![2, 3]).unwrap(),
            20,
            0.1,
            0.05,
            SgdParams { learning_rate: 0.05, batch_size: 0, local_epochs: 1 },
            9,
        )
        .unwrap()
    }

    #[test]
    fn model_at_optimum_is_a_fixed_point() {
        let ridge = small_ridge();
        let n = ridge.clients.len();
        let task = TrainTask::Ridge(ridge);
        let weights = vec![1.0 / n as f64; n];
        let opt = match &task {
            TrainTask::Ridge(t) => t.optimum(&weights).unwrap(),
            _ => unreachable!(),
        };
        // The p-weighted gradient vanishes at the global optimum.
        let mut mixed = vec![0.0; opt.len()];
        for c in 0..n {
            let g = task.full_gradient(c, &opt);
            for (m, gi) in mixed.iter_mut().zip(&g) {
                *m += gi / n as f64;
            }
        }
        for g in mixed {
            assert!(g.abs() < 1e-9, "residual gradient {g}");
        }
    }

    #[test]
    fn one_dimensional_quadratic_step() {
        // F(w) = 1/2 (w - a)^2 realized as one sample x=1, y=a, no reg.
        let a = 3.0;
        let ridge = RidgeTask {
            spec: ModelSpec::new(vec![1, 1]).unwrap(),
            clients: vec![RegressionData { x: vec![1.0], y: vec![a], rows: 1, dim: 1 }],
            test: RegressionData { x: vec![1.0], y: vec![a], rows: 1, dim: 1 },
            l2_reg: 0.0,
            sgd: SgdParams { learning_rate: 0.25, batch_size: 0, local_epochs: 1 },
        };
        let task = TrainTask::Ridge(ridge);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w0 = 1.0;
        let w1 = task.local_update(0, &[w0], &mut rng).unwrap()[0];
        assert!((w1 - (w0 - 0.25 * (w0 - a))).abs() < 1e-15);
    }

    #[test]
    fn ridge_gradient_matches_finite_differences() {
        let task = TrainTask::Ridge(small_ridge());
        check_gradient(&task, 11);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mlp = MlpTask::generate(
            2,
            ModelSpec::new(vec![4, 6, 3]).unwrap(),
            12,
            None,
            1.0,
            SgdParams { learning_rate: 0.1, batch_size: 4, local_epochs: 1 },
            3,
        )
        .unwrap();
        let task = TrainTask::Mlp(mlp);
        check_gradient(&task, 13);
    }

    fn check_gradient(task: &TrainTask, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = task.param_count();
        let model: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
        let grad = task.full_gradient(0, &model);
        let eps = 1e-6;
        for k in 0..dim {
            let mut plus = model.clone();
            plus[k] += eps;
            let mut minus = model.clone();
            minus[k] -= eps;
            let fd = (task.client_loss(0, &plus) - task.client_loss(0, &minus)) / (2.0 * eps);
            let denom = fd.abs().max(grad[k].abs()).max(1e-4);
            assert!(
                (fd - grad[k]).abs() / denom < 1e-6,
                "coordinate {k}: analytic {} vs fd {fd}",
                grad[k]
            );
        }
    }

    #[test]
    fn smoothness_dominates_strong_convexity() {
        let ridge = small_ridge();
        let l = ridge.smoothness();
        let mu = ridge.strong_convexity();
        assert!(l >= mu);
        assert!(mu >= ridge.l2_reg - 1e-12);
    }

    #[test]
    fn local_update_is_deterministic() {
        let mlp = MlpTask::generate(
            2,
            ModelSpec::new(vec![4, 5, 2]).unwrap(),
            16,
            Some(0.5),
            1.0,
            SgdParams { learning_rate: 0.1, batch_size: 4, local_epochs: 2 },
            17,
        )
        .unwrap();
        let task = TrainTask::Mlp(mlp);
        let model = task.init_model(1);
        let a = task.local_update(0, &model, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = task.local_update(0, &model, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mlp_learns_the_mixture() {
        let mlp = MlpTask::generate(
            1,
            ModelSpec::new(vec![8, 16, 3]).unwrap(),
            96,
            None,
            1.0,
            SgdParams { learning_rate: 0.1, batch_size: 16, local_epochs: 1 },
            23,
        )
        .unwrap();
        let task = TrainTask::Mlp(mlp);
        let mut model = task.init_model(2);
        let before = task.test_accuracy(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..60 {
            model = task.local_update(0, &model, &mut rng).unwrap();
        }
        let after = task.test_accuracy(&model).unwrap();
        assert!(after > before.max(0.5), "accuracy {before} -> {after}");
    }
}
