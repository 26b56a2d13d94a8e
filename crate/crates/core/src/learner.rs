//! Learners and the synthetic classification task used by the simulator.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{self, SimRng};
use crate::socialnet::{Owners, SampleBlock, SocialGraph};

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, x: &[f64], y: u32) {
        debug_assert_eq!(x.len(), self.dim);
        self.features.extend_from_slice(x);
        self.labels.push(y);
    }

    pub fn extend(&mut self, other: &Dataset) {
        debug_assert_eq!(self.dim, other.dim);
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
    }
}

pub trait Learner: Sync {
    fn param_count(&self) -> usize;

    fn init(&self) -> Vec<f64> {
        vec![0.0; self.param_count()]
    }

    /// Mean loss gradient over `data`.
    fn gradient(&self, model: &[f64], data: &Dataset) -> Vec<f64>;

    fn loss(&self, model: &[f64], data: &Dataset) -> f64;

    /// Accuracy in `[0, 1]`.
    fn evaluate(&self, model: &[f64], data: &Dataset) -> f64;

    /// `iters` full-batch gradient steps of size `lr`.
    fn local_train(&self, model: &[f64], data: &Dataset, iters: u32, lr: f64) -> Vec<f64> {
        let mut w = model.to_vec();
        if data.is_empty() {
            return w;
        }
        for _ in 0..iters {
            let g = self.gradient(&w, data);
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= lr * gi;
            }
        }
        w
    }
}

/// Multinomial logistic regression. Parameters are `classes` rows of
/// `dim` weights followed by a bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftmaxRegression {
    pub dim: usize,
    pub classes: usize,
}

impl SoftmaxRegression {
    fn logits(&self, model: &[f64], x: &[f64], out: &mut [f64]) {
        let stride = self.dim + 1;
        for (c, o) in out.iter_mut().enumerate() {
            let row = &model[c * stride..(c + 1) * stride];
            *o = row[self.dim] + row[..self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// In-place softmax; returns the log-normaliser.
    fn softmax(z: &mut [f64]) -> f64 {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in z.iter_mut() {
            *v /= sum;
        }
        max + sum.ln()
    }
}

impl Learner for SoftmaxRegression {
    fn param_count(&self) -> usize {
        self.classes * (self.dim + 1)
    }

    fn gradient(&self, model: &[f64], data: &Dataset) -> Vec<f64> {
        let stride = self.dim + 1;
        let mut g = vec![0.0; self.param_count()];
        if data.is_empty() {
            return g;
        }
        let mut p = vec![0.0; self.classes];
        for i in 0..data.len() {
            let x = data.row(i);
            self.logits(model, x, &mut p);
            Self::softmax(&mut p);
            p[data.labels[i] as usize] -= 1.0;
            for (c, &err) in p.iter().enumerate() {
                let row = &mut g[c * stride..(c + 1) * stride];
                for (gw, v) in row[..self.dim].iter_mut().zip(x) {
                    *gw += err * v;
                }
                row[self.dim] += err;
            }
        }
        let n = data.len() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    fn loss(&self, model: &[f64], data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let mut z = vec![0.0; self.classes];
        let mut total = 0.0;
        for i in 0..data.len() {
            self.logits(model, data.row(i), &mut z);
            let y = z[data.labels[i] as usize];
            total += Self::softmax(&mut z) - y;
        }
        total / data.len() as f64
    }

    fn evaluate(&self, model: &[f64], data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let mut z = vec![0.0; self.classes];
        let correct = (0..data.len())
            .filter(|&i| {
                self.logits(model, data.row(i), &mut z);
                let best = (0..self.classes)
                    .max_by(|&a, &b| z[a].total_cmp(&z[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                best == data.labels[i] as usize
            })
            .count();
        correct as f64 / data.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskParams {
    pub dim: usize,
    pub classes: usize,
    /// Dirichlet concentration of per-client label proportions.
    pub dirichlet: f64,
    /// Scale of the class means.
    pub separation: f64,
    /// Per-coordinate feature noise.
    pub noise: f64,
    pub test_per_class: usize,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            dim: 32,
            classes: 10,
            dirichlet: 0.6,
            separation: 0.4,
            noise: 1.0,
            test_per_class: 500,
        }
    }
}

impl TaskParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.dim == 0 || self.classes < 2 {
            return Err("task needs dim ≥ 1 and at least two classes".into());
        }
        if !(self.dirichlet > 0.0 && self.separation >= 0.0 && self.noise >= 0.0) {
            return Err("dirichlet must be positive; separation and noise nonnegative".into());
        }
        Ok(())
    }
}

/// Draw from `Dirichlet(ρ, …, ρ)` via normalised gammas.
pub fn dirichlet<R: Rng + ?Sized>(k: usize, rho: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(rho, 1.0).expect("positive concentration");
    loop {
        let v: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 && s.is_finite() {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

/// Gaussian class clusters with non-IID label proportions per client. Every
/// sample block of the social graph is realised from its own seeded stream, so
/// a shared block is the same data on both owners.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub params: TaskParams,
    seed: u64,
    means: Vec<Vec<f64>>,
    proportions: Vec<Vec<f64>>,
}

impl SyntheticTask {
    pub fn new(params: TaskParams, n_clients: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[rng::tag::TASK, 0]);
        let means = (0..params.classes)
            .map(|_| {
                (0..params.dim)
                    .map(|_| params.separation * r.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let proportions = (0..n_clients)
            .map(|c| {
                let mut r = rng::stream(seed, &[rng::tag::TASK, 3, c as u64]);
                dirichlet(params.classes, params.dirichlet, &mut r)
            })
            .collect();
        Self {
            params,
            seed,
            means,
            proportions,
        }
    }

    pub fn learner(&self) -> SoftmaxRegression {
        SoftmaxRegression {
            dim: self.params.dim,
            classes: self.params.classes,
        }
    }

    pub fn proportions(&self, client: usize) -> &[f64] {
        &self.proportions[client]
    }

    /// Label proportions of a block: the owner's own, or for a shared block the
    /// pair's common interests (normalised elementwise product).
    pub fn block_proportions(&self, owners: &Owners) -> Vec<f64> {
        match *owners {
            Owners::Single(a) => self.proportions[a].clone(),
            Owners::Pair(a, b) => {
                let floor = 1e-3 / self.params.classes as f64;
                let v: Vec<f64> = self.proportions[a]
                    .iter()
                    .zip(&self.proportions[b])
                    .map(|(x, y)| x * y + floor)
                    .collect();
                let s: f64 = v.iter().sum();
                v.into_iter().map(|x| x / s).collect()
            }
        }
    }

    fn sample_into(&self, label: usize, r: &mut SimRng, out: &mut Dataset, x: &mut [f64]) {
        for (xi, m) in x.iter_mut().zip(&self.means[label]) {
            *xi = m + self.params.noise * r.sample::<f64, _>(StandardNormal);
        }
        out.push(x, label as u32);
    }

    pub fn block_data(&self, block: &SampleBlock) -> Dataset {
        let props = self.block_proportions(&block.owners);
        let labels = WeightedIndex::new(&props).expect("proportions are positive");
        let mut r = rng::stream(self.seed, &[rng::tag::TASK, 1, block.id as u64]);
        let mut out = Dataset::new(self.params.dim);
        let mut x = vec![0.0; self.params.dim];
        for _ in 0..block.size {
            let y = labels.sample(&mut r);
            self.sample_into(y, &mut r, &mut out, &mut x);
        }
        out
    }

    /// Local dataset of every client: the concatenation of its blocks.
    pub fn client_datasets(&self, graph: &SocialGraph) -> Vec<Dataset> {
        let blocks: Vec<Dataset> = graph.blocks().iter().map(|b| self.block_data(b)).collect();
        (0..graph.n_clients())
            .map(|c| {
                let mut d = Dataset::new(self.params.dim);
                for &b in graph.blocks_of(c) {
                    d.extend(&blocks[b]);
                }
                d
            })
            .collect()
    }

    /// Class-balanced held-out set.
    pub fn test_set(&self) -> Dataset {
        let mut r = rng::stream(self.seed, &[rng::tag::TASK, 2]);
        let mut out = Dataset::new(self.params.dim);
        let mut x = vec![0.0; self.params.dim];
        for _ in 0..self.params.test_per_class {
            for c in 0..self.params.classes {
                self.sample_into(c, &mut r, &mut out, &mut x);
            }
        }
        out
    }
}
