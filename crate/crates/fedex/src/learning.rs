//! Learning tasks with analytically known smoothness/variance constants,
//! plus the three data-partition schemes used by the scenarios.
//!
//! The quadratic task is the main vehicle: its Lipschitz constant, optimum
//! and optimal value are exact, so convergence-bound checks carry no
//! estimation slack. The logistic task exercises mini-batch noise with a
//! clipping-supplied gradient bound.

use rand::Rng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::topology::Block;
use crate::{Error, Result};

/// Constants entering the convergence bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskConstants {
    /// Smoothness constant L.
    pub l_smooth: f64,
    /// Gradient clipping radius G (hard norm bound, enforced exactly).
    pub clip_g: f64,
    /// Gradient-noise scale sigma.
    pub sigma: f64,
    /// Global optimum value f*, when known in closed form.
    pub f_star: Option<f64>,
    pub dimension: usize,
}

/// f_i(x) = 1/2 ||A x - b_i||^2 with a shared diagonal A.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticTask {
    /// Diagonal of A.
    pub a_diag: Vec<f64>,
    /// Per-client targets b_i.
    pub b: Vec<Vec<f64>>,
    /// Injected isotropic Gaussian noise scale: E||xi||^2 = sigma^2.
    pub sigma: f64,
    pub clip_g: f64,
}

impl QuadraticTask {
    pub fn new(a_diag: Vec<f64>, b: Vec<Vec<f64>>, sigma: f64, clip_g: f64) -> Result<Self> {
        if b.is_empty() {
            return Err(Error::invalid("quadratic task needs at least one client"));
        }
        let d = a_diag.len();
        if b.iter().any(|bi| bi.len() != d) {
            return Err(Error::invalid("all b_i must match the dimension of A"));
        }
        if a_diag.iter().any(|&a| a == 0.0 || !a.is_finite()) {
            return Err(Error::invalid("A must be invertible with finite entries"));
        }
        if !(clip_g > 0.0) || sigma < 0.0 {
            return Err(Error::invalid("clip_g must be positive and sigma non-negative"));
        }
        Ok(QuadraticTask { a_diag, b, sigma, clip_g })
    }

    pub fn dimension(&self) -> usize {
        self.a_diag.len()
    }

    pub fn n_clients(&self) -> usize {
        self.b.len()
    }

    /// Exact per-client gradient A^T (A x - b_i).
    pub fn grad_i(&self, client: usize, x: &[f64]) -> Vec<f64> {
        let bi = &self.b[client - 1];
        self.a_diag
            .iter()
            .zip(x)
            .zip(bi)
            .map(|((&a, &xj), &bj)| a * (a * xj - bj))
            .collect()
    }

    pub fn loss_i(&self, client: usize, x: &[f64]) -> f64 {
        let bi = &self.b[client - 1];
        0.5 * self
            .a_diag
            .iter()
            .zip(x)
            .zip(bi)
            .map(|((&a, &xj), &bj)| (a * xj - bj).powi(2))
            .sum::<f64>()
    }

    /// L = lambda_max(A^T A), exact for diagonal A.
    pub fn l_smooth(&self) -> f64 {
        self.a_diag.iter().map(|a| a * a).fold(0.0, f64::max)
    }

    /// Global minimizer: A x* = mean(b_i).
    pub fn x_star(&self) -> Vec<f64> {
        let n = self.b.len() as f64;
        (0..self.dimension())
            .map(|j| self.b.iter().map(|bi| bi[j]).sum::<f64>() / n / self.a_diag[j])
            .collect()
    }

    /// f* = (1/2N) sum_i ||mean(b) - b_i||^2.
    pub fn f_star(&self) -> f64 {
        let n = self.b.len() as f64;
        let mean: Vec<f64> = (0..self.dimension())
            .map(|j| self.b.iter().map(|bi| bi[j]).sum::<f64>() / n)
            .collect();
        self.b
            .iter()
            .map(|bi| 0.5 * bi.iter().zip(&mean).map(|(&bj, &mj)| (mj - bj).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n
    }
}

/// Binary logistic regression with l2 regularization over per-client shards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticTask {
    /// Per-client samples: (feature vector, label in {-1, +1}).
    pub shards: Vec<Vec<(Vec<f64>, f64)>>,
    pub lambda: f64,
    pub batch_size: usize,
    pub clip_g: f64,
    /// Nominal noise scale reported in constants (mini-batch sampling noise).
    pub sigma: f64,
}

impl LogisticTask {
    pub fn dimension(&self) -> usize {
        self.shards.iter().find(|s| !s.is_empty()).map_or(0, |s| s[0].0.len())
    }

    fn grad_sample(&self, w: &[f64], sample: &(Vec<f64>, f64)) -> Vec<f64> {
        let (xv, y) = sample;
        let z: f64 = w.iter().zip(xv).map(|(&wi, &xi)| wi * xi).sum();
        let s = -y / (1.0 + (y * z).exp());
        xv.iter().zip(w).map(|(&xi, &wi)| s * xi + self.lambda * wi).collect()
    }

    pub fn grad_i(&self, client: usize, w: &[f64]) -> Vec<f64> {
        let shard = &self.shards[client - 1];
        let mut g = vec![0.0; w.len()];
        for sample in shard {
            for (gj, sj) in g.iter_mut().zip(self.grad_sample(w, sample)) {
                *gj += sj;
            }
        }
        let n = shard.len().max(1) as f64;
        for gj in g.iter_mut() {
            *gj /= n;
        }
        g
    }

    pub fn loss_i(&self, client: usize, w: &[f64]) -> f64 {
        let shard = &self.shards[client - 1];
        let n = shard.len().max(1) as f64;
        let data: f64 = shard
            .iter()
            .map(|(xv, y)| {
                let z: f64 = w.iter().zip(xv).map(|(&wi, &xi)| wi * xi).sum();
                (1.0 + (-y * z).exp()).ln()
            })
            .sum();
        let reg: f64 = 0.5 * self.lambda * w.iter().map(|wi| wi * wi).sum::<f64>();
        data / n + reg
    }

    /// Upper bound on L: (1/4) max ||x_j||^2 + lambda.
    pub fn l_smooth(&self) -> f64 {
        let max_norm2 = self
            .shards
            .iter()
            .flatten()
            .map(|(xv, _)| xv.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        0.25 * max_norm2 + self.lambda
    }
}

/// A pluggable learning task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Task {
    Quadratic(QuadraticTask),
    Logistic(LogisticTask),
}

impl Task {
    pub fn dimension(&self) -> usize {
        match self {
            Task::Quadratic(t) => t.dimension(),
            Task::Logistic(t) => t.dimension(),
        }
    }

    pub fn n_clients(&self) -> usize {
        match self {
            Task::Quadratic(t) => t.n_clients(),
            Task::Logistic(t) => t.shards.len(),
        }
    }

    pub fn clip_g(&self) -> f64 {
        match self {
            Task::Quadratic(t) => t.clip_g,
            Task::Logistic(t) => t.clip_g,
        }
    }

    /// Stochastic gradient of F_i at x: unbiased noise before clipping to
    /// radius G.
    pub fn stochastic_gradient(&self, client: usize, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut g = match self {
            Task::Quadratic(t) => {
                let mut g = t.grad_i(client, x);
                if t.sigma > 0.0 {
                    let scale = t.sigma / (t.dimension() as f64).sqrt();
                    for gj in g.iter_mut() {
                        let xi: f64 = StandardNormal.sample(rng);
                        *gj += scale * xi;
                    }
                }
                g
            }
            Task::Logistic(t) => {
                let shard = &t.shards[client - 1];
                if shard.is_empty() {
                    vec![0.0; x.len()]
                } else {
                    let mut g = vec![0.0; x.len()];
                    let batch = t.batch_size.min(shard.len()).max(1);
                    for _ in 0..batch {
                        let idx = rng.gen_range(0..shard.len());
                        for (gj, sj) in g.iter_mut().zip(t.grad_sample(x, &shard[idx])) {
                            *gj += sj;
                        }
                    }
                    for gj in g.iter_mut() {
                        *gj /= batch as f64;
                    }
                    g
                }
            }
        };
        clip_to_radius(&mut g, self.clip_g());
        g
    }

    /// Exact global loss and gradient (1/N) sum_i f_i.
    pub fn global_loss_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n_clients();
        let mut loss = 0.0;
        let mut grad = vec![0.0; x.len()];
        for i in 1..=n {
            let (li, gi) = match self {
                Task::Quadratic(t) => (t.loss_i(i, x), t.grad_i(i, x)),
                Task::Logistic(t) => (t.loss_i(i, x), t.grad_i(i, x)),
            };
            loss += li;
            for (gj, gij) in grad.iter_mut().zip(gi) {
                *gj += gij;
            }
        }
        let nf = n as f64;
        for gj in grad.iter_mut() {
            *gj /= nf;
        }
        (loss / nf, grad)
    }

    pub fn constants(&self) -> TaskConstants {
        match self {
            Task::Quadratic(t) => TaskConstants {
                l_smooth: t.l_smooth(),
                clip_g: t.clip_g,
                sigma: t.sigma,
                f_star: Some(t.f_star()),
                dimension: t.dimension(),
            },
            Task::Logistic(t) => TaskConstants {
                l_smooth: t.l_smooth(),
                clip_g: t.clip_g,
                sigma: t.sigma,
                f_star: None,
                dimension: t.dimension(),
            },
        }
    }
}

fn clip_to_radius(g: &mut [f64], radius: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > radius {
        let scale = radius / norm;
        for gj in g.iter_mut() {
            *gj *= scale;
        }
    }
}

/// A labeled synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_labels: usize,
}

impl Dataset {
    /// Gaussian blobs around per-label anchor points.
    pub fn synthetic(n_samples: usize, n_labels: usize, dimension: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors: Vec<Vec<f64>> = (0..n_labels)
            .map(|_| (0..dimension).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let mut features = Vec::with_capacity(n_samples);
        let mut labels = Vec::with_capacity(n_samples);
        for s in 0..n_samples {
            let label = s % n_labels;
            let f: Vec<f64> = anchors[label]
                .iter()
                .map(|&a| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    a + 0.3 * noise
                })
                .collect();
            features.push(f);
            labels.push(label);
        }
        Dataset { features, labels, n_labels }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// How samples are spread over clients.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum PartitionScheme {
    Iid,
    Dirichlet { alpha: f64 },
    /// Each block favors one label with probability `p_main`.
    Location { p_main: f64 },
}

/// Splits sample indices over `n_clients` clients. The location scheme needs
/// the block layout (clients in the same block share a distribution).
pub fn partition_data(
    dataset: &Dataset,
    scheme: &PartitionScheme,
    n_clients: usize,
    blocks: Option<&[Block]>,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if n_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shards = vec![Vec::new(); n_clients];
    match scheme {
        PartitionScheme::Iid => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut rng);
            for (pos, &s) in idx.iter().enumerate() {
                shards[pos % n_clients].push(s);
            }
        }
        PartitionScheme::Dirichlet { alpha } => {
            if !(*alpha > 0.0) {
                return Err(Error::invalid("dirichlet alpha must be positive"));
            }
            for label in 0..dataset.n_labels {
                let weights: Vec<f64> = if n_clients == 1 {
                    vec![1.0]
                } else {
                    Dirichlet::new_with_size(*alpha, n_clients)
                        .map_err(|e| Error::invalid(format!("dirichlet: {e}")))?
                        .sample(&mut rng)
                };
                for s in 0..dataset.len() {
                    if dataset.labels[s] != label {
                        continue;
                    }
                    let draw: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut client = n_clients - 1;
                    for (c, &w) in weights.iter().enumerate() {
                        acc += w;
                        if draw < acc {
                            client = c;
                            break;
                        }
                    }
                    shards[client].push(s);
                }
            }
        }
        PartitionScheme::Location { p_main } => {
            let blocks = blocks.ok_or_else(|| Error::invalid("location partition needs block metadata"))?;
            if !(*p_main > 0.0 && *p_main <= 1.0) {
                return Err(Error::invalid("p_main must be in (0, 1]"));
            }
            // Pools of sample indices per label, shuffled once.
            let mut pools: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_labels];
            for s in 0..dataset.len() {
                pools[dataset.labels[s]].push(s);
            }
            for pool in pools.iter_mut() {
                pool.shuffle(&mut rng);
            }
            let quota = dataset.len() / n_clients;
            for block_idx in 0..blocks.len() {
                let main = block_idx % dataset.n_labels;
                for &client_id in &blocks[block_idx].members {
                    let client = client_id - 1;
                    for _ in 0..quota {
                        let want = if rng.gen::<f64>() < *p_main {
                            main
                        } else if dataset.n_labels > 1 {
                            let mut other = rng.gen_range(0..dataset.n_labels - 1);
                            if other >= main {
                                other += 1;
                            }
                            other
                        } else {
                            main
                        };
                        let label = if !pools[want].is_empty() {
                            want
                        } else if let Some(l) = (0..dataset.n_labels).find(|&l| !pools[l].is_empty()) {
                            l
                        } else {
                            break;
                        };
                        shards[client].push(pools[label].pop().unwrap());
                    }
                }
            }
            // Spread any remainder round-robin.
            let mut c = 0;
            for pool in pools.iter_mut() {
                while let Some(s) = pool.pop() {
                    shards[c % n_clients].push(s);
                    c += 1;
                }
            }
        }
    }
    Ok(shards)
}

/// Builds the default quadratic task from a partitioned dataset: b_i is the
/// mean feature vector of client i's shard.
pub fn quadratic_from_shards(
    dataset: &Dataset,
    shards: &[Vec<usize>],
    a_diag: Vec<f64>,
    sigma: f64,
    clip_g: f64,
) -> Result<QuadraticTask> {
    let d = a_diag.len();
    let b: Vec<Vec<f64>> = shards
        .iter()
        .map(|shard| {
            let mut m = vec![0.0; d];
            for &s in shard {
                for (mj, &fj) in m.iter_mut().zip(&dataset.features[s]) {
                    *mj += fj;
                }
            }
            let n = shard.len().max(1) as f64;
            m.iter_mut().for_each(|mj| *mj /= n);
            m
        })
        .collect();
    QuadraticTask::new(a_diag, b, sigma, clip_g)
}
