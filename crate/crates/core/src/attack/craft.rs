use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::embedding_loss_graph;
use super::{project, reparam, reparam_graph, reparam_inverse, AttackError, PerturbationBudget, UaxArtifact};
use crate::dataset::{IdentityDataset, ImageTensor};
use crate::extractor::{Embedder, ModelError};
use crate::metrics::{distance, Metric};
use crate::numerics::{Graph, NumericsError, Tensor};

/// When `ν` is pulled back into the budget ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionSchedule {
    /// After every SGD step; `w` restarts from the projected point.
    #[default]
    EveryIteration,
    /// Once, after the last step.
    FinalOnly,
}

/// How each mini-batch is drawn from the training pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `n` distinct images, uniform over the flattened image pool.
    #[default]
    Uniform,
    /// `n` identities (distinct while `n` does not exceed the identity
    /// count), then one uniform image from each.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CraftConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    pub budget: PerturbationBudget,
    pub metric: Metric,
    pub projection: ProjectionSchedule,
    pub sampling: Sampling,
}

impl Default for CraftConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            batch_size: 32,
            learning_rate: 0.01,
            rng_seed: 0,
            budget: PerturbationBudget::linf(10.0 / 255.0).expect("positive radius"),
            metric: Metric::Euclidean,
            projection: ProjectionSchedule::EveryIteration,
            sampling: Sampling::Uniform,
        }
    }
}

impl CraftConfig {
    /// Checks the config against a training pool of `pool_size` images.
    pub fn validate(&self, pool_size: usize) -> Result<(), AttackError> {
        let fail = |m: String| Err(AttackError::InvalidConfig(m));
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > pool_size {
            return fail(format!(
                "batch_size must lie in 1..={pool_size} (training pool size), got {}",
                self.batch_size
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        PerturbationBudget::new(self.budget.norm(), self.budget.xi()).map(|_| ())
    }
}

fn hwc_to_chw(v: &[f64], (h, w, c): (usize, usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(ch * h + y) * w + x] = v[(y * w + x) * c + ch];
            }
        }
    }
    out
}

fn chw_to_hwc(v: &[f64], (h, w, c): (usize, usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(y * w + x) * c + ch] = v[(ch * h + y) * w + x];
            }
        }
    }
    out
}

fn iteration_error(iteration: usize, e: NumericsError) -> AttackError {
    match e {
        NumericsError::NonFinite { .. } => AttackError::NonFinite { iteration, source: e },
        other => AttackError::Numerics(other),
    }
}

fn sample_batch(rng: &mut ChaCha8Rng, cfg: &CraftConfig, pool: usize, by_class: &[Vec<usize>]) -> Vec<usize> {
    let n = cfg.batch_size;
    match cfg.sampling {
        Sampling::Uniform => index::sample(rng, pool, n).into_vec(),
        Sampling::Stratified => {
            let k = by_class.len();
            let classes = if n <= k {
                index::sample(rng, k, n).into_vec()
            } else {
                (0..n).map(|_| rng.gen_range(0..k)).collect()
            };
            classes
                .into_iter()
                .map(|c| by_class[c][rng.gen_range(0..by_class[c].len())])
                .collect()
        }
    }
}

/// Crafts a UAX from seed `x_a` against every image of `train`.
///
/// Optimizes `w` with `x′ = (tanh(w) + 1) / 2` by plain SGD on the mean
/// embedding distance to a fresh mini-batch per iteration, starting from
/// `ν = 0`. `loss_trace[i]` is the batch loss evaluated before step `i`.
/// The artifact's `final_loss` is the mean distance from the returned `x′`
/// to the whole training pool.
pub fn craft_uax<E: Embedder + ?Sized>(
    model: &E,
    x_a: &ImageTensor,
    train: &IdentityDataset,
    cfg: &CraftConfig,
) -> Result<UaxArtifact, AttackError> {
    let dims = model.input_dims();
    for got in [x_a.dims(), train.image_shape()] {
        if got != dims {
            return Err(ModelError::InputShape { expected: dims, got }.into());
        }
    }
    let pool: Vec<(usize, &ImageTensor)> = train.images().collect();
    cfg.validate(pool.len())?;

    let images: Vec<&ImageTensor> = pool.iter().map(|(_, img)| *img).collect();
    let targets: Vec<Arc<Tensor>> = model
        .embed_batch(&images)?
        .into_iter()
        .map(|e| Tensor::new(vec![1, e.len()], e).map(Arc::new))
        .collect::<Result<_, _>>()?;
    let mut by_class = vec![Vec::new(); train.identity_count()];
    for (i, (class, _)) in pool.iter().enumerate() {
        by_class[*class].push(i);
    }

    let (h, w_, c) = dims;
    let seed = x_a.pixels();
    let mut w: Vec<f64> = seed.iter().map(|&x| reparam_inverse(x)).collect();
    let mut nu = vec![0.0; seed.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut loss_trace = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let batch: Vec<Arc<Tensor>> = sample_batch(&mut rng, cfg, pool.len(), &by_class)
            .into_iter()
            .map(|i| Arc::clone(&targets[i]))
            .collect();
        let step = || -> Result<(f64, Tensor), NumericsError> {
            let mut g = Graph::new();
            let wv = g.param(Tensor::new(vec![1, c, h, w_], hwc_to_chw(&w, dims))?)?;
            let x = reparam_graph(&mut g, wv)?;
            let e = model.embed_graph(&mut g, x)?;
            let loss = embedding_loss_graph(&mut g, e, &batch, cfg.metric)?;
            let value = g.value(loss)?.data()[0];
            let mut grads = g.backward(loss)?;
            Ok((value, grads.take(wv).expect("w requires grad")))
        };
        let (loss, grad) = step().map_err(|e| iteration_error(iteration, e))?;
        loss_trace.push(loss);

        let grad = chw_to_hwc(grad.data(), dims);
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= cfg.learning_rate * gi;
        }
        if let Some(index) = w.iter().position(|v| !v.is_finite()) {
            return Err(iteration_error(iteration, NumericsError::NonFinite { op: "sgd_update", index }));
        }
        if cfg.projection == ProjectionSchedule::EveryIteration {
            let raw: Vec<f64> = w.iter().zip(seed).map(|(wi, x)| reparam(*wi) - x).collect();
            nu = project(&raw, &cfg.budget);
            w = seed.iter().zip(&nu).map(|(x, v)| reparam_inverse(x + v)).collect();
        }
    }
    if cfg.projection == ProjectionSchedule::FinalOnly {
        let raw: Vec<f64> = w.iter().zip(seed).map(|(wi, x)| reparam(*wi) - x).collect();
        nu = project(&raw, &cfg.budget);
    }

    let x_prime = super::apply_perturbation(x_a, &nu)?;
    let probe = model.embed(&x_prime)?;
    let mut total = 0.0;
    for t in &targets {
        total += distance(&probe, t.data(), cfg.metric)?;
    }
    let final_loss = total / targets.len() as f64;

    let seed_label = train
        .identities()
        .find(|(_, imgs)| imgs.contains(x_a))
        .map(|(label, _)| label.to_owned());
    let artifact = UaxArtifact::new(x_a.clone(), nu, cfg.clone(), final_loss, loss_trace)?;
    Ok(match seed_label {
        Some(label) => artifact.with_seed_label(label),
        None => artifact,
    })
}
