use std::sync::Arc;

use super::AttackError;
use crate::dataset::ImageTensor;
use crate::extractor::{images_to_tensor, Embedder};
use crate::metrics::{distance, Metric};
use crate::numerics::{Graph, NumericsError, Tensor, Var};

/// Mean distance between `probe` (one embedding, any shape) and each target
/// embedding of the same shape, recorded on `g`.
pub fn embedding_loss_graph(
    g: &mut Graph,
    probe: Var,
    targets: &[Arc<Tensor>],
    metric: Metric,
) -> Result<Var, NumericsError> {
    assert!(!targets.is_empty(), "embedding_loss_graph needs at least one target");
    let mut total: Option<Var> = None;
    for t in targets {
        let target = g.constant(Arc::clone(t))?;
        let d = match metric {
            Metric::Euclidean => {
                let diff = g.sub(probe, target)?;
                g.l2norm(diff)?
            }
            Metric::Cosine => g.cosine_distance(probe, target)?,
        };
        total = Some(match total {
            Some(acc) => g.add(acc, d)?,
            None => d,
        });
    }
    g.scale(total.expect("non-empty targets"), 1.0 / targets.len() as f64)
}

/// `f(x′; x_j)`: distance between the embeddings of `x_prime` and `x_j`.
pub fn pairwise_loss<E: Embedder + ?Sized>(
    model: &E,
    x_prime: &ImageTensor,
    x_j: &ImageTensor,
    metric: Metric,
) -> Result<f64, AttackError> {
    batch_loss(model, x_prime, &[x_j], metric)
}

/// `F(x′; S)`: arithmetic mean of [`pairwise_loss`] over `batch`.
pub fn batch_loss<E: Embedder + ?Sized>(
    model: &E,
    x_prime: &ImageTensor,
    batch: &[&ImageTensor],
    metric: Metric,
) -> Result<f64, AttackError> {
    if batch.is_empty() {
        return Err(AttackError::EmptyBatch);
    }
    let probe = model.embed(x_prime)?;
    let targets = model.embed_batch(batch)?;
    let mut sum = 0.0;
    for t in &targets {
        sum += distance(&probe, t, metric)?;
    }
    Ok(sum / batch.len() as f64)
}

/// Loss and its gradient with respect to the planar `(1, C, H, W)` probe
/// pixels.
pub fn batch_loss_gradient<E: Embedder + ?Sized>(
    model: &E,
    x_prime: &ImageTensor,
    batch: &[&ImageTensor],
    metric: Metric,
) -> Result<(f64, Tensor), AttackError> {
    if batch.is_empty() {
        return Err(AttackError::EmptyBatch);
    }
    let targets: Vec<Arc<Tensor>> = model
        .embed_batch(batch)?
        .into_iter()
        .map(|e| Tensor::new(vec![1, e.len()], e).map(Arc::new))
        .collect::<Result<_, _>>()?;
    let mut g = Graph::new();
    let x = g.param(images_to_tensor(&[x_prime], model.input_dims())?)?;
    let e = model.embed_graph(&mut g, x)?;
    let loss = embedding_loss_graph(&mut g, e, &targets, metric)?;
    let value = g.value(loss)?.data()[0];
    let mut grads = g.backward(loss)?;
    Ok((value, grads.take(x).expect("probe requires grad")))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Linear embedder `φ(x) = x · W` on the flattened planar image.
    pub(crate) struct LinearStub {
        pub dims: (usize, usize, usize),
        pub weight: Arc<Tensor>,
    }

    impl LinearStub {
        pub(crate) fn new(dims: (usize, usize, usize), out: usize, w: Vec<f64>) -> Self {
            let n = dims.0 * dims.1 * dims.2;
            Self {
                dims,
                weight: Arc::new(Tensor::new(vec![n, out], w).unwrap()),
            }
        }

        /// `φ(x) = mean(x)`.
        pub(crate) fn mean(dims: (usize, usize, usize)) -> Self {
            let n = dims.0 * dims.1 * dims.2;
            Self::new(dims, 1, vec![1.0 / n as f64; n])
        }
    }

    impl Embedder for LinearStub {
        fn input_dims(&self) -> (usize, usize, usize) {
            self.dims
        }

        fn embedding_dim(&self) -> usize {
            self.weight.shape()[1]
        }

        fn embed_graph(&self, g: &mut Graph, images: Var) -> Result<Var, NumericsError> {
            let w = g.constant(Arc::clone(&self.weight))?;
            let b = g.constant(Tensor::zeros(vec![self.embedding_dim()])?)?;
            g.dense(images, w, b)
        }
    }

    fn img(pixels: Vec<f64>) -> ImageTensor {
        ImageTensor::new(1, pixels.len(), 1, pixels).unwrap()
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let stub = LinearStub::new((1, 3, 1), 2, vec![1.0, 0.5, -0.2, 0.3, 0.0, 2.0]);
        let x = img(vec![0.1, 0.5, 0.9]);
        assert_eq!(pairwise_loss(&stub, &x, &x, Metric::Euclidean).unwrap(), 0.0);
        assert_eq!(batch_loss(&stub, &x, &[&x, &x, &x], Metric::Euclidean).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_embeddings_give_sqrt_two() {
        // pixel 0 drives the first embedding coordinate, pixel 1 the second
        let stub = LinearStub::new((1, 2, 1), 2, vec![1.0, 0.0, 0.0, 1.0]);
        let loss = pairwise_loss(&stub, &img(vec![1.0, 0.0]), &img(vec![0.0, 1.0]), Metric::Euclidean).unwrap();
        assert!((loss - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn batch_is_arithmetic_mean() {
        let stub = LinearStub::mean((1, 1, 1));
        let x = img(vec![0.0]);
        let (a, b, c) = (img(vec![0.1]), img(vec![0.2]), img(vec![0.3]));
        let mean = batch_loss(&stub, &x, &[&a, &b, &c], Metric::Euclidean).unwrap();
        assert!((mean - 0.2).abs() < 1e-15);
        let single = batch_loss(&stub, &x, &[&b], Metric::Euclidean).unwrap();
        assert_eq!(single, pairwise_loss(&stub, &x, &b, Metric::Euclidean).unwrap());
        assert!(matches!(batch_loss(&stub, &x, &[], Metric::Euclidean), Err(AttackError::EmptyBatch)));
    }

    #[test]
    fn graph_loss_matches_direct_loss() {
        let stub = LinearStub::new((1, 3, 1), 2, vec![1.0, 0.5, -0.2, 0.3, 0.7, 2.0]);
        let x = img(vec![0.1, 0.5, 0.9]);
        let others = [img(vec![0.4, 0.2, 0.8]), img(vec![0.9, 0.9, 0.1])];
        let refs: Vec<&ImageTensor> = others.iter().collect();
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let direct = batch_loss(&stub, &x, &refs, metric).unwrap();
            let (graph, grad) = batch_loss_gradient(&stub, &x, &refs, metric).unwrap();
            assert!((direct - graph).abs() < 1e-14, "{metric:?}");
            assert_eq!(grad.shape(), &[1, 1, 1, 3]);
        }
    }
}
