//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::Rng;
use uax_core::numerics::{Graph, NumericsError, Tensor, Var};

/// Central-difference check of every input of a scalar graph function.
///
/// Returns the worst `|analytic − numeric| / max(|analytic|, |numeric|)`
/// over all inputs, with the denominator taken per input tensor and floored
/// at `1e-8` so exactly-zero gradients compare absolutely.
pub fn grad_rel_error<F>(inputs: &[Tensor], h: f64, build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone()).unwrap()).collect();
    let root = build(&mut g, &vars).unwrap();
    let grads = g.backward(root).unwrap();

    let eval = |k: usize, i: usize, delta: f64| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let mut data = t.data().to_vec();
                if j == k {
                    data[i] += delta;
                }
                g.constant(Tensor::new(t.shape().to_vec(), data).unwrap()).unwrap()
            })
            .collect();
        let root = build(&mut g, &vars).unwrap();
        g.value(root).unwrap().data()[0]
    };

    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(vars[k]) {
            Some(a) => a.data().to_vec(),
            None => vec![0.0; t.numel()],
        };
        let numeric: Vec<f64> = (0..t.numel())
            .map(|i| (eval(k, i, h) - eval(k, i, -h)) / (2.0 * h))
            .collect();
        let scale = analytic
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-8);
        let err = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        worst = worst.max(err / scale);
    }
    worst
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values in `±[margin, 1]`, keeping ReLU inputs away from the kink.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize], margin: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Brute-force EER: every distinct score is tried as τ, rates are counted
/// directly, and the smallest τ with the least `|FMR − FNMR|` wins. Gaps are
/// compared exactly as `|fm·G − fnm·I|` over the common denominator `G·I`.
/// Returns `(eer, τ)`.
pub fn brute_force_eer(genuine: &[f64], imposter: &[f64]) -> (f64, f64) {
    let mut taus: Vec<f64> = genuine.iter().chain(imposter).copied().collect();
    taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    taus.dedup();
    let (ng, ni) = (genuine.len() as i128, imposter.len() as i128);
    let mut best: Option<(i128, f64, f64)> = None;
    for &tau in &taus {
        let fm = imposter.iter().filter(|&&s| s <= tau).count() as i128;
        let fnm = genuine.iter().filter(|&&s| s > tau).count() as i128;
        let gap = (fm * ng - fnm * ni).abs();
        if best.is_none_or(|(g, _, _)| gap < g) {
            let eer = (fm as f64 / ni as f64 + fnm as f64 / ng as f64) / 2.0;
            best = Some((gap, tau, eer));
        }
    }
    let (_, tau, eer) = best.unwrap();
    (eer, tau)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Samples `count` points of the closed ∞-ball of radius `xi` (uniform
/// interior points, corners, and feasible points near `projected`) and
/// returns the first one strictly closer to `nu` than `projected`, if any.
pub fn closer_linf_point(rng: &mut impl Rng, nu: &[f64], xi: f64, projected: &[f64], count: usize) -> Option<Vec<f64>> {
    let best = sq_dist(nu, projected);
    for s in 0..count {
        let rho: Vec<f64> = nu
            .iter()
            .zip(projected)
            .map(|(_, &p)| match s % 3 {
                0 => rng.gen_range(-xi..=xi),
                1 => {
                    if rng.gen_bool(0.5) {
                        xi
                    } else {
                        -xi
                    }
                }
                _ => (p + rng.gen_range(-0.01..=0.01) * xi).clamp(-xi, xi),
            })
            .collect();
        if sq_dist(nu, &rho) < best {
            return Some(rho);
        }
    }
    None
}

/// Mean pixel distance between images of the same identity and between
/// images of different identities.
pub fn intra_inter_pixel_distance(dataset: &uax_core::dataset::IdentityDataset) -> (f64, f64) {
    let groups: Vec<&[uax_core::dataset::ImageTensor]> = dataset.identities().map(|(_, imgs)| imgs).collect();
    let (mut intra, mut ni) = (0.0, 0usize);
    let (mut inter, mut ne) = (0.0, 0usize);
    for (gi, a) in groups.iter().enumerate() {
        for (i, x) in a.iter().enumerate() {
            for y in &a[i + 1..] {
                intra += x.pixel_distance(y).unwrap();
                ni += 1;
            }
            for b in &groups[gi + 1..] {
                inter += x.pixel_distance(&b[i % b.len()]).unwrap();
                ne += 1;
            }
        }
    }
    (intra / ni as f64, inter / ne as f64)
}

/// Fixed, shape-derived weights that turn a tensor into a scalar.
pub fn readout(g: &mut Graph, v: Var) -> Result<Var, NumericsError> {
    let shape = g.value(v)?.shape().to_vec();
    let n: usize = shape.iter().product();
    let weights = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    let r = g.constant(Tensor::new(shape, weights)?)?;
    let prod = g.mul(v, r)?;
    g.sum(prod)
}

type Inputs = fn(&mut rand::rngs::StdRng) -> Vec<Tensor>;
type Build = fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>;

/// One differentiable op with an input generator and a scalar readout.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Inputs,
    pub build: Build,
}

fn uniform(shapes: &[&[usize]], rng: &mut rand::rngs::StdRng, lo: f64, hi: f64) -> Vec<Tensor> {
    shapes.iter().map(|s| random_tensor(rng, s, lo, hi)).collect()
}

/// Every op of the graph engine.
pub fn op_cases() -> Vec<OpCase> {
    use uax_core::numerics::ConvParams;
    vec![
        OpCase {
            name: "dense",
            inputs: |r| uniform(&[&[3, 4], &[4, 5], &[5]], r, -1.0, 1.0),
            build: |g, v| {
                let y = g.dense(v[0], v[1], v[2])?;
                readout(g, y)
            },
        },
        OpCase {
            name: "conv2d_stride2_pad1",
            inputs: |r| uniform(&[&[2, 2, 6, 6], &[3, 2, 3, 3], &[3]], r, -1.0, 1.0),
            build: |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], ConvParams::new(2, 1))?;
                readout(g, y)
            },
        },
        OpCase {
            name: "conv2d_stride1_pad0",
            inputs: |r| uniform(&[&[1, 3, 5, 4], &[2, 3, 2, 3], &[2]], r, -1.0, 1.0),
            build: |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], ConvParams::new(1, 0))?;
                readout(g, y)
            },
        },
        OpCase {
            name: "relu",
            inputs: |r| vec![away_from_zero(r, &[3, 5], 0.05)],
            build: |g, v| {
                let y = g.relu(v[0])?;
                readout(g, y)
            },
        },
        OpCase {
            name: "tanh",
            inputs: |r| uniform(&[&[3, 5]], r, -2.0, 2.0),
            build: |g, v| {
                let y = g.tanh(v[0])?;
                readout(g, y)
            },
        },
        OpCase {
            name: "add",
            inputs: |r| uniform(&[&[4, 3], &[4, 3]], r, -1.0, 1.0),
            build: |g, v| {
                let y = g.add(v[0], v[1])?;
                readout(g, y)
            },
        },
        OpCase {
            name: "sub",
            inputs: |r| uniform(&[&[4, 3], &[4, 3]], r, -1.0, 1.0),
            build: |g, v| {
                let y = g.sub(v[0], v[1])?;
                readout(g, y)
            },
        },
        OpCase {
            name: "mul",
            inputs: |r| uniform(&[&[4, 3], &[4, 3]], r, -1.0, 1.0),
            build: |g, v| {
                let y = g.mul(v[0], v[1])?;
                readout(g, y)
            },
        },
        OpCase {
            name: "scale",
            inputs: |r| uniform(&[&[7]], r, -1.0, 1.0),
            build: |g, v| {
                let y = g.scale(v[0], -1.7)?;
                readout(g, y)
            },
        },
        OpCase {
            name: "offset",
            inputs: |r| uniform(&[&[7]], r, -1.0, 1.0),
            build: |g, v| {
                let y = g.offset(v[0], 0.3)?;
                let y = g.mul(y, y)?;
                readout(g, y)
            },
        },
        OpCase {
            name: "mean",
            inputs: |r| uniform(&[&[2, 5]], r, -1.0, 1.0),
            build: |g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.mean(sq)
            },
        },
        OpCase {
            name: "sum",
            inputs: |r| uniform(&[&[2, 5]], r, -1.0, 1.0),
            build: |g, v| {
                let t = g.tanh(v[0])?;
                g.sum(t)
            },
        },
        OpCase {
            name: "l2norm",
            inputs: |r| uniform(&[&[6]], r, -1.0, 1.0),
            build: |g, v| g.l2norm(v[0]),
        },
        OpCase {
            name: "cosine_distance",
            inputs: |r| uniform(&[&[2, 5], &[2, 5]], r, -1.0, 1.0),
            build: |g, v| g.cosine_distance(v[0], v[1]),
        },
        OpCase {
            name: "softmax_xent",
            inputs: |r| uniform(&[&[4, 6]], r, -3.0, 3.0),
            build: |g, v| g.softmax_xent(v[0], &[0, 3, 5, 2]),
        },
        OpCase {
            name: "global_avg_pool",
            inputs: |r| uniform(&[&[2, 3, 4, 4]], r, -1.0, 1.0),
            build: |g, v| {
                let y = g.global_avg_pool(v[0])?;
                readout(g, y)
            },
        },
    ]
}

/// Worst relative error of `case` over `points` random input draws.
pub fn worst_op_error(case: &OpCase, points: usize, seed: u64) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    (0..points)
        .map(|_| grad_rel_error(&(case.inputs)(&mut rng), 1e-4, case.build))
        .fold(0.0, f64::max)
}

/// ReLU activation pattern of every relu node in `g`.
fn relu_mask(g: &Graph) -> Vec<bool> {
    use uax_core::numerics::OpKind;
    g.vars()
        .filter(|&v| g.kind(v).unwrap() == OpKind::Relu)
        .flat_map(|v| g.value(v).unwrap().data().iter().map(|&a| a > 0.0).collect::<Vec<_>>())
        .collect()
}

/// Central-difference check of a single input, skipping coordinates whose
/// stencil `[x − h, x + h]` changes the ReLU pattern (the function has a
/// kink there and no derivative to compare against). Returns the worst
/// relative error and the number of skipped coordinates.
pub fn grad_rel_error_smooth<F>(input: &Tensor, h: f64, build: F) -> (f64, usize)
where
    F: Fn(&mut Graph, Var) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let x = g.param(input.clone()).unwrap();
    let root = build(&mut g, x).unwrap();
    let mask = relu_mask(&g);
    let analytic = g.backward(root).unwrap().take(x).unwrap().into_data();

    let eval = |i: usize, delta: f64| -> (f64, bool) {
        let mut data = input.data().to_vec();
        data[i] += delta;
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(input.shape().to_vec(), data).unwrap()).unwrap();
        let root = build(&mut g, x).unwrap();
        (g.value(root).unwrap().data()[0], relu_mask(&g) == mask)
    };
    let mut skipped = 0;
    let mut pairs = Vec::with_capacity(input.numel());
    for (i, &a) in analytic.iter().enumerate() {
        let ((plus, same_plus), (minus, same_minus)) = (eval(i, h), eval(i, -h));
        if same_plus && same_minus {
            pairs.push((a, (plus - minus) / (2.0 * h)));
        } else {
            skipped += 1;
        }
    }
    let scale = pairs
        .iter()
        .fold(0.0f64, |m, (a, n)| m.max(a.abs()).max(n.abs()))
        .max(1e-8);
    let err = pairs.iter().fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    (err / scale, skipped)
}

/// Worst relative error of `d(batch loss)/dw` through the tanh
/// reparameterization and a 16×16 tiny_cnn, over `points` random `w`, and
/// the fraction of coordinates skipped for straddling a ReLU kink.
pub fn worst_end_to_end_error(points: usize, seed: u64) -> (f64, f64) {
    use rand::SeedableRng;
    use std::sync::Arc;
    use uax_core::attack::{embedding_loss_graph, reparam_graph, reparam_inverse};
    use uax_core::dataset::ImageTensor;
    use uax_core::extractor::{init_model, Embedder, ExtractorSpec, InputShape};
    use uax_core::metrics::Metric;

    let model = init_model(ExtractorSpec::tiny_cnn(InputShape::square(16, 1), 8, 3), seed).unwrap();
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let image = |rng: &mut rand::rngs::StdRng| {
        ImageTensor::new(16, 16, 1, (0..256).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    };
    let batch: Vec<ImageTensor> = (0..3).map(|_| image(&mut rng)).collect();
    let refs: Vec<&ImageTensor> = batch.iter().collect();
    let targets: Vec<Arc<Tensor>> = model
        .embed_batch(&refs)
        .unwrap()
        .into_iter()
        .map(|e| Arc::new(Tensor::new(vec![1, e.len()], e).unwrap()))
        .collect();
    let (mut worst, mut skipped) = (0.0f64, 0usize);
    for _ in 0..points {
        let w: Vec<f64> = (0..256).map(|_| reparam_inverse(rng.gen_range(0.05..0.95))).collect();
        let w = Tensor::new(vec![1, 1, 16, 16], w).unwrap();
        let (err, skip) = grad_rel_error_smooth(&w, 1e-4, |g, v| {
            let x = reparam_graph(g, v)?;
            let e = model.embed_graph(g, x)?;
            embedding_loss_graph(g, e, &targets, Metric::Euclidean)
        });
        worst = worst.max(err);
        skipped += skip;
    }
    (worst, skipped as f64 / (points * 256) as f64)
}
