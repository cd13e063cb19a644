//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use admmq_core::admm::{augmented_grad, augmented_loss, AdmmState};
use admmq_core::nn::{softmax_cross_entropy, Layer, LayerSpec};
use admmq_core::objective::{Objective, Quadratic, Supervised};
use admmq_core::rng::seeded;
use admmq_core::{ArchSpec, Dataset, Model, QuantMode, QuantScheme, Split, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Points closer than this to a ReLU hinge or a max-pool tie are not
/// differentiable at the finite-difference step and are skipped.
pub const KINK_MARGIN: f64 = 5e-5;

/// Distance of the forward pass on `x` from the nearest non-differentiable
/// point: the smallest |ReLU input| and the smallest gap between the two
/// largest entries of a pooling window. Windows that are entirely zero
/// (dead ReLUs) stay tied under perturbation and are ignored.
pub fn kink_distance(model: &Model, x: &Tensor) -> f64 {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for layer in model.layers() {
        match layer {
            Layer::Relu => {
                margin = h.data().iter().fold(margin, |m, v| m.min(v.abs()));
            }
            Layer::MaxPool2d(pool) => {
                let s = h.shape();
                let (height, width) = (s[2], s[3]);
                for plane in h.data().chunks_exact(height * width) {
                    for r in (0..=height - pool.size).step_by(pool.stride) {
                        for c in (0..=width - pool.size).step_by(pool.stride) {
                            let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                            for i in r..r + pool.size {
                                for j in c..c + pool.size {
                                    let v = plane[i * width + j];
                                    if v > a {
                                        b = a;
                                        a = v;
                                    } else if v > b {
                                        b = v;
                                    }
                                }
                            }
                            if a != 0.0 || b != 0.0 {
                                margin = margin.min(a - b);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        h = layer.forward(&h).unwrap();
    }
    margin
}

pub fn random_inputs(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap()
}

/// Randomizes every parameter, including biases, so no ReLU or pooling
/// window sits at a kink.
pub fn randomized(spec: &ArchSpec, seed: u64) -> Model {
    let mut model = Model::new(spec, seed).unwrap();
    let mut rng = seeded(seed ^ 0xabc);
    let params: Vec<Tensor> = model
        .params()
        .iter()
        .map(|p| p.map(|_| rng.random_range(-0.5..0.5)))
        .collect();
    model.set_params(params).unwrap();
    model
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Central differences of `f` with respect to every entry of parameter `p`.
fn central_diff<O: Objective>(obj: &mut O, p: usize, mut f: impl FnMut(&O) -> f64) -> Vec<f64> {
    let len = obj.params()[p].len();
    (0..len)
        .map(|e| {
            let orig = obj.params()[p].data()[e];
            let mut eval = |delta: f64| {
                obj.params_mut()[p].data_mut()[e] = orig + delta;
                let v = f(obj);
                obj.params_mut()[p].data_mut()[e] = orig;
                v
            };
            (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest per-parameter relative error between backprop and central
/// differences of the cross-entropy, on a batch of 3 random inputs. `None`
/// when the draw lands near a kink.
pub fn fd_model_error(spec: &ArchSpec, seed: u64) -> Option<f64> {
    let model = randomized(spec, seed);
    let mut shape = vec![3];
    shape.extend_from_slice(&spec.input_shape);
    let x = random_inputs(&shape, seed.wrapping_add(1));
    let classes = model.num_classes();
    let labels: Vec<usize> = (0..3).map(|i| i % classes).collect();
    if kink_distance(&model, &x) < KINK_MARGIN {
        return None;
    }
    let (_, analytic) = model.loss_and_grad(&x, &labels).unwrap();
    let data = Dataset::new(x.clone(), labels.clone(), classes, Split::Train).unwrap();
    let mut obj = Supervised::new(model, &data, None).unwrap();
    (0..analytic.len())
        .map(|p| {
            let numeric = central_diff(&mut obj, p, |o| {
                softmax_cross_entropy(&o.model.forward(&x).unwrap(), &labels).unwrap()
            });
            rel_err(analytic[p].data(), &numeric)
        })
        .reduce(f64::max)
}

/// Same check for the ADMM-augmented loss of a small conv net, with a
/// random dual and a different rho per layer.
pub fn fd_augmented_error(seed: u64) -> Option<f64> {
    let spec = ArchSpec {
        input_shape: vec![1, 5, 5],
        layers: vec![
            conv(2, 3, 1, 0),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 3 },
        ],
    };
    let model = randomized(&spec, seed);
    let x = random_inputs(&[4, 1, 5, 5], seed.wrapping_add(1));
    if kink_distance(&model, &x) < KINK_MARGIN {
        return None;
    }
    let data = Dataset::new(x, vec![0, 1, 2, 1], 3, Split::Train).unwrap();
    let mut obj = Supervised::new(model, &data, None).unwrap();
    let mode = if seed % 2 == 0 {
        QuantMode::Ternary
    } else {
        QuantMode::Binary
    };
    let scheme = QuantScheme::uniform(&obj.model.weights(), mode, &[]).unwrap();
    let mut state = AdmmState::init(&obj, &scheme, 0.7).unwrap();
    let mut rng = seeded(seed.wrapping_add(2));
    for l in &mut state.layers {
        l.u = l.u.map(|_| rng.random_range(-0.2..0.2));
    }
    state.layers[1].rho = rng.random_range(0.01..3.0);
    let batch = [0, 1, 2, 3];
    let analytic = augmented_grad(&obj, &state, &batch).unwrap();
    (0..analytic.len())
        .map(|p| {
            let numeric = central_diff(&mut obj, p, |o| augmented_loss(o, &state, &batch).unwrap());
            rel_err(analytic[p].data(), &numeric)
        })
        .reduce(f64::max)
}

pub fn conv(filters: usize, kernel: usize, stride: usize, padding: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        filters,
        kernel,
        stride,
        padding,
    }
}

/// One architecture per layer kind, plus a stack combining all of them.
pub fn gradient_check_architectures() -> Vec<(&'static str, ArchSpec)> {
    vec![
        (
            "dense",
            ArchSpec {
                input_shape: vec![1, 1, 5],
                layers: vec![LayerSpec::Dense { units: 4 }],
            },
        ),
        ("dense+relu", ArchSpec::mlp(vec![1, 1, 6], &[5, 4], 3)),
        (
            "conv",
            ArchSpec {
                input_shape: vec![2, 5, 5],
                layers: vec![
                    conv(3, 3, 1, 0),
                    LayerSpec::Flatten,
                    LayerSpec::Dense { units: 3 },
                ],
            },
        ),
        (
            "strided padded conv",
            ArchSpec {
                input_shape: vec![1, 6, 6],
                layers: vec![
                    conv(2, 3, 2, 1),
                    LayerSpec::Relu,
                    conv(2, 2, 1, 1),
                    LayerSpec::Flatten,
                    LayerSpec::Dense { units: 3 },
                ],
            },
        ),
        (
            "maxpool",
            ArchSpec {
                input_shape: vec![1, 6, 6],
                layers: vec![
                    conv(2, 3, 1, 0),
                    LayerSpec::MaxPool2d {
                        size: 2,
                        stride: None,
                    },
                    LayerSpec::Flatten,
                    LayerSpec::Dense { units: 3 },
                ],
            },
        ),
        (
            "overlapping maxpool",
            ArchSpec {
                input_shape: vec![1, 7, 7],
                layers: vec![
                    conv(2, 2, 1, 0),
                    LayerSpec::MaxPool2d {
                        size: 3,
                        stride: Some(2),
                    },
                    LayerSpec::Flatten,
                    LayerSpec::Dense { units: 2 },
                ],
            },
        ),
        (
            "lenet-like stack",
            ArchSpec {
                input_shape: vec![1, 12, 12],
                layers: vec![
                    conv(3, 3, 1, 0),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2d {
                        size: 2,
                        stride: None,
                    },
                    conv(4, 3, 1, 0),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2d {
                        size: 2,
                        stride: None,
                    },
                    LayerSpec::Flatten,
                    LayerSpec::Dense { units: 8 },
                    LayerSpec::Relu,
                    LayerSpec::Dense { units: 4 },
                ],
            },
        ),
    ]
}

/// Solves the dense system `a x = b` (row-major `a`) by Gaussian elimination
/// with partial pivoting.
pub fn solve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i * n..(i + 1) * n].to_vec();
            row.push(b[i]);
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

/// A least-squares problem `1/2 ||Xw - y||^2` with `X` of shape
/// `[rows, n]` (entries N(0, 1/rows)), `y = X w_true + noise * e` for
/// standard normal `w_true` and `e`, started at its unconstrained minimizer.
pub fn least_squares_instance(n: usize, rows: usize, noise: f64, seed: u64) -> Quadratic {
    let mut rng = seeded(seed);
    let scale = (rows as f64).sqrt();
    let x: Vec<f64> = (0..rows * n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) / scale)
        .collect();
    let w_true: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<f64> = (0..rows)
        .map(|r| {
            let clean: f64 = (0..n).map(|j| x[r * n + j] * w_true[j]).sum();
            clean + noise * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let q = Quadratic::least_squares(&x, &y, vec![0.0; n]).unwrap();
    let w0 = solve(&q.a, &q.b);
    Quadratic::least_squares(&x, &y, w0).unwrap()
}

/// Minimum of `q` over `a * s` for every sign pattern `s` and every `a > 0`,
/// with `a` in closed form: `f(a s) = c - a b's + a^2/2 s'As` is minimized at
/// `a = b's / s'As`, giving `c - (b's)^2 / (2 s'As)`.
pub fn exhaustive_binary_optimum(q: &Quadratic) -> f64 {
    let n = q.dim();
    assert!(n <= 20);
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let s: Vec<f64> = (0..n)
            .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        let bs: f64 = q.b.iter().zip(&s).map(|(b, x)| b * x).sum();
        if bs <= 0.0 {
            continue;
        }
        let sas: f64 = (0..n)
            .map(|i| s[i] * (0..n).map(|j| q.a[i * n + j] * s[j]).sum::<f64>())
            .sum();
        best = best.min(q.c - bs * bs / (2.0 * sas));
    }
    best
}

/// Best objective of `||w - q||^2` over every assignment in `{-1,0,1}^n`
/// (binary: `{-1,1}^n`), each with its closed-form scale.
pub fn exhaustive_projection(w: &[f64], ternary: bool) -> f64 {
    let base: usize = if ternary { 3 } else { 2 };
    let total = base.pow(w.len() as u32);
    let mut best = f64::INFINITY;
    let mut codes = vec![0.0; w.len()];
    for mut idx in 0..total {
        for c in codes.iter_mut() {
            let digit = idx % base;
            idx /= base;
            *c = match (ternary, digit) {
                (false, 0) => -1.0,
                (false, _) => 1.0,
                (true, 0) => 0.0,
                (true, 1) => 1.0,
                (true, _) => -1.0,
            };
        }
        let count = codes.iter().filter(|&&c| c != 0.0).count();
        if count == 0 {
            continue;
        }
        let alpha = codes.iter().zip(w).map(|(c, x)| c * x).sum::<f64>() / count as f64;
        if alpha <= 0.0 {
            continue;
        }
        let obj: f64 = codes
            .iter()
            .zip(w)
            .map(|(c, x)| (x - c * alpha).powi(2))
            .sum();
        best = best.min(obj);
    }
    best
}
