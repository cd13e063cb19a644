//! Differentiable training objectives over a fixed parameter list.
//!
//! The ADMM engine and the plain trainer only need to read and write
//! parameters and to evaluate the loss and its gradient on a minibatch of
//! sample indices, so a network on a dataset and a closed-form quadratic share
//! one interface.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{evaluate, Model};
use crate::tensor::Tensor;

pub trait Objective {
    /// Samples addressable by minibatch indices.
    fn num_samples(&self) -> usize;
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    /// Positions in `params()` of the layer weight tensors `W_1..W_N`.
    fn weight_indices(&self) -> Vec<usize>;
    fn loss(&self, batch: &[usize]) -> Result<f64>;
    fn loss_and_grad(&self, batch: &[usize]) -> Result<(f64, Vec<Tensor>)>;
    /// Held-out accuracy of the current parameters, when a validation set exists.
    fn validation_accuracy(&self) -> Option<Result<f64>> {
        None
    }
}

/// A model trained by softmax cross-entropy on a dataset.
#[derive(Debug, Clone)]
pub struct Supervised<'a> {
    pub model: Model,
    pub train: &'a Dataset,
    pub validation: Option<&'a Dataset>,
}

impl<'a> Supervised<'a> {
    pub fn new(model: Model, train: &'a Dataset, validation: Option<&'a Dataset>) -> Result<Self> {
        for d in std::iter::once(train).chain(validation) {
            if d.sample_shape() != model.input_shape() {
                return Err(Error::Shape {
                    layer: 0,
                    message: format!(
                        "dataset samples are {:?}, model expects {:?}",
                        d.sample_shape(),
                        model.input_shape()
                    ),
                });
            }
            if d.classes() > model.num_classes() {
                return Err(Error::Shape {
                    layer: model.layers().len() - 1,
                    message: format!(
                        "dataset has {} classes, model emits {} logits",
                        d.classes(),
                        model.num_classes()
                    ),
                });
            }
        }
        Ok(Supervised {
            model,
            train,
            validation,
        })
    }
}

impl Objective for Supervised<'_> {
    fn num_samples(&self) -> usize {
        self.train.len()
    }

    fn params(&self) -> Vec<&Tensor> {
        self.model.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.model.params_mut()
    }

    fn weight_indices(&self) -> Vec<usize> {
        self.model.weight_param_indices()
    }

    fn loss(&self, batch: &[usize]) -> Result<f64> {
        let b = self.train.batch(batch);
        crate::nn::softmax_cross_entropy(&self.model.forward(&b.inputs)?, &b.labels)
    }

    fn loss_and_grad(&self, batch: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let b = self.train.batch(batch);
        self.model.loss_and_grad(&b.inputs, &b.labels)
    }

    fn validation_accuracy(&self) -> Option<Result<f64>> {
        self.validation.map(|v| evaluate(&self.model, v))
    }
}

/// `f(w) = 1/2 w'Aw - b'w + c` over a single weight vector, with one "sample".
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    /// Row-major `n x n`, symmetric positive semi-definite.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub w: Tensor,
}

impl Quadratic {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: f64, w0: Vec<f64>) -> Result<Self> {
        let n = b.len();
        if n == 0 || a.len() != n * n || w0.len() != n {
            return Err(Error::Tensor(format!(
                "quadratic of dimension {n} needs an {n}x{n} matrix and {n} weights"
            )));
        }
        Ok(Quadratic {
            a,
            b,
            c,
            w: Tensor::from_vec(w0),
        })
    }

    /// `f(w) = 1/2 ||Xw - y||^2` for row-major `x` of shape `[rows, n]`, starting at `w0`.
    pub fn least_squares(x: &[f64], y: &[f64], w0: Vec<f64>) -> Result<Self> {
        let rows = y.len();
        if rows == 0 || x.len() % rows != 0 {
            return Err(Error::Tensor("design matrix does not match targets".into()));
        }
        let n = x.len() / rows;
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n];
        for (r, &yr) in y.iter().enumerate() {
            let row = &x[r * n..(r + 1) * n];
            for i in 0..n {
                b[i] += row[i] * yr;
                for j in 0..n {
                    a[i * n + j] += row[i] * row[j];
                }
            }
        }
        let c = 0.5 * y.iter().map(|v| v * v).sum::<f64>();
        Quadratic::new(a, b, c, w0)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn value_at(&self, w: &[f64]) -> f64 {
        let n = self.dim();
        let mut quad = 0.0;
        for i in 0..n {
            let row = &self.a[i * n..(i + 1) * n];
            quad += w[i] * row.iter().zip(w).map(|(a, x)| a * x).sum::<f64>();
        }
        0.5 * quad - self.b.iter().zip(w).map(|(b, x)| b * x).sum::<f64>() + self.c
    }

    pub fn gradient_at(&self, w: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                self.a[i * n..(i + 1) * n]
                    .iter()
                    .zip(w)
                    .map(|(a, x)| a * x)
                    .sum::<f64>()
                    - self.b[i]
            })
            .collect()
    }
}

impl Objective for Quadratic {
    fn num_samples(&self) -> usize {
        1
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.w]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w]
    }

    fn weight_indices(&self) -> Vec<usize> {
        vec![0]
    }

    fn loss(&self, _batch: &[usize]) -> Result<f64> {
        Ok(self.value_at(self.w.data()))
    }

    fn loss_and_grad(&self, _batch: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let w = self.w.data();
        Ok((
            self.value_at(w),
            vec![Tensor::from_vec(self.gradient_at(w))],
        ))
    }
}
