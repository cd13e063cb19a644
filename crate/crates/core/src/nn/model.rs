use serde::{Deserialize, Serialize};

use super::layer::{Cache, Layer, LayerSpec};
use super::loss::softmax_cross_entropy_grad;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

/// Network architecture: per-sample input shape plus an ordered layer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// LeNet-5 for 28x28 single-channel inputs:
    /// conv 6@5x5, pool 2, conv 16@5x5, pool 2, dense 120, dense 84, dense 10.
    pub fn lenet5() -> Self {
        use LayerSpec::*;
        ArchSpec {
            input_shape: vec![1, 28, 28],
            layers: vec![
                Conv2d {
                    filters: 6,
                    kernel: 5,
                    stride: 1,
                    padding: 0,
                },
                Relu,
                MaxPool2d {
                    size: 2,
                    stride: None,
                },
                Conv2d {
                    filters: 16,
                    kernel: 5,
                    stride: 1,
                    padding: 0,
                },
                Relu,
                MaxPool2d {
                    size: 2,
                    stride: None,
                },
                Flatten,
                Dense { units: 120 },
                Relu,
                Dense { units: 84 },
                Relu,
                Dense { units: 10 },
            ],
        }
    }

    /// Fully connected net over `input_shape` with ReLU between hidden layers.
    pub fn mlp(input_shape: Vec<usize>, hidden: &[usize], classes: usize) -> Self {
        let mut layers = vec![LayerSpec::Flatten];
        for &units in hidden {
            layers.push(LayerSpec::Dense { units });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { units: classes });
        ArchSpec {
            input_shape,
            layers,
        }
    }
}

/// An ordered stack of layers. Trainable parameters are enumerated as
/// `[weight_0, bias_0, weight_1, bias_1, ...]` over the weight-bearing layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ArchSpec,
    layers: Vec<Layer>,
    /// Per-sample input shape of each layer, plus the final output shape.
    shapes: Vec<Vec<usize>>,
}

impl Model {
    /// Builds the model with He-uniform weights drawn from `seed`; biases start at 0.
    pub fn new(spec: &ArchSpec, seed: u64) -> Result<Self> {
        if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
            return Err(Error::Shape {
                layer: 0,
                message: format!("invalid input shape {:?}", spec.input_shape),
            });
        }
        let mut rng = seeded(seed);
        let mut shapes = vec![spec.input_shape.clone()];
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, ls) in spec.layers.iter().enumerate() {
            let (layer, out) = Layer::build(ls, &shapes[i], i, &mut rng)?;
            layers.push(layer);
            shapes.push(out);
        }
        let last = shapes.last().expect("non-empty");
        if last.len() != 1 {
            return Err(Error::Shape {
                layer: spec.layers.len().saturating_sub(1),
                message: format!("final layer must emit class logits, got shape {last:?}"),
            });
        }
        if !layers.iter().any(Layer::has_weights) {
            return Err(Error::Shape {
                layer: 0,
                message: "model has no weight-bearing layer".into(),
            });
        }
        Ok(Model {
            spec: spec.clone(),
            layers,
            shapes,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    /// Per-sample input shape of layer `i` (`i == layers().len()` gives the output shape).
    pub fn shape_at(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().expect("non-empty")[0]
    }

    /// Number of weight-bearing layers.
    pub fn num_weight_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.has_weights()).count()
    }

    /// Index into `layers()` of each weight-bearing layer.
    pub fn weight_layer_positions(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].has_weights())
            .collect()
    }

    /// Weight tensor of the `i`-th weight-bearing layer.
    pub fn weight(&self, i: usize) -> &Tensor {
        self.layers
            .iter()
            .filter_map(Layer::weight)
            .nth(i)
            .expect("weight layer index in range")
    }

    pub fn weight_mut(&mut self, i: usize) -> &mut Tensor {
        self.layers
            .iter_mut()
            .filter_map(Layer::weight_mut)
            .nth(i)
            .expect("weight layer index in range")
    }

    pub fn weights(&self) -> Vec<&Tensor> {
        self.layers.iter().filter_map(Layer::weight).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .filter(|l| l.has_weights())
            .flat_map(|l| [l.weight().unwrap(), l.bias().unwrap()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
                Layer::Conv2d(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Positions of the weight tensors (not biases) within `params()`.
    pub fn weight_param_indices(&self) -> Vec<usize> {
        (0..self.num_weight_layers()).map(|i| 2 * i).collect()
    }

    /// Replaces every parameter, checking shapes against the architecture.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        let targets = self.params_mut();
        if targets.len() != values.len() {
            return Err(Error::Tensor(format!(
                "expected {} parameter tensors, got {}",
                targets.len(),
                values.len()
            )));
        }
        for (i, (dst, src)) in targets.into_iter().zip(values).enumerate() {
            if dst.shape() != src.shape() {
                return Err(Error::Tensor(format!(
                    "parameter {i}: expected shape {:?}, got {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            *dst = src;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() < 2 || x.shape()[1..] != self.shapes[0][..] {
            return Err(Error::Shape {
                layer: 0,
                message: format!(
                    "input shape {:?} does not match [batch, {:?}]",
                    x.shape(),
                    self.shapes[0]
                ),
            });
        }
        Ok(())
    }

    /// Logits `[batch, classes]` for inputs `[batch, ...input_shape]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut act = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            act = layer.forward(&act).map_err(|e| at_layer(i, e))?;
        }
        Ok(act)
    }

    /// Mean softmax cross-entropy over the batch and its gradient with respect
    /// to every parameter, aligned with `params()`.
    pub fn loss_and_grad(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        self.check_input(x)?;
        if labels.len() != x.shape()[0] {
            return Err(Error::Shape {
                layer: 0,
                message: format!("{} labels for a batch of {}", labels.len(), x.shape()[0]),
            });
        }
        let mut caches: Vec<Cache> = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer
                .forward_cached(&act, true)
                .map_err(|e| at_layer(i, e))?;
            caches.push(cache.expect("cache requested"));
            act = y;
        }
        let (loss, mut delta) = softmax_cross_entropy_grad(&act, labels)?;

        let first_weighted = self.weight_layer_positions()[0];
        let mut grads: Vec<(Tensor, Tensor)> = Vec::with_capacity(self.num_weight_layers());
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let need_dx = i > first_weighted;
            let (dx, pg) = layer.backward(cache, &delta, need_dx)?;
            if let Some(pg) = pg {
                grads.push(pg);
            }
            if i == first_weighted {
                break;
            }
            delta = dx.expect("dx requested");
        }
        grads.reverse();
        let grads: Vec<Tensor> = grads.into_iter().flat_map(|(w, b)| [w, b]).collect();
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("gradient of parameter {bad}"),
            });
        }
        Ok((loss, grads))
    }

    /// Gradients of the mean loss over `batch`, aligned with `params()`.
    pub fn backward(&self, batch: &Batch) -> Result<Vec<Tensor>> {
        self.loss_and_grad(&batch.inputs, &batch.labels)
            .map(|(_, g)| g)
    }
}

fn at_layer(i: usize, e: Error) -> Error {
    match e {
        Error::Tensor(message) => Error::Shape { layer: i, message },
        other => other,
    }
}

/// Inputs with a leading batch dimension and their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().first() != Some(&labels.len()) {
            return Err(Error::Tensor(format!(
                "batch of {:?} inputs with {} labels",
                inputs.shape(),
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet5_shapes_compose() {
        let m = Model::new(&ArchSpec::lenet5(), 1).unwrap();
        assert_eq!(m.shape_at(6), &[16, 4, 4]);
        assert_eq!(m.shape_at(7), &[256]);
        assert_eq!(m.num_classes(), 10);
        assert_eq!(m.num_weight_layers(), 5);
        let sizes: Vec<usize> = m.weights().iter().map(|w| w.len()).collect();
        assert_eq!(sizes, vec![150, 2400, 30720, 10080, 840]);
    }

    #[test]
    fn input_mismatch_is_rejected() {
        let m = Model::new(&ArchSpec::lenet5(), 1).unwrap();
        let x = Tensor::zeros(&[1, 1, 27, 28]);
        match m.forward(&x) {
            Err(Error::Shape { layer: 0, .. }) => {}
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn conv_without_spatial_input_names_the_layer() {
        let spec = ArchSpec {
            input_shape: vec![4],
            layers: vec![
                LayerSpec::Dense { units: 3 },
                LayerSpec::Conv2d {
                    filters: 1,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                },
            ],
        };
        match Model::new(&spec, 0) {
            Err(Error::Shape { layer: 1, .. }) => {}
            other => panic!("expected layer-1 shape error, got {other:?}"),
        }
    }
}
