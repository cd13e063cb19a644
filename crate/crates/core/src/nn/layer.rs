//! The fixed layer zoo: dense, 2-D convolution, max pooling, ReLU, flatten.
//!
//! Activations travel between layers as tensors with a leading batch
//! dimension. Every layer knows its per-sample input shape, fixed when the
//! model is built, so shape errors surface before any arithmetic happens.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Declarative description of one layer, as stored in configs and checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        size: usize,
        /// Defaults to `size` (non-overlapping windows).
        #[serde(default)]
        stride: Option<usize>,
    },
    Relu,
    Flatten,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d,
    MaxPool2d,
    Relu,
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out_channels, in_channels, kernel, kernel]`
    pub weight: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    geom: ConvGeom,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvGeom {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    kernel: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool2d {
    pub size: usize,
    pub stride: usize,
    channels: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    MaxPool2d(MaxPool2d),
    Relu,
    Flatten,
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug)]
pub(crate) enum Cache {
    Dense { input: Tensor },
    Conv { cols: Vec<f64>, batch: usize },
    Pool { argmax: Vec<usize>, in_len: usize },
    Relu { input: Tensor },
    Flatten { shape: Vec<usize> },
}

fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bound");
    let mut t = Tensor::zeros(shape);
    for w in t.data_mut() {
        *w = dist.sample(rng);
    }
    t
}

impl Layer {
    /// Builds a layer for per-sample input shape `input`, returning the layer
    /// and its per-sample output shape.
    pub fn build<R: Rng + ?Sized>(
        spec: &LayerSpec,
        input: &[usize],
        index: usize,
        rng: &mut R,
    ) -> Result<(Layer, Vec<usize>)> {
        let shape_err = |message: String| Error::Shape {
            layer: index,
            message,
        };
        match *spec {
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(shape_err("dense layer needs at least one unit".into()));
                }
                let fan_in: usize = input.iter().product();
                let weight = he_uniform(&[units, fan_in], fan_in, rng);
                let bias = Tensor::zeros(&[units]);
                Ok((Layer::Dense(Dense { weight, bias }), vec![units]))
            }
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let &[in_c, in_h, in_w] = input else {
                    return Err(shape_err(format!(
                        "conv2d expects [channels, height, width] input, got {input:?}"
                    )));
                };
                if filters == 0 || kernel == 0 || stride == 0 {
                    return Err(shape_err(
                        "conv2d filters, kernel and stride must be positive".into(),
                    ));
                }
                if in_h + 2 * padding < kernel || in_w + 2 * padding < kernel {
                    return Err(shape_err(format!(
                        "kernel {kernel} larger than padded input {in_h}x{in_w}"
                    )));
                }
                let out_h = (in_h + 2 * padding - kernel) / stride + 1;
                let out_w = (in_w + 2 * padding - kernel) / stride + 1;
                let geom = ConvGeom {
                    in_c,
                    in_h,
                    in_w,
                    out_h,
                    out_w,
                    kernel,
                };
                let fan_in = geom.patch();
                let weight = he_uniform(&[filters, in_c, kernel, kernel], fan_in, rng);
                let bias = Tensor::zeros(&[filters]);
                Ok((
                    Layer::Conv2d(Conv2d {
                        weight,
                        bias,
                        stride,
                        padding,
                        geom,
                    }),
                    vec![filters, out_h, out_w],
                ))
            }
            LayerSpec::MaxPool2d { size, stride } => {
                let &[channels, in_h, in_w] = input else {
                    return Err(shape_err(format!(
                        "maxpool2d expects [channels, height, width] input, got {input:?}"
                    )));
                };
                let stride = stride.unwrap_or(size);
                if size == 0 || stride == 0 || size > in_h || size > in_w {
                    return Err(shape_err(format!(
                        "invalid pool window {size} (stride {stride}) for {in_h}x{in_w} input"
                    )));
                }
                let out_h = (in_h - size) / stride + 1;
                let out_w = (in_w - size) / stride + 1;
                Ok((
                    Layer::MaxPool2d(MaxPool2d {
                        size,
                        stride,
                        channels,
                        in_h,
                        in_w,
                        out_h,
                        out_w,
                    }),
                    vec![channels, out_h, out_w],
                ))
            }
            LayerSpec::Relu => Ok((Layer::Relu, input.to_vec())),
            LayerSpec::Flatten => Ok((Layer::Flatten, vec![input.iter().product()])),
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::MaxPool2d(_) => LayerKind::MaxPool2d,
            Layer::Relu => LayerKind::Relu,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    pub fn weight(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense(d) => Some(&d.weight),
            Layer::Conv2d(c) => Some(&c.weight),
            _ => None,
        }
    }

    pub fn weight_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Dense(d) => Some(&mut d.weight),
            Layer::Conv2d(c) => Some(&mut c.weight),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense(d) => Some(&d.bias),
            Layer::Conv2d(c) => Some(&c.bias),
            _ => None,
        }
    }

    pub fn bias_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Dense(d) => Some(&mut d.bias),
            Layer::Conv2d(c) => Some(&mut c.bias),
            _ => None,
        }
    }

    /// Per-sample input length for layers that fix one.
    fn input_len(&self) -> Option<usize> {
        match self {
            Layer::Dense(d) => Some(d.weight.shape()[1]),
            Layer::Conv2d(c) => Some(c.geom.in_c * c.geom.in_h * c.geom.in_w),
            Layer::MaxPool2d(p) => Some(p.channels * p.in_h * p.in_w),
            Layer::Relu | Layer::Flatten => None,
        }
    }

    pub fn has_weights(&self) -> bool {
        self.weight().is_some()
    }

    /// Forward pass over a batch `[B, ...input shape]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_cached(x, false).map(|(y, _)| y)
    }

    pub(crate) fn forward_cached(&self, x: &Tensor, keep: bool) -> Result<(Tensor, Option<Cache>)> {
        let batch = x.shape()[0];
        if let Some(per) = self.input_len() {
            if x.len() != batch * per {
                return Err(Error::Tensor(format!(
                    "{:?} layer expects {per} values per sample, got input of shape {:?}",
                    self.kind(),
                    x.shape()
                )));
            }
        }
        match self {
            Layer::Dense(d) => {
                let (out, inp) = (d.weight.shape()[0], d.weight.shape()[1]);
                let mut y = vec![0.0; batch * out];
                for row in y.chunks_exact_mut(out) {
                    row.copy_from_slice(d.bias.data());
                }
                gemm(
                    batch,
                    inp,
                    out,
                    1.0,
                    x.data(),
                    false,
                    d.weight.data(),
                    true,
                    1.0,
                    &mut y,
                );
                let cache = keep.then(|| Cache::Dense { input: x.clone() });
                Ok((Tensor::new(vec![batch, out], y)?, cache))
            }
            Layer::Conv2d(c) => {
                let g = c.geom;
                let (patch, pos, oc) = (g.patch(), g.positions(), c.weight.shape()[0]);
                let in_len = g.in_c * g.in_h * g.in_w;
                let mut cols = vec![0.0; batch * patch * pos];
                let mut y = vec![0.0; batch * oc * pos];
                for s in 0..batch {
                    let xs = &x.data()[s * in_len..(s + 1) * in_len];
                    let cs = &mut cols[s * patch * pos..(s + 1) * patch * pos];
                    im2col(xs, &g, c.stride, c.padding, cs);
                    let ys = &mut y[s * oc * pos..(s + 1) * oc * pos];
                    for (o, row) in ys.chunks_exact_mut(pos).enumerate() {
                        row.fill(c.bias.data()[o]);
                    }
                    gemm(
                        oc,
                        patch,
                        pos,
                        1.0,
                        c.weight.data(),
                        false,
                        cs,
                        false,
                        1.0,
                        ys,
                    );
                }
                let cache = keep.then_some(Cache::Conv { cols, batch });
                Ok((Tensor::new(vec![batch, oc, g.out_h, g.out_w], y)?, cache))
            }
            Layer::MaxPool2d(p) => {
                let in_plane = p.in_h * p.in_w;
                let out_plane = p.out_h * p.out_w;
                let mut y = Vec::with_capacity(batch * p.channels * out_plane);
                let mut argmax = Vec::with_capacity(if keep { y.capacity() } else { 0 });
                for plane in x.data().chunks_exact(in_plane) {
                    let base = y.len() / out_plane * in_plane;
                    for oy in 0..p.out_h {
                        for ox in 0..p.out_w {
                            let mut best = usize::MAX;
                            let mut best_v = f64::NEG_INFINITY;
                            for ky in 0..p.size {
                                for kx in 0..p.size {
                                    let i = (oy * p.stride + ky) * p.in_w + ox * p.stride + kx;
                                    // strict `>` keeps the first maximum in scan order
                                    if plane[i] > best_v || best == usize::MAX {
                                        best_v = plane[i];
                                        best = i;
                                    }
                                }
                            }
                            y.push(best_v);
                            if keep {
                                argmax.push(base + best);
                            }
                        }
                    }
                }
                let cache = keep.then_some(Cache::Pool {
                    argmax,
                    in_len: x.len(),
                });
                Ok((
                    Tensor::new(vec![batch, p.channels, p.out_h, p.out_w], y)?,
                    cache,
                ))
            }
            Layer::Relu => {
                let y = x.map(|v| if v > 0.0 { v } else { 0.0 });
                let cache = keep.then(|| Cache::Relu { input: x.clone() });
                Ok((y, cache))
            }
            Layer::Flatten => {
                let per: usize = x.shape()[1..].iter().product();
                let cache = keep.then(|| Cache::Flatten {
                    shape: x.shape().to_vec(),
                });
                Ok((x.clone().reshape(vec![batch, per])?, cache))
            }
        }
    }

    /// Propagates `dy` back through the layer. Parameter gradients (weight,
    /// bias) are returned for weight-bearing layers.
    pub(crate) fn backward(
        &self,
        cache: Cache,
        dy: &Tensor,
        need_dx: bool,
    ) -> Result<(Option<Tensor>, Option<(Tensor, Tensor)>)> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Dense { input }) => {
                let batch = dy.shape()[0];
                let (out, inp) = (d.weight.shape()[0], d.weight.shape()[1]);
                let mut dw = vec![0.0; out * inp];
                gemm(
                    out,
                    batch,
                    inp,
                    1.0,
                    dy.data(),
                    true,
                    input.data(),
                    false,
                    0.0,
                    &mut dw,
                );
                let mut db = vec![0.0; out];
                for row in dy.data().chunks_exact(out) {
                    for (acc, v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                let dx = if need_dx {
                    let mut dx = vec![0.0; batch * inp];
                    gemm(
                        batch,
                        out,
                        inp,
                        1.0,
                        dy.data(),
                        false,
                        d.weight.data(),
                        false,
                        0.0,
                        &mut dx,
                    );
                    Some(Tensor::new(input.shape().to_vec(), dx)?)
                } else {
                    None
                };
                Ok((
                    dx,
                    Some((
                        Tensor::new(d.weight.shape().to_vec(), dw)?,
                        Tensor::new(vec![out], db)?,
                    )),
                ))
            }
            (Layer::Conv2d(c), Cache::Conv { cols, batch }) => {
                let g = c.geom;
                let (patch, pos, oc) = (g.patch(), g.positions(), c.weight.shape()[0]);
                let in_len = g.in_c * g.in_h * g.in_w;
                let mut dw = vec![0.0; oc * patch];
                let mut db = vec![0.0; oc];
                let mut dx = if need_dx {
                    vec![0.0; batch * in_len]
                } else {
                    Vec::new()
                };
                let mut dcols = vec![0.0; patch * pos];
                for s in 0..batch {
                    let dys = &dy.data()[s * oc * pos..(s + 1) * oc * pos];
                    let cs = &cols[s * patch * pos..(s + 1) * patch * pos];
                    gemm(oc, pos, patch, 1.0, dys, false, cs, true, 1.0, &mut dw);
                    for (o, row) in dys.chunks_exact(pos).enumerate() {
                        db[o] += row.iter().sum::<f64>();
                    }
                    if need_dx {
                        gemm(
                            patch,
                            oc,
                            pos,
                            1.0,
                            c.weight.data(),
                            true,
                            dys,
                            false,
                            0.0,
                            &mut dcols,
                        );
                        col2im(
                            &dcols,
                            &g,
                            c.stride,
                            c.padding,
                            &mut dx[s * in_len..(s + 1) * in_len],
                        );
                    }
                }
                let dx = if need_dx {
                    Some(Tensor::new(vec![batch, g.in_c, g.in_h, g.in_w], dx)?)
                } else {
                    None
                };
                Ok((
                    dx,
                    Some((
                        Tensor::new(c.weight.shape().to_vec(), dw)?,
                        Tensor::new(vec![oc], db)?,
                    )),
                ))
            }
            (Layer::MaxPool2d(p), Cache::Pool { argmax, in_len }) => {
                let mut dx = vec![0.0; in_len];
                for (&i, &g) in argmax.iter().zip(dy.data()) {
                    dx[i] += g;
                }
                let batch = dy.shape()[0];
                Ok((
                    Some(Tensor::new(vec![batch, p.channels, p.in_h, p.in_w], dx)?),
                    None,
                ))
            }
            (Layer::Relu, Cache::Relu { input }) => {
                let dx = input.zip(dy, |x, g| if x > 0.0 { g } else { 0.0 });
                Ok((Some(dx), None))
            }
            (Layer::Flatten, Cache::Flatten { shape }) => {
                Ok((Some(dy.clone().reshape(shape)?), None))
            }
            _ => unreachable!("cache kind always matches the layer that produced it"),
        }
    }
}

fn im2col(x: &[f64], g: &ConvGeom, stride: usize, pad: usize, cols: &mut [f64]) {
    let pos = g.positions();
    for c in 0..g.in_c {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * pos..(row + 1) * pos];
                for oy in 0..g.out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for ox in 0..g.out_w {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        dst[oy * g.out_w + ox] = if iy >= 0
                            && ix >= 0
                            && (iy as usize) < g.in_h
                            && (ix as usize) < g.in_w
                        {
                            x[(c * g.in_h + iy as usize) * g.in_w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, stride: usize, pad: usize, dx: &mut [f64]) {
    let pos = g.positions();
    for c in 0..g.in_c {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * pos..(row + 1) * pos];
                for oy in 0..g.out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= g.in_h {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix as usize >= g.in_w {
                            continue;
                        }
                        dx[(c * g.in_h + iy as usize) * g.in_w + ix as usize] +=
                            src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn maxpool_picks_window_maximum() {
        let mut rng = seeded(0);
        let (pool, out) = Layer::build(
            &LayerSpec::MaxPool2d {
                size: 2,
                stride: None,
            },
            &[1, 2, 2],
            0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out, vec![1, 1, 1]);
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = seeded(3);
        let spec = LayerSpec::Conv2d {
            filters: 2,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let (conv, out) = Layer::build(&spec, &[2, 5, 4], 0, &mut rng).unwrap();
        assert_eq!(out, vec![2, 3, 2]);
        let Layer::Conv2d(c) = &conv else {
            unreachable!()
        };
        let x: Vec<f64> = (0..2 * 2 * 5 * 4).map(|i| (i as f64 * 0.7).sin()).collect();
        let xt = Tensor::new(vec![2, 2, 5, 4], x.clone()).unwrap();
        let y = conv.forward(&xt).unwrap();
        let w = c.weight.data();
        for s in 0..2 {
            for o in 0..2 {
                for oy in 0..3 {
                    for ox in 0..2 {
                        let mut acc = c.bias.data()[o];
                        for ch in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= 5 || ix >= 4 {
                                        continue;
                                    }
                                    let xv = x[((s * 2 + ch) * 5 + iy as usize) * 4 + ix as usize];
                                    acc += w[((o * 2 + ch) * 3 + ky) * 3 + kx] * xv;
                                }
                            }
                        }
                        let got = y.data()[((s * 2 + o) * 3 + oy) * 2 + ox];
                        assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                    }
                }
            }
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = LayerSpec::MaxPool2d {
            size: 2,
            stride: None,
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(text, r#"{"kind":"maxpool2d","size":2,"stride":null}"#);
        let back: LayerSpec =
            serde_json::from_str(r#"{"kind":"conv2d","filters":6,"kernel":5}"#).unwrap();
        assert_eq!(
            back,
            LayerSpec::Conv2d {
                filters: 6,
                kernel: 5,
                stride: 1,
                padding: 0
            }
        );
        assert!(
            serde_json::from_str::<LayerSpec>(r#"{"kind":"dense","units":3,"unit":4}"#).is_err()
        );
    }
}
