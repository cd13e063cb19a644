use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::{derive_seed, seeded};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Images `[n, channels, height, width]` with values in `[0, 1]` and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Dataset(format!(
                "images must be [n, c, h, w], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Dataset(format!(
                "label {bad} outside {classes} classes"
            )));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Dataset(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-sample shape `[c, h, w]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    /// Gathers the given sample indices into a batch.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Batch {
            inputs: Tensor::new(shape, data).expect("gathered batch is well formed"),
            labels,
        }
    }

    /// New dataset made of the listed samples, in the listed order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let b = self.batch(indices);
        Dataset {
            images: b.inputs,
            labels: b.labels,
            classes: self.classes,
            split: self.split,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Seeded class-stratified sample of `n` examples without replacement,
    /// returned in shuffled order.
    ///
    /// Each class receives `floor(n * share)` samples; leftover slots go to
    /// the classes with the largest fractional remainders (lowest class first on ties).
    pub fn subset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::Dataset(format!(
                "requested {n} samples from a dataset of {}",
                self.len()
            )));
        }
        if n == 0 {
            return Err(Error::Dataset("subset size must be positive".into()));
        }
        let total = self.len();
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let mut quota: Vec<usize> = by_class.iter().map(|c| c.len() * n / total).collect();
        let mut remaining = n - quota.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..self.classes).collect();
        // largest remainder first; stable sort keeps lower classes first on ties
        order.sort_by_key(|&c| std::cmp::Reverse((by_class[c].len() * n) % total));
        for &c in order.iter().cycle() {
            if remaining == 0 {
                break;
            }
            if quota[c] < by_class[c].len() {
                quota[c] += 1;
                remaining -= 1;
            }
        }

        let mut rng = seeded(seed);
        let mut chosen = Vec::with_capacity(n);
        for (members, &q) in by_class.iter_mut().zip(&quota) {
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..q]);
        }
        chosen.shuffle(&mut rng);
        Ok(self.select(&chosen))
    }

    /// Shuffles with `seed` and splits off the last `n_holdout` samples as a
    /// validation set. Returns `(rest, validation)`.
    pub fn split_validation(&self, n_holdout: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if n_holdout == 0 || n_holdout >= self.len() {
            return Err(Error::Dataset(format!(
                "cannot hold out {n_holdout} of {} samples",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seeded(seed));
        let cut = self.len() - n_holdout;
        let rest = self.select(&idx[..cut]);
        let val = self.select(&idx[cut..]).with_split(Split::Validation);
        Ok((rest, val))
    }
}

/// Splits a seeded permutation of `0..n` into consecutive batches; the last may be short.
pub fn shuffled_batches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    idx.chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Default per-coordinate standard deviation of synthetic blobs.
pub const BLOB_STD: f64 = 0.05;

fn bits_for(classes: usize) -> usize {
    (usize::BITS - (classes.max(2) - 1).leading_zeros()) as usize
}

/// Mean of class `class` in `synth_blobs`: coordinate `j` sits at 0.2 or 0.8
/// according to bit `j mod bits` of the class index, so class means are distinct
/// hypercube corners at least 0.6 apart.
pub fn blob_mean(class: usize, classes: usize, dim: usize) -> Vec<f64> {
    let bits = bits_for(classes);
    (0..dim)
        .map(|j| {
            if (class >> (j % bits)) & 1 == 1 {
                0.8
            } else {
                0.2
            }
        })
        .collect()
}

/// Seeded Gaussian blobs, shaped `[n, 1, 1, dim]`, with `BLOB_STD` spread.
pub fn synth_blobs(classes: usize, n_per_class: usize, dim: usize, seed: u64) -> Result<Dataset> {
    synth_blobs_with_std(classes, n_per_class, dim, BLOB_STD, seed)
}

pub fn synth_blobs_with_std(
    classes: usize,
    n_per_class: usize,
    dim: usize,
    std: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || n_per_class == 0 || dim == 0 {
        return Err(Error::Dataset(
            "blobs need at least 2 classes, 1 sample per class and 1 dimension".into(),
        ));
    }
    if dim < bits_for(classes) {
        return Err(Error::Dataset(format!(
            "{classes} classes need at least {} dimensions for distinct means",
            bits_for(classes)
        )));
    }
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::Dataset(format!("invalid blob spread {std}")));
    }
    let noise = Normal::new(0.0, std).expect("valid normal");
    let mut rng = seeded(derive_seed(seed, 0xB10B));
    let n = classes * n_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        for m in blob_mean(class, classes, dim) {
            data.push((m + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
        labels.push(class);
    }
    Dataset::new(
        Tensor::new(vec![n, 1, 1, dim], data)?,
        labels,
        classes,
        Split::Train,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(classes: usize, per: usize) -> Dataset {
        let n = classes * per;
        let images = Tensor::new(
            vec![n, 1, 1, 1],
            (0..n).map(|i| i as f64 / n as f64).collect(),
        )
        .unwrap();
        Dataset::new(
            images,
            (0..n).map(|i| i % classes).collect(),
            classes,
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn stratified_subset_is_exact_on_balanced_data() {
        let d = balanced(10, 200);
        let s = d.subset(1000, 5).unwrap();
        assert_eq!(s.class_counts(), vec![100; 10]);
    }

    #[test]
    fn full_subset_is_a_permutation() {
        let d = balanced(3, 7);
        let s = d.subset(d.len(), 1).unwrap();
        let mut a: Vec<u64> = d.images().data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = s.images().data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_eq!(s.class_counts(), d.class_counts());
    }

    #[test]
    fn subset_is_deterministic_and_bounded() {
        let d = balanced(4, 50);
        assert_eq!(d.subset(37, 9).unwrap(), d.subset(37, 9).unwrap());
        assert_ne!(d.subset(37, 9).unwrap(), d.subset(37, 10).unwrap());
        assert!(d.subset(201, 0).is_err());
    }

    #[test]
    fn subset_handles_uneven_classes() {
        let n = 30;
        let images = Tensor::new(vec![n, 1, 1, 1], vec![0.5; n]).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= 20)).collect();
        let d = Dataset::new(images, labels, 2, Split::Train).unwrap();
        let s = d.subset(10, 0).unwrap();
        let c = s.class_counts();
        assert_eq!(c.iter().sum::<usize>(), 10);
        assert_eq!(c, vec![7, 3]);
    }

    #[test]
    fn validation_split_sizes() {
        let d = balanced(2, 10);
        let (rest, val) = d.split_validation(5, 3).unwrap();
        assert_eq!((rest.len(), val.len()), (15, 5));
        assert_eq!(val.split(), Split::Validation);
    }

    #[test]
    fn blobs_are_reproducible() {
        let a = synth_blobs(3, 20, 4, 11).unwrap();
        let b = synth_blobs(3, 20, 4, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_blobs(3, 20, 4, 12).unwrap());
        assert_eq!(a.sample_shape(), &[1, 1, 4]);
    }

    #[test]
    fn blob_class_mean_within_three_sigma() {
        let per = 400;
        let d = synth_blobs(2, per, 3, 21).unwrap();
        let mean = blob_mean(0, 2, 3);
        for (j, &m) in mean.iter().enumerate() {
            let avg: f64 = (0..d.len())
                .filter(|&i| d.labels()[i] == 0)
                .map(|i| d.sample(i)[j])
                .sum::<f64>()
                / per as f64;
            assert!(
                (avg - m).abs() < 3.0 * BLOB_STD / (per as f64).sqrt(),
                "dim {j}: {avg} vs {m}"
            );
        }
    }

    #[test]
    fn rejects_inconsistent_construction() {
        let images = Tensor::zeros(&[2, 1, 1, 1]);
        assert!(Dataset::new(images.clone(), vec![0], 2, Split::Train).is_err());
        assert!(Dataset::new(images.clone(), vec![0, 2], 2, Split::Train).is_err());
        let bright = Tensor::full(&[2, 1, 1, 1], 1.5);
        assert!(Dataset::new(bright, vec![0, 1], 2, Split::Train).is_err());
    }
}
