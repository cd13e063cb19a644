//! Dataset container, MNIST IDX ingestion and synthetic data.

mod dataset;
mod idx;

pub use dataset::{
    blob_mean, shuffled_batches, synth_blobs, synth_blobs_with_std, Dataset, Split, BLOB_STD,
};
pub use idx::{
    encode_idx, load_idx, load_mnist, parse_idx, write_idx, IdxArray, IMAGES_MAGIC, LABELS_MAGIC,
};
