use admmq_core::data::{load_idx, load_mnist, synth_blobs, write_idx, Dataset, Split};
use admmq_core::rng::seeded;
use admmq_core::{Error, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random_dataset(n: usize, rows: usize, cols: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    // pixels are k/255, exactly what the loader produces
    let pixels = (0..n * rows * cols)
        .map(|_| f64::from(rng.random::<u8>()) / 255.0)
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..10)).collect();
    Dataset::new(
        Tensor::new(vec![n, 1, rows, cols], pixels).unwrap(),
        labels,
        10,
        Split::Train,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn idx_round_trip_is_bit_identical(n in 1usize..20, rows in 1usize..9, cols in 1usize..9, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("img"), dir.path().join("lbl"));
        let d = random_dataset(n, rows, cols, seed);
        write_idx(&d, &i, &l).unwrap();
        let back = load_idx(&i, &l).unwrap();
        prop_assert_eq!(back.images(), d.images());
        prop_assert_eq!(back.labels(), d.labels());
        prop_assert!(back.images().data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

#[test]
fn pixel_out_of_range_is_rejected() {
    let t = Tensor::new(vec![1, 1, 1, 2], vec![0.5, 1.5]).unwrap();
    assert!(Dataset::new(t, vec![0], 2, Split::Train).is_err());
}

#[test]
fn label_out_of_range_is_rejected() {
    let t = Tensor::new(vec![1, 1, 1, 2], vec![0.5, 0.5]).unwrap();
    assert!(Dataset::new(t, vec![3], 2, Split::Train).is_err());
}

#[test]
fn stratified_subset_preserves_class_shares() {
    // 1000 samples, class c has 50 + 10c members
    let mut labels = Vec::new();
    for c in 0..10 {
        labels.extend(std::iter::repeat_n(c, 50 + 10 * c));
    }
    let n = labels.len();
    let d = Dataset::new(Tensor::zeros(&[n, 1, 1, 1]), labels, 10, Split::Train).unwrap();
    let s = d.subset(100, 3).unwrap();
    assert_eq!(s.len(), 100);
    let counts = s.class_counts();
    for (c, &k) in counts.iter().enumerate() {
        let exact = 100.0 * (50 + 10 * c) as f64 / n as f64;
        assert!((k as f64 - exact).abs() < 1.0, "class {c}: {k} vs {exact}");
    }
    assert_eq!(d.subset(100, 3).unwrap(), s);
    assert_ne!(d.subset(100, 4).unwrap().labels(), s.labels());
}

#[test]
fn validation_split_is_disjoint_and_complete() {
    let d = random_dataset(50, 2, 2, 9);
    let (rest, val) = d.split_validation(10, 1).unwrap();
    assert_eq!((rest.len(), val.len()), (40, 10));
    assert_eq!(val.split(), Split::Validation);
    let mut all: Vec<Vec<u64>> = (0..rest.len())
        .map(|i| rest.sample(i).iter().map(|v| v.to_bits()).collect())
        .chain((0..val.len()).map(|i| val.sample(i).iter().map(|v| v.to_bits()).collect()))
        .collect();
    let mut orig: Vec<Vec<u64>> = (0..d.len())
        .map(|i| d.sample(i).iter().map(|v| v.to_bits()).collect())
        .collect();
    all.sort();
    orig.sort();
    assert_eq!(all, orig);
}

#[test]
fn blobs_are_seeded_and_balanced() {
    let a = synth_blobs(3, 40, 6, 5).unwrap();
    assert_eq!(a, synth_blobs(3, 40, 6, 5).unwrap());
    assert_ne!(a, synth_blobs(3, 40, 6, 6).unwrap());
    assert_eq!(a.class_counts(), vec![40, 40, 40]);
    assert_eq!(a.sample_shape(), &[1, 1, 6]);
    assert!(a.images().data().iter().all(|&p| (0.0..=1.0).contains(&p)));
}

#[test]
fn missing_mnist_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_mnist(dir.path(), Split::Test),
        Err(Error::Io { .. })
    ));
}

#[test]
fn mnist_files_are_found_by_standard_names() {
    let dir = tempfile::tempdir().unwrap();
    let d = random_dataset(7, 28, 28, 1);
    write_idx(
        &d,
        &dir.path().join("t10k-images-idx3-ubyte"),
        &dir.path().join("t10k-labels-idx1-ubyte"),
    )
    .unwrap();
    let back = load_mnist(dir.path(), Split::Test).unwrap();
    assert_eq!(back.split(), Split::Test);
    assert_eq!(back.images(), d.images());
}
