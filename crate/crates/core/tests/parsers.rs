use std::path::PathBuf;

use frcr::datasets::{
    default_pairing, encode_cifar10_bin, encode_idx_images, encode_idx_labels, is_present, load_raw,
    parse_cifar10_bin, parse_idx_images, parse_idx_labels, DatasetKind, ImageSet,
};
use proptest::prelude::*;

fn data_dir() -> PathBuf {
    std::env::var_os("FRCR_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

proptest! {
    #[test]
    fn idx_round_trip(count in 0usize..6, h in 1usize..6, w in 1usize..6, seed in any::<u8>()) {
        let pixels: Vec<u8> = (0..count * h * w).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let set = ImageSet { count, height: h, width: w, channels: 1, pixels };
        prop_assert_eq!(parse_idx_images(&encode_idx_images(&set)).unwrap(), set);
        let labels: Vec<u8> = (0..count).map(|i| ((i + seed as usize) % 10) as u8).collect();
        prop_assert_eq!(parse_idx_labels(&encode_idx_labels(&labels)).unwrap(), labels);
    }

    #[test]
    fn cifar_round_trip(count in 0usize..4, seed in any::<u8>()) {
        let pixels: Vec<u8> = (0..count * 3072).map(|i| (i as u8) ^ seed).collect();
        let set = ImageSet { count, height: 32, width: 32, channels: 3, pixels };
        let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
        let (parsed, parsed_labels) = parse_cifar10_bin(&encode_cifar10_bin(&set, &labels).unwrap()).unwrap();
        prop_assert_eq!(parsed, set);
        prop_assert_eq!(parsed_labels, labels);
    }
}

#[test]
fn real_mnist_counts_and_splits() {
    let dir = data_dir();
    if !is_present(DatasetKind::Mnist, &dir) {
        eprintln!("MNIST not found under {}; skipping", dir.display());
        return;
    }
    let raw = load_raw(DatasetKind::Mnist, &dir).unwrap();
    assert_eq!(raw.train.0.count, 60000);
    assert_eq!(raw.test.0.count, 10000);
    assert_eq!((raw.train.0.height, raw.train.0.width), (28, 28));
    let tasks = raw.splits(&default_pairing()).unwrap();
    assert_eq!(tasks.len(), 5);
    assert_eq!(tasks.iter().map(|t| t.train_y.len()).sum::<usize>(), 60000);
    assert_eq!(tasks.iter().map(|t| t.test_y.len()).sum::<usize>(), 10000);
    for t in &tasks {
        assert_eq!(t.dim(), 784);
        for &s in t.train_source.iter().take(50) {
            let class = raw.train.1[s];
            assert!(class == t.class_pair.0 || class == t.class_pair.1);
        }
        let row = t.test_x.row(0);
        assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
