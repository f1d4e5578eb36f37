//! Image datasets and their split into binary classification tasks.

pub mod cifar;
pub mod fetch;
pub mod idx;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub use cifar::{encode_cifar10_bin, parse_cifar10_batches, parse_cifar10_bin};
pub use fetch::{fetch, fetch_dataset, sha256_hex, FetchOutcome};
pub use idx::{encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major per image, images back to back.
    pub pixels: Vec<u8>,
}

impl ImageSet {
    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }
}

/// Feature rows of a split. Pixel rows are kept as bytes and scaled by
/// `1/255` on access.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Pixels { dim: usize, bytes: Vec<u8> },
    Real(Matrix),
}

impl Features {
    pub fn len(&self) -> usize {
        match self {
            Features::Pixels { dim, bytes } => bytes.len() / dim,
            Features::Real(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Features::Pixels { dim, .. } => *dim,
            Features::Real(m) => m.cols(),
        }
    }

    pub fn row_into(&self, i: usize, out: &mut [f64]) {
        match self {
            Features::Pixels { dim, bytes } => {
                for (o, &p) in out.iter_mut().zip(&bytes[i * dim..(i + 1) * dim]) {
                    *o = f64::from(p) / 255.0;
                }
            }
            Features::Real(m) => out.copy_from_slice(m.row(i)),
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.row_into(i, &mut out);
        out
    }

    /// Stacks the selected rows into a matrix.
    pub fn gather(&self, indices: &[usize]) -> Matrix {
        let dim = self.dim();
        let mut m = Matrix::zeros(indices.len(), dim);
        for (r, &i) in indices.iter().enumerate() {
            self.row_into(i, m.row_mut(r));
        }
        m
    }

    pub fn all(&self) -> Matrix {
        self.gather(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// One binary task. Label 0 is `class_pair.0`, label 1 is `class_pair.1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_id: usize,
    pub class_pair: (u8, u8),
    pub train_x: Features,
    pub train_y: Vec<u8>,
    pub test_x: Features,
    pub test_y: Vec<u8>,
    /// Position of every sample in its source set.
    pub train_source: Vec<usize>,
    pub test_source: Vec<usize>,
}

impl TaskDataset {
    /// A task over arbitrary real feature rows.
    pub fn from_real(
        task_id: usize,
        class_pair: (u8, u8),
        train_x: Matrix,
        train_y: Vec<u8>,
        test_x: Matrix,
        test_y: Vec<u8>,
    ) -> Result<Self> {
        if train_x.rows() != train_y.len() || test_x.rows() != test_y.len() {
            return Err(Error::Shape("feature rows and labels differ in count".into()));
        }
        if train_x.cols() != test_x.cols() {
            return Err(Error::Shape("train and test feature dims differ".into()));
        }
        if let Some(&bad) = train_y.iter().chain(&test_y).find(|&&l| l > 1) {
            return Err(Error::InvalidLabel(bad));
        }
        Ok(Self {
            task_id,
            class_pair,
            train_source: (0..train_y.len()).collect(),
            test_source: (0..test_y.len()).collect(),
            train_x: Features::Real(train_x),
            train_y,
            test_x: Features::Real(test_x),
            test_y,
        })
    }

    pub fn dim(&self) -> usize {
        self.train_x.dim()
    }

    pub fn original_class(&self, label: u8) -> u8 {
        if label == 0 {
            self.class_pair.0
        } else {
            self.class_pair.1
        }
    }
}

/// `(0,1), (2,3), (4,5), (6,7), (8,9)`
pub fn default_pairing() -> Vec<(u8, u8)> {
    (0..5).map(|t| (2 * t, 2 * t + 1)).collect()
}

fn check_pairing(pairing: &[(u8, u8)]) -> Result<()> {
    let mut seen = [false; 256];
    for &(a, b) in pairing {
        for c in [a, b] {
            if std::mem::replace(&mut seen[c as usize], true) {
                return Err(Error::Config(format!("class {c} appears in more than one pair")));
            }
        }
    }
    Ok(())
}

fn split_one(images: &ImageSet, labels: &[u8], pair: (u8, u8), which: &str) -> Result<(Features, Vec<u8>, Vec<usize>)> {
    let dim = images.image_len();
    let mut bytes = Vec::new();
    let mut y = Vec::new();
    let mut source = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        let bin = if l == pair.0 {
            0
        } else if l == pair.1 {
            1
        } else {
            continue;
        };
        bytes.extend_from_slice(images.image(i));
        y.push(bin);
        source.push(i);
    }
    for c in [pair.0, pair.1] {
        if !labels.contains(&c) {
            return Err(Error::Config(format!("class {c} absent from the {which} set")));
        }
    }
    Ok((Features::Pixels { dim, bytes }, y, source))
}

/// Builds one task per class pair. Features are flattened and scaled to
/// `[0, 1]`; sample order within a task follows the source order.
pub fn make_splits(
    train: (&ImageSet, &[u8]),
    test: (&ImageSet, &[u8]),
    pairing: &[(u8, u8)],
) -> Result<Vec<TaskDataset>> {
    for (which, (images, labels)) in [("train", train), ("test", test)] {
        if images.count != labels.len() {
            return Err(Error::Pairing(format!(
                "{which}: {} images but {} labels",
                images.count,
                labels.len()
            )));
        }
    }
    check_pairing(pairing)?;
    pairing
        .iter()
        .enumerate()
        .map(|(task_id, &pair)| {
            let (train_x, train_y, train_source) = split_one(train.0, train.1, pair, "train")?;
            let (test_x, test_y, test_source) = split_one(test.0, test.1, pair, "test")?;
            Ok(TaskDataset {
                task_id,
                class_pair: pair,
                train_x,
                train_y,
                test_x,
                test_y,
                train_source,
                test_source,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Fashion,
    Cifar10,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Mnist, DatasetKind::Fashion, DatasetKind::Cifar10];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fashion => "fashion",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn dir(self, data_dir: &Path) -> PathBuf {
        data_dir.join(self.name())
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset {s:?} (expected mnist, fashion or cifar10)")))
    }
}

/// Raw train and test sets of one dataset.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub train: (ImageSet, Vec<u8>),
    pub test: (ImageSet, Vec<u8>),
}

impl RawDataset {
    pub fn splits(&self, pairing: &[(u8, u8)]) -> Result<Vec<TaskDataset>> {
        make_splits(
            (&self.train.0, &self.train.1),
            (&self.test.0, &self.test.1),
            pairing,
        )
    }
}

pub(crate) const IDX_STEMS: [(&str, &str); 4] = [
    ("train-images", "idx3-ubyte"),
    ("train-labels", "idx1-ubyte"),
    ("t10k-images", "idx3-ubyte"),
    ("t10k-labels", "idx1-ubyte"),
];

pub(crate) const CIFAR_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];

/// Finds an IDX file under any of the usual names, gzip or not.
pub fn find_idx_file(dir: &Path, stem: &str, kind: &str) -> Option<PathBuf> {
    let bases = [format!("{stem}-{kind}"), format!("{stem}.{kind}"), format!("{stem}.idx")];
    bases
        .iter()
        .flat_map(|b| [b.clone(), format!("{b}.gz")])
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
}

fn read_idx_pair(dir: &Path, images: (&str, &str), labels: (&str, &str)) -> Result<(ImageSet, Vec<u8>)> {
    let missing = |stem: &str| Error::Config(format!("{stem} file not found in {}", dir.display()));
    let img_path = find_idx_file(dir, images.0, images.1).ok_or_else(|| missing(images.0))?;
    let lab_path = find_idx_file(dir, labels.0, labels.1).ok_or_else(|| missing(labels.0))?;
    Ok((
        parse_idx_images(&fs::read(img_path)?)?,
        parse_idx_labels(&fs::read(lab_path)?)?,
    ))
}

/// True when every file the loader needs is present.
pub fn is_present(kind: DatasetKind, data_dir: &Path) -> bool {
    let dir = kind.dir(data_dir);
    match kind {
        DatasetKind::Cifar10 => CIFAR_FILES.iter().all(|f| dir.join(f).is_file()),
        _ => IDX_STEMS.iter().all(|(s, k)| find_idx_file(&dir, s, k).is_some()),
    }
}

pub fn load_raw(kind: DatasetKind, data_dir: &Path) -> Result<RawDataset> {
    let dir = kind.dir(data_dir);
    match kind {
        DatasetKind::Mnist | DatasetKind::Fashion => Ok(RawDataset {
            train: read_idx_pair(&dir, IDX_STEMS[0], IDX_STEMS[1])?,
            test: read_idx_pair(&dir, IDX_STEMS[2], IDX_STEMS[3])?,
        }),
        DatasetKind::Cifar10 => {
            let read = |name: &str| -> Result<Vec<u8>> {
                let p = dir.join(name);
                fs::read(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            };
            let train_bytes = CIFAR_FILES[..5].iter().map(|f| read(f)).collect::<Result<Vec<_>>>()?;
            let train = parse_cifar10_batches(train_bytes.iter().map(Vec::as_slice))?;
            let test = parse_cifar10_bin(&read(CIFAR_FILES[5])?)?;
            Ok(RawDataset { train, test })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(labels: &[u8]) -> (ImageSet, Vec<u8>) {
        let pixels = labels.iter().flat_map(|&l| [l * 10, 255]).collect();
        (
            ImageSet {
                count: labels.len(),
                height: 1,
                width: 2,
                channels: 1,
                pixels,
            },
            labels.to_vec(),
        )
    }

    #[test]
    fn toy_split() {
        let (imgs, labels) = toy(&[0, 1, 2, 3]);
        let tasks = make_splits((&imgs, &labels), (&imgs, &labels), &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(tasks.len(), 2);
        for t in &tasks {
            assert_eq!(t.train_y, vec![0, 1]);
            assert_eq!(t.train_x.len(), 2);
        }
        assert_eq!(tasks[1].train_x.row(0), vec![20.0 / 255.0, 1.0]);
        assert_eq!(tasks[1].train_source, vec![2, 3]);
        assert_eq!(tasks[1].original_class(1), 3);
    }

    #[test]
    fn split_errors() {
        let (imgs, labels) = toy(&[0, 1, 2, 3]);
        assert!(matches!(
            make_splits((&imgs, &labels), (&imgs, &labels), &[(0, 5)]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_splits((&imgs, &labels), (&imgs, &labels), &[(0, 1), (1, 2)]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_splits((&imgs, &labels[..3]), (&imgs, &labels), &[(0, 1)]),
            Err(Error::Pairing(_))
        ));
    }

    #[test]
    fn default_pairs_are_consecutive() {
        assert_eq!(default_pairing(), vec![(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]);
    }

    #[test]
    fn dataset_names() {
        assert_eq!("fashion".parse::<DatasetKind>().unwrap(), DatasetKind::Fashion);
        assert!("svhn".parse::<DatasetKind>().is_err());
    }

    #[test]
    fn finds_idx_variants() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train-images-idx3-ubyte.gz"), b"x").unwrap();
        std::fs::write(dir.path().join("t10k-labels.idx"), b"x").unwrap();
        assert!(find_idx_file(dir.path(), "train-images", "idx3-ubyte").is_some());
        assert!(find_idx_file(dir.path(), "t10k-labels", "idx1-ubyte").is_some());
        assert!(find_idx_file(dir.path(), "train-labels", "idx1-ubyte").is_none());
    }
}
