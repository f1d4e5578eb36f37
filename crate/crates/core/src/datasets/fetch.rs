//! Downloading dataset archives.
//!
//! A `SHA256SUMS` file (`<hex>  <file name>` per line) placed in a dataset
//! directory pins digests for the files fetched into it.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use sha2::{Digest, Sha256};

use super::{find_idx_file, is_present, DatasetKind, CIFAR_FILES, IDX_STEMS};
use crate::error::{Error, Result};

pub const MNIST_BASE_URL: &str = "https://ossci-datasets.s3.amazonaws.com/mnist/";
pub const FASHION_BASE_URL: &str = "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/";
pub const CIFAR10_BASE_URL: &str = "https://www.cs.toronto.edu/~kriz/";
pub const CIFAR10_ARCHIVE: &str = "cifar-10-binary.tar.gz";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchOutcome {
    AlreadyPresent(PathBuf),
    Downloaded(PathBuf),
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn verify(path: &Path, expected: &str) -> Result<()> {
    let actual = sha256_hex(path)?;
    if actual.eq_ignore_ascii_case(expected) {
        Ok(())
    } else {
        Err(Error::Integrity {
            path: path.to_path_buf(),
            expected: expected.to_ascii_lowercase(),
            actual,
        })
    }
}

/// Streams `url` into `dest`. An existing file is kept when no digest is
/// given or when its digest matches, without touching the network.
pub fn fetch(url: &str, dest: &Path, expected_sha256: Option<&str>) -> Result<FetchOutcome> {
    if dest.is_file() {
        match expected_sha256 {
            None => return Ok(FetchOutcome::AlreadyPresent(dest.to_path_buf())),
            Some(d) if verify(dest, d).is_ok() => return Ok(FetchOutcome::AlreadyPresent(dest.to_path_buf())),
            Some(_) => {}
        }
    }
    if let Some(dir) = dest.parent() {
        fs::create_dir_all(dir)?;
    }
    let transport = |message: String| Error::Transport {
        url: url.to_string(),
        message,
    };
    let mut response = ureq::get(url).call().map_err(|e| transport(e.to_string()))?;
    let part = dest.with_extension("part");
    {
        let mut out = File::create(&part)?;
        let mut body = response.body_mut().as_reader();
        io::copy(&mut body, &mut out).map_err(|e| transport(e.to_string()))?;
    }
    if let Some(d) = expected_sha256 {
        if let Err(e) = verify(&part, d) {
            let _ = fs::remove_file(&part);
            return Err(match e {
                Error::Integrity { expected, actual, .. } => Error::Integrity {
                    path: dest.to_path_buf(),
                    expected,
                    actual,
                },
                other => other,
            });
        }
    }
    fs::rename(&part, dest)?;
    Ok(FetchOutcome::Downloaded(dest.to_path_buf()))
}

/// Parses `SHA256SUMS` in `dir`, if present.
pub fn read_digests(dir: &Path) -> Result<HashMap<String, String>> {
    let path = dir.join("SHA256SUMS");
    if !path.is_file() {
        return Ok(HashMap::new());
    }
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter_map(|line| {
            let mut parts = line.split_whitespace();
            let digest = parts.next()?;
            let name = parts.next()?.trim_start_matches('*');
            Some((name.to_string(), digest.to_string()))
        })
        .collect())
}

fn base_url(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Mnist => MNIST_BASE_URL,
        DatasetKind::Fashion => FASHION_BASE_URL,
        DatasetKind::Cifar10 => CIFAR10_BASE_URL,
    }
}

fn join_url(base: &str, name: &str) -> String {
    format!("{}/{name}", base.trim_end_matches('/'))
}

/// Downloads every file of `kind` into `data_dir/<kind>/`. `mirror`
/// replaces the default base URL.
pub fn fetch_dataset(kind: DatasetKind, data_dir: &Path, mirror: Option<&str>) -> Result<Vec<FetchOutcome>> {
    let dir = kind.dir(data_dir);
    let base = mirror.unwrap_or(base_url(kind));
    let digests = read_digests(&dir)?;
    let digest = |name: &str| digests.get(name).map(String::as_str);

    match kind {
        DatasetKind::Mnist | DatasetKind::Fashion => IDX_STEMS
            .iter()
            .map(|(stem, ext)| {
                if let Some(existing) = find_idx_file(&dir, stem, ext) {
                    let name = existing.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                    if let Some(d) = digest(name) {
                        verify(&existing, d)?;
                    }
                    return Ok(FetchOutcome::AlreadyPresent(existing));
                }
                let name = format!("{stem}-{ext}.gz");
                fetch(&join_url(base, &name), &dir.join(&name), digest(&name))
            })
            .collect(),
        DatasetKind::Cifar10 => {
            if is_present(kind, data_dir) {
                return Ok(CIFAR_FILES
                    .iter()
                    .map(|f| FetchOutcome::AlreadyPresent(dir.join(f)))
                    .collect());
            }
            let archive = dir.join(CIFAR10_ARCHIVE);
            fetch(&join_url(base, CIFAR10_ARCHIVE), &archive, digest(CIFAR10_ARCHIVE))?;
            extract_cifar(&archive, &dir)?;
            Ok(CIFAR_FILES
                .iter()
                .map(|f| FetchOutcome::Downloaded(dir.join(f)))
                .collect())
        }
    }
}

/// Pulls the `.bin` batches out of the CIFAR-10 archive, flattening paths.
pub fn extract_cifar(archive: &Path, dir: &Path) -> Result<()> {
    let mut tar = tar::Archive::new(GzDecoder::new(File::open(archive)?));
    let mut found = 0;
    for entry in tar.entries()? {
        let mut entry = entry?;
        let path = entry.path()?.into_owned();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if CIFAR_FILES.contains(&name) {
            entry.unpack(dir.join(name))?;
            found += 1;
        }
    }
    if found < CIFAR_FILES.len() {
        return Err(Error::Format(format!(
            "{} holds {found} of {} expected batch files",
            archive.display(),
            CIFAR_FILES.len()
        )));
    }
    Ok(())
}
