//! CIFAR-100 binary records: one coarse-label byte, one fine-label byte, then
//! the R, G and B planes (row-major). The same layout is used for synthetic
//! corpora of other sizes, described by a `dataset.csv` next to the files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::dataset::{Dataset, Split};

pub const CIFAR_TRAIN_RECORDS: usize = 50_000;
pub const CIFAR_TEST_RECORDS: usize = 10_000;
pub const CIFAR_CLASSES: usize = 100;
pub const CIFAR_DIMS: (usize, usize, usize) = (3, 32, 32);
/// Bytes per CIFAR-100 record.
pub const CIFAR_RECORD: usize = 2 + 3 * 32 * 32;

/// Parses `bytes` as exactly `records` records of `dims` images.
pub fn parse_records(
    bytes: &[u8],
    path: &Path,
    dims: (usize, usize, usize),
    records: usize,
    num_classes: usize,
    split: Split,
) -> Result<Dataset> {
    let image_len = dims.0 * dims.1 * dims.2;
    let record = 2 + image_len;
    let expected = (records * record) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let mut images = Vec::with_capacity(records * image_len);
    let mut labels = Vec::with_capacity(records);
    for rec in bytes.chunks_exact(record) {
        labels.push(rec[1] as usize);
        images.extend_from_slice(&rec[2..]);
    }
    Dataset::new(images, labels, dims, num_classes, split)
}

pub fn read_records(
    path: &Path,
    dims: (usize, usize, usize),
    records: usize,
    num_classes: usize,
    split: Split,
) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_records(&bytes, path, dims, records, num_classes, split)
}

/// Loads `train.bin` (50000 records) and `test.bin` (10000 records).
pub fn load_cifar100(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = read_records(&dir.join("train.bin"), CIFAR_DIMS, CIFAR_TRAIN_RECORDS, CIFAR_CLASSES, Split::Train)?;
    let test = read_records(&dir.join("test.bin"), CIFAR_DIMS, CIFAR_TEST_RECORDS, CIFAR_CLASSES, Split::Test)?;
    Ok((train, test))
}

/// Serializes a dataset in the record layout. Fine labels must fit a byte;
/// the coarse byte is written as 0.
pub fn encode_records(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ds.len() * (2 + ds.image_len()));
    for i in 0..ds.len() {
        let label = u8::try_from(ds.labels[i])
            .map_err(|_| Error::Data(format!("label {} does not fit in a byte", ds.labels[i])))?;
        out.push(0);
        out.push(label);
        out.extend_from_slice(ds.image(i));
    }
    Ok(out)
}

pub fn write_records(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, encode_records(ds)?).map_err(|e| Error::io(path, e))
}

const MANIFEST: &str = "dataset.csv";
const MANIFEST_HEADER: &str = "split,records,channels,height,width,classes";

/// Writes `train.bin`, `test.bin` and a `dataset.csv` describing them.
pub fn write_corpus(dir: &Path, train: &Dataset, test: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_records(&dir.join("train.bin"), train)?;
    write_records(&dir.join("test.bin"), test)?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for ds in [train, test] {
        manifest.push_str(&format!(
            "{},{},{},{},{},{}\n",
            ds.split,
            ds.len(),
            ds.channels,
            ds.height,
            ds.width,
            ds.num_classes
        ));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

fn read_manifest(path: &Path) -> Result<Vec<(Split, usize, (usize, usize, usize), usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
        return Err(malformed(format!("expected header {MANIFEST_HEADER:?}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(malformed(format!("expected 6 fields in {line:?}")));
            }
            let split = match f[0] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(malformed(format!("unknown split {other:?}"))),
            };
            let num = |s: &str| s.parse::<usize>().map_err(|_| malformed(format!("bad number {s:?}")));
            Ok((split, num(f[1])?, (num(f[2])?, num(f[3])?, num(f[4])?), num(f[5])?))
        })
        .collect()
}

/// Loads a directory of record files: sizes come from `dataset.csv` when
/// present, otherwise the CIFAR-100 counts are required.
pub fn load_record_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let manifest = dir.join(MANIFEST);
    if !manifest.exists() {
        return load_cifar100(dir);
    }
    let entries = read_manifest(&manifest)?;
    let find = |split: Split| {
        entries.iter().find(|e| e.0 == split).ok_or_else(|| Error::Malformed {
            path: manifest.clone(),
            reason: format!("no {split} row"),
        })
    };
    let (_, n_train, dims_train, k_train) = *find(Split::Train)?;
    let (_, n_test, dims_test, k_test) = *find(Split::Test)?;
    let train = read_records(&dir.join("train.bin"), dims_train, n_train, k_train, Split::Train)?;
    let test = read_records(&dir.join("test.bin"), dims_test, n_test, k_test, Split::Test)?;
    Ok((train, test))
}
