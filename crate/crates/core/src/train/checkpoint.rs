//! `best.ckpt` holds every parameter and buffer as little-endian `f32`,
//! back to back; `manifest.csv` lists `name,shape,offset` with the byte offset
//! of each tensor. Parameters come first, then buffers, each in module order.

use std::fs;
use std::path::Path;

use crate::autograd::Module;
use crate::error::{Error, Result};
use crate::tensor::{shape_string, Scalar, Tensor};

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

fn named_tensors<T: Scalar, M: Module<T> + ?Sized>(module: &M) -> Vec<(String, &Tensor<T>)> {
    let mut v: Vec<(String, &Tensor<T>)> = module.parameters().into_iter().map(|p| (p.name.clone(), &p.value)).collect();
    v.extend(module.buffers());
    v
}

/// Writes `best.ckpt` and `manifest.csv` into `dir`.
pub fn save_checkpoint<T: Scalar, M: Module<T> + ?Sized>(module: &M, dir: &Path) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in named_tensors(module) {
        entries.push(ManifestEntry {
            name,
            shape: t.shape().to_vec(),
            offset: bytes.len() as u64,
        });
        for v in t.data() {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut manifest = String::from("name,shape,offset\n");
    for e in &entries {
        manifest.push_str(&format!("{},{},{}\n", e.name, shape_string(&e.shape), e.offset));
    }
    let ckpt = dir.join(CHECKPOINT_FILE);
    fs::write(&ckpt, bytes).map_err(|e| Error::io(&ckpt, e))?;
    let man = dir.join(MANIFEST_FILE);
    fs::write(&man, manifest).map_err(|e| Error::io(&man, e))?;
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("name,shape,offset") {
        return Err(malformed("expected header \"name,shape,offset\"".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let [name, shape, offset] = f.as_slice() else {
                return Err(malformed(format!("expected 3 fields in {line:?}")));
            };
            let shape = shape
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| malformed(format!("bad shape {shape:?}")))?;
            let offset = offset.parse().map_err(|_| malformed(format!("bad offset {offset:?}")))?;
            Ok(ManifestEntry {
                name: name.to_string(),
                shape,
                offset,
            })
        })
        .collect()
}

/// Restores every parameter and buffer of `module` from `dir`. Names and
/// shapes must match the manifest exactly.
pub fn load_checkpoint<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, dir: &Path) -> Result<()> {
    let man_path = dir.join(MANIFEST_FILE);
    let entries = read_manifest(&man_path)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let bytes = fs::read(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    let expected: u64 = entries.iter().map(|e| 4 * e.shape.iter().product::<usize>() as u64).sum();
    if bytes.len() as u64 != expected {
        return Err(Error::Format {
            path: ckpt,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let names: Vec<(String, Vec<usize>)> = named_tensors(module)
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let mismatch = |reason: String| Error::Malformed {
        path: man_path.clone(),
        reason,
    };
    if names.len() != entries.len() {
        return Err(mismatch(format!(
            "model has {} tensors, manifest lists {}",
            names.len(),
            entries.len()
        )));
    }
    let mut values = Vec::with_capacity(entries.len());
    for ((name, shape), e) in names.iter().zip(&entries) {
        if *name != e.name || *shape != e.shape {
            return Err(mismatch(format!(
                "expected {name} {}, found {} {}",
                shape_string(shape),
                e.name,
                shape_string(&e.shape)
            )));
        }
        let start = e.offset as usize;
        let n: usize = shape.iter().product();
        let raw = bytes
            .get(start..start + 4 * n)
            .ok_or_else(|| mismatch(format!("{name} extends past the end of the checkpoint")))?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect();
        values.push(data);
    }
    let mut values = values.into_iter();
    for p in module.parameters_mut() {
        p.value.data_mut().copy_from_slice(&values.next().expect("counts checked"));
    }
    for (_, b) in module.buffers_mut() {
        b.data_mut().copy_from_slice(&values.next().expect("counts checked"));
    }
    Ok(())
}
