//! Folder of binary PGM images listed in `labels.csv` (`filename,label`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::dataset::{Dataset, Split};
use super::pgm::read_pgm;

pub const LABELS_FILE: &str = "labels.csv";

/// Loads every listed image as a single-channel sample. All images must share
/// one size; the class count is `max(label) + 1`.
pub fn load_pgm_folder(dir: &Path, split: Split) -> Result<Dataset> {
    let path = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let malformed = |reason: String| Error::Malformed {
        path: path.clone(),
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "filename,label" => {}
        _ => return Err(malformed("expected header \"filename,label\"".into())),
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut size = None;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (name, label) = line
            .rsplit_once(',')
            .ok_or_else(|| malformed(format!("line {}: expected filename,label", lineno + 1)))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| malformed(format!("line {}: bad label {label:?}", lineno + 1)))?;
        let img = read_pgm(&dir.join(name.trim()))?;
        match size {
            None => size = Some((img.width, img.height)),
            Some(s) if s != (img.width, img.height) => {
                return Err(Error::Data(format!(
                    "{name} is {}x{}, expected {}x{}",
                    img.width, img.height, s.0, s.1
                )))
            }
            Some(_) => {}
        }
        images.extend_from_slice(&img.pixels);
        labels.push(label);
    }
    let (width, height) = size.ok_or_else(|| malformed("no images listed".into()))?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(images, labels, (1, height, width), num_classes, split)
}
