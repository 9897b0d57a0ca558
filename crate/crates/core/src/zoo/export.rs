//! Stem filter images.

use std::path::{Path, PathBuf};

use crate::data::pgm::{write_pgm, GrayImage};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::model::Model;

/// Value written for a constant kernel, where min-max normalization is undefined.
pub const FLAT_KERNEL_LEVEL: u8 = 128;

/// Min-max normalizes `values` to `0..=255`.
pub fn normalize_to_u8(values: &[f64]) -> Vec<u8> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![FLAT_KERNEL_LEVEL; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - min) / (max - min) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// One `kh x kw` image per stem output channel (mean over input channels).
pub fn stem_filter_images<T: Scalar>(model: &Model<T>) -> Result<Vec<GrayImage>> {
    let w = &model.stem_conv.weight.value;
    let [o, i, kh, kw] = *w.shape() else {
        return Err(Error::Contract("stem convolution weight is not rank 4".into()));
    };
    let plane = kh * kw;
    Ok((0..o)
        .map(|oc| {
            let mean: Vec<f64> = (0..plane)
                .map(|p| (0..i).map(|ic| w.data()[(oc * i + ic) * plane + p].as_f64()).sum::<f64>() / i as f64)
                .collect();
            GrayImage {
                width: kw,
                height: kh,
                pixels: normalize_to_u8(&mean),
            }
        })
        .collect())
}

/// Tiles images on a `ceil(sqrt(n))`-column grid with a 1-pixel black gutter.
pub fn montage(images: &[GrayImage]) -> GrayImage {
    if images.is_empty() {
        return GrayImage {
            width: 1,
            height: 1,
            pixels: vec![0],
        };
    }
    let cols = (images.len() as f64).sqrt().ceil() as usize;
    let rows = images.len().div_ceil(cols);
    let (tw, th) = (images[0].width, images[0].height);
    let width = cols * (tw + 1) + 1;
    let height = rows * (th + 1) + 1;
    let mut pixels = vec![0u8; width * height];
    for (idx, img) in images.iter().enumerate() {
        let (r, c) = (idx / cols, idx % cols);
        let (x0, y0) = (c * (tw + 1) + 1, r * (th + 1) + 1);
        for y in 0..th {
            let dst = (y0 + y) * width + x0;
            pixels[dst..dst + tw].copy_from_slice(&img.pixels[y * tw..(y + 1) * tw]);
        }
    }
    GrayImage { width, height, pixels }
}

/// Writes `stem_filter_{index:03}.pgm` for every stem channel plus
/// `stem_montage.pgm` into `dir`, returning the written paths.
pub fn export_first_conv_filters<T: Scalar>(model: &Model<T>, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let images = stem_filter_images(model)?;
    let mut paths = Vec::with_capacity(images.len() + 1);
    for (i, img) in images.iter().enumerate() {
        let path = dir.join(format!("stem_filter_{i:03}.pgm"));
        write_pgm(&path, img)?;
        paths.push(path);
    }
    let path = dir.join("stem_montage.pgm");
    write_pgm(&path, &montage(&images))?;
    paths.push(path);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_kernel_is_mid_gray() {
        assert_eq!(normalize_to_u8(&[0.3; 9]), vec![128; 9]);
        assert_eq!(normalize_to_u8(&[-1.0, 0.0, 1.0]), vec![0, 128, 255]);
    }

    #[test]
    fn montage_geometry() {
        let tile = GrayImage {
            width: 3,
            height: 3,
            pixels: vec![255; 9],
        };
        let m = montage(&vec![tile; 5]);
        assert_eq!((m.width, m.height), (3 * 4 + 1, 2 * 4 + 1));
        assert_eq!(m.pixels.iter().filter(|&&p| p == 255).count(), 45);
    }
}
