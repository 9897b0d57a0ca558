//! Preprocessing, augmentation and seeded batching.
//!
//! Per epoch one `ChaCha8Rng` seeded with `epoch_seed` first shuffles the
//! sample order (train mode only) and then drives the per-sample crop and
//! flip draws in stream order, so a batch sequence is a pure function of the
//! dataset, the preprocessing config and the seed.

use std::marker::PhantomData;
use std::sync::mpsc;
use std::thread;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::dataset::Dataset;

pub const CIFAR100_MEAN: [f64; 3] = [0.5071, 0.4865, 0.4409];
pub const CIFAR100_STD: [f64; 3] = [0.2673, 0.2564, 0.2762];
pub const CIFAR_CROP_PADDING: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Preproc {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Zero padding for the random crop; 0 disables cropping.
    pub crop_padding: usize,
    pub hflip: bool,
    /// Square output side after bilinear resizing; `None` keeps the input size.
    pub target_size: Option<usize>,
}

impl Preproc {
    /// CIFAR-100 statistics with pad-4 crop and flip.
    pub fn cifar100() -> Self {
        Self {
            mean: CIFAR100_MEAN.to_vec(),
            std: CIFAR100_STD.to_vec(),
            crop_padding: CIFAR_CROP_PADDING,
            hflip: true,
            target_size: None,
        }
    }

    /// Mean 0.5 and std 0.25 for every channel, no augmentation.
    pub fn plain(channels: usize) -> Self {
        Self {
            mean: vec![0.5; channels],
            std: vec![0.25; channels],
            crop_padding: 0,
            hflip: false,
            target_size: None,
        }
    }

    pub fn without_augmentation(mut self) -> Self {
        self.crop_padding = 0;
        self.hflip = false;
        self
    }

    pub fn with_target_size(mut self, size: usize) -> Self {
        self.target_size = Some(size);
        self
    }

    pub fn augments(&self) -> bool {
        self.crop_padding > 0 || self.hflip
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::Config(format!(
                "normalization has {} means and {} stds for {channels}-channel images",
                self.mean.len(),
                self.std.len()
            )));
        }
        if let Some(s) = self.std.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("normalization std must be positive, got {s}")));
        }
        if self.target_size == Some(0) {
            return Err(Error::Config("target size must be positive".into()));
        }
        Ok(())
    }

    /// Bounds of any normalized pixel.
    pub fn output_range(&self) -> (f64, f64) {
        let min_std = self.std.iter().copied().fold(f64::INFINITY, f64::min);
        let max_mean = self.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_mean = self.mean.iter().copied().fold(f64::INFINITY, f64::min);
        ((0.0 - max_mean) / min_std, (1.0 - min_mean) / min_std)
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        self.target_size.map_or((height, width), |s| (s, s))
    }
}

/// Per-channel mean and (population) std of the pixels in `[0, 1]`.
pub fn channel_stats(ds: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let plane = ds.height * ds.width;
    let mut sum = vec![0.0f64; ds.channels];
    let mut sq = vec![0.0f64; ds.channels];
    for img in ds.images.chunks(ds.image_len()) {
        for (c, px) in img.chunks(plane).enumerate() {
            for &p in px {
                let v = f64::from(p) / 255.0;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let n = (ds.len() * plane) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt())
        .collect();
    (mean, std)
}

/// Mirrors every row of a planar `c x h x w` image in place.
pub fn hflip(img: &mut [f64], c: usize, h: usize, w: usize) {
    debug_assert_eq!(img.len(), c * h * w);
    for row in img.chunks_mut(w).take(c * h) {
        row.reverse();
    }
}

/// Crops `h x w` at offset `(dy, dx)` from the image zero-padded by `pad`.
pub fn pad_crop(img: &[f64], c: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..h {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx) as isize - pad as isize;
                if sx >= 0 && sx < w as isize {
                    out[(ci * h + y) * w + x] = img[(ci * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    out
}

/// Source index pair and weight of the upper neighbour for output `i`, with
/// half-pixel centres (`align_corners = false`) and edge clamping.
fn bilinear_taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of a planar image to `oh x ow`.
pub fn resize_bilinear(img: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(oh, h);
    let tx = bilinear_taps(ow, w);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    /// Dataset indices of the samples, in batch order.
    pub indices: Vec<usize>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Lazily assembled batches for one epoch.
pub struct BatchIter<'a, T> {
    ds: &'a Dataset,
    preproc: Preproc,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    augment: bool,
    rng: ChaCha8Rng,
    _elem: PhantomData<T>,
}

impl<T: Scalar> BatchIter<'_, T> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn sample(&mut self, idx: usize) -> Vec<f64> {
        let (c, h, w) = self.ds.dims();
        let mut img: Vec<f64> = self.ds.image(idx).iter().map(|&p| f64::from(p) / 255.0).collect();
        if self.augment {
            let pad = self.preproc.crop_padding;
            if pad > 0 {
                let dy = self.rng.random_range(0..=2 * pad);
                let dx = self.rng.random_range(0..=2 * pad);
                img = pad_crop(&img, c, h, w, pad, dy, dx);
            }
            if self.preproc.hflip && self.rng.random_bool(0.5) {
                hflip(&mut img, c, h, w);
            }
        }
        let (oh, ow) = self.preproc.output_size(h, w);
        if (oh, ow) != (h, w) {
            img = resize_bilinear(&img, c, h, w, oh, ow);
        }
        let plane = oh * ow;
        for (ci, px) in img.chunks_mut(plane).enumerate() {
            let (m, s) = (self.preproc.mean[ci], self.preproc.std[ci]);
            px.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        img
    }
}

impl<T: Scalar> Iterator for BatchIter<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let (c, h, w) = self.ds.dims();
        let (oh, ow) = self.preproc.output_size(h, w);
        let mut data = Vec::with_capacity(indices.len() * c * oh * ow);
        for &i in &indices {
            data.extend(self.sample(i).into_iter().map(T::from_f64_lossy));
        }
        let images = Tensor::new(&[indices.len(), c, oh, ow], data).expect("batch shape matches its data");
        let labels = indices.iter().map(|&i| self.ds.labels[i]).collect();
        Some(Batch {
            images,
            labels,
            indices,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

/// Batches for one epoch. In train mode the order is shuffled and the
/// preprocessing's augmentation applies; otherwise samples come in dataset
/// order with no augmentation.
pub fn make_batches<'a, T: Scalar>(
    ds: &'a Dataset,
    batch_size: usize,
    epoch_seed: u64,
    preproc: &Preproc,
    train_mode: bool,
) -> Result<BatchIter<'a, T>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    preproc.validate(ds.channels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if train_mode {
        order.shuffle(&mut rng);
    }
    Ok(BatchIter {
        ds,
        preproc: preproc.clone(),
        order,
        pos: 0,
        batch_size,
        augment: train_mode && preproc.augments(),
        rng,
        _elem: PhantomData,
    })
}

/// Runs `consume` on every item of `producer`, preparing up to `depth` items
/// ahead on a worker thread. Order is preserved; the first error stops both
/// sides.
pub fn for_each_prefetched<I, F>(producer: I, depth: usize, mut consume: F) -> Result<()>
where
    I: Iterator + Send,
    I::Item: Send,
    F: FnMut(I::Item) -> Result<()>,
{
    thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel(depth.max(1));
        scope.spawn(move || {
            for item in producer {
                if tx.send(item).is_err() {
                    break;
                }
            }
        });
        for item in rx {
            consume(item)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_identity_and_constant() {
        let img: Vec<f64> = (0..2 * 3 * 4).map(f64::from).collect();
        assert_eq!(resize_bilinear(&img, 2, 3, 4, 3, 4), img);
        let flat = vec![0.25; 3 * 5 * 5];
        assert!(resize_bilinear(&flat, 3, 5, 5, 11, 11).iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn resize_half_pixel_upsample() {
        // 2 -> 4 with half-pixel centres: sources -0.25, 0.25, 0.75, 1.25.
        let out = resize_bilinear(&[0.0, 1.0], 1, 1, 2, 1, 4);
        assert_eq!(out, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn centre_crop_is_identity() {
        let img: Vec<f64> = (0..3 * 4 * 4).map(f64::from).collect();
        assert_eq!(pad_crop(&img, 3, 4, 4, 2, 2, 2), img);
        let shifted = pad_crop(&img, 1, 4, 4, 1, 0, 0);
        assert_eq!(&shifted[..5], &[0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(shifted[5], img[0]);
    }
}
