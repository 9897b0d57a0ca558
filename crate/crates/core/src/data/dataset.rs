use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// 8-bit images (`N x C x H x W`, planar) with integer labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub images: Vec<u8>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        images: Vec<u8>,
        labels: Vec<usize>,
        (channels, height, width): (usize, usize, usize),
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let ds = Self {
            images,
            labels,
            channels,
            height,
            width,
            num_classes,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Data("image dimensions must be positive".into()));
        }
        if self.images.len() != self.labels.len() * self.image_len() {
            return Err(Error::Data(format!(
                "{} pixel bytes do not hold {} images of {}x{}x{}",
                self.images.len(),
                self.labels.len(),
                self.channels,
                self.height,
                self.width
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Data(format!("label {bad} out of range for {} classes", self.num_classes)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Self {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            images: Vec::new(),
            labels: Vec::new(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// Repeats a single-channel dataset into `channels` identical planes.
    pub fn replicate_channels(&self, channels: usize) -> Result<Self> {
        if self.channels != 1 {
            return Err(Error::Data(format!(
                "can only replicate single-channel images, found {} channels",
                self.channels
            )));
        }
        let plane = self.height * self.width;
        let mut images = Vec::with_capacity(self.images.len() * channels);
        for img in self.images.chunks(plane) {
            for _ in 0..channels {
                images.extend_from_slice(img);
            }
        }
        Ok(Self {
            images,
            labels: self.labels.clone(),
            channels,
            ..self.clone_meta()
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}
