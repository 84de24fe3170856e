//! Binary carbide masks, threshold candidates and the small-region noise rule.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::imageio::{decode_pgm, encode_pgm, GrayImage, Raster};
use crate::morphology::{label_components, Connectivity};

/// Regions smaller than this many pixels are treated as background noise.
pub const NOISE_MIN_AREA: usize = 30;

/// Per-pixel labels, 1 = carbide, 0 = iron matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} mask needs {} labels, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::Invalid(format!(
                "mask label {} at pixel {i} is not 0 or 1",
                data[i]
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(x, y)));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, carbide: bool) {
        self.data[y * self.width + x] = u8::from(carbide);
    }

    pub fn carbide_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Visual encoding: carbide as 255, iron as 0.
    pub fn to_image(&self) -> GrayImage {
        let data = self.data.iter().map(|&v| v * 255).collect();
        GrayImage::new(self.width, self.height, data).expect("mask dims are valid")
    }

    pub fn from_image(img: &GrayImage) -> Result<Self> {
        let mut data = Vec::with_capacity(img.data().len());
        for (index, &value) in img.data().iter().enumerate() {
            match value {
                0 => data.push(0),
                255 => data.push(1),
                _ => return Err(Error::MaskValue { index, value }),
            }
        }
        Self::new(img.width(), img.height(), data)
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        encode_pgm(&self.to_image())
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        Self::from_image(&decode_pgm(bytes)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = GrayImage::load(path)?;
        Self::from_image(&img).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.encode_pgm())
    }
}

impl Raster for BinaryMask {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn pixels(&self) -> &[u8] {
        &self.data
    }
    fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        BinaryMask::new(width, height, pixels)
    }
}

/// Sixteen strictly ascending benchmark intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct ThresholdSet([u8; 16]);

impl ThresholdSet {
    pub const LEN: usize = 16;

    pub fn new(values: &[u8]) -> Result<Self> {
        let arr: [u8; 16] = values.try_into().map_err(|_| {
            Error::Invalid(format!(
                "threshold set needs exactly 16 values, got {}",
                values.len()
            ))
        })?;
        if arr.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(format!(
                "threshold set must be strictly ascending: {arr:?}"
            )));
        }
        Ok(Self(arr))
    }

    pub fn values(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn contains(&self, t: u8) -> bool {
        self.0.contains(&t)
    }

    pub fn index_of(&self, t: u8) -> Option<usize> {
        self.0.iter().position(|&v| v == t)
    }
}

impl Default for ThresholdSet {
    /// 70, 80, ..., 220.
    fn default() -> Self {
        let mut arr = [0u8; 16];
        for (i, v) in arr.iter_mut().enumerate() {
            *v = 70 + 10 * i as u8;
        }
        Self(arr)
    }
}

impl TryFrom<Vec<u8>> for ThresholdSet {
    type Error = Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<ThresholdSet> for Vec<u8> {
    fn from(t: ThresholdSet) -> Self {
        t.0.to_vec()
    }
}

/// Carbide where intensity strictly exceeds `t`.
pub fn threshold_mask(img: &GrayImage, t: u8) -> BinaryMask {
    let data = img.data().iter().map(|&v| u8::from(v > t)).collect();
    BinaryMask::new(img.width(), img.height(), data).expect("image dims are valid")
}

pub fn candidate_masks(img: &GrayImage, ts: &ThresholdSet) -> Vec<BinaryMask> {
    ts.values().iter().map(|&t| threshold_mask(img, t)).collect()
}

/// Relabels every carbide component smaller than `min_area` pixels as iron.
pub fn denoise(mask: &BinaryMask, min_area: usize, connectivity: Connectivity) -> BinaryMask {
    let labels = label_components(mask, connectivity);
    let mut area = vec![0usize; labels.count + 1];
    for &l in &labels.labels {
        area[l as usize] += 1;
    }
    let data = labels
        .labels
        .iter()
        .map(|&l| u8::from(l != 0 && area[l as usize] >= min_area))
        .collect();
    BinaryMask::new(mask.width(), mask.height(), data).expect("same dims")
}

/// The curation mask for a threshold: strict threshold followed by the
/// 30-pixel, 8-connected noise rule.
pub fn curated_mask(img: &GrayImage, t: u8) -> BinaryMask {
    denoise(&threshold_mask(img, t), NOISE_MIN_AREA, Connectivity::Eight)
}
