//! Pixelwise agreement between a predicted and a reference mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::GrayImage;
use crate::masking::BinaryMask;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Pixel-weighted pooling across images.
    pub fn merge(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

fn check_dims(pred: &BinaryMask, truth: &BinaryMask) -> Result<()> {
    if !pred.same_dims(truth) {
        return Err(Error::Dimension(format!(
            "prediction is {}x{}, truth is {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    Ok(())
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    check_dims(pred, truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn pixel_accuracy(c: &ConfusionCounts) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Invalid("pixel accuracy of an empty mask".into()));
    }
    Ok((c.tp + c.tn) as f64 / total as f64)
}

/// TP / (TP + FP + FN); 1.0 when neither mask has any carbide.
pub fn iou(c: &ConfusionCounts) -> f64 {
    let union = c.tp + c.fp + c.fn_;
    if union == 0 {
        1.0
    } else {
        c.tp as f64 / union as f64
    }
}

/// Four-way error class of one pixel. The discriminant is the palette index
/// written to overlay rasters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum OverlayClass {
    /// Iron in both; pink.
    TrueNegative = 0,
    /// Carbide in both; yellow.
    TruePositive = 1,
    /// Missed carbide; green.
    FalseNegative = 2,
    /// Spurious carbide; red.
    FalsePositive = 3,
}

impl OverlayClass {
    pub const ALL: [OverlayClass; 4] = [
        OverlayClass::TrueNegative,
        OverlayClass::TruePositive,
        OverlayClass::FalseNegative,
        OverlayClass::FalsePositive,
    ];

    pub fn rgb(self) -> [u8; 3] {
        match self {
            OverlayClass::TrueNegative => [255, 182, 193],
            OverlayClass::TruePositive => [255, 221, 0],
            OverlayClass::FalseNegative => [0, 170, 0],
            OverlayClass::FalsePositive => [220, 0, 0],
        }
    }

    pub fn color_name(self) -> &'static str {
        match self {
            OverlayClass::TrueNegative => "pink",
            OverlayClass::TruePositive => "yellow",
            OverlayClass::FalseNegative => "green",
            OverlayClass::FalsePositive => "red",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            OverlayClass::TrueNegative => "TN",
            OverlayClass::TruePositive => "TP",
            OverlayClass::FalseNegative => "FN",
            OverlayClass::FalsePositive => "FP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlayImage {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<OverlayClass>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PaletteEntry {
    pub index: u8,
    pub class: &'static str,
    pub color: &'static str,
    pub rgb: [u8; 3],
}

impl OverlayImage {
    pub fn counts(&self) -> ConfusionCounts {
        let mut c = ConfusionCounts::default();
        for cls in &self.classes {
            match cls {
                OverlayClass::TruePositive => c.tp += 1,
                OverlayClass::FalsePositive => c.fp += 1,
                OverlayClass::FalseNegative => c.fn_ += 1,
                OverlayClass::TrueNegative => c.tn += 1,
            }
        }
        c
    }

    /// Palette indices as a grayscale raster (values 0..=3).
    pub fn index_map(&self) -> GrayImage {
        let data = self.classes.iter().map(|&c| c as u8).collect();
        GrayImage::new(self.width, self.height, data).expect("overlay dims are valid")
    }

    /// Binary PPM (P6) rendering with the palette colors.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for c in &self.classes {
            out.extend_from_slice(&c.rgb());
        }
        out
    }

    pub fn palette() -> Vec<PaletteEntry> {
        OverlayClass::ALL
            .iter()
            .map(|&c| PaletteEntry {
                index: c as u8,
                class: c.short_name(),
                color: c.color_name(),
                rgb: c.rgb(),
            })
            .collect()
    }
}

pub fn overlay(pred: &BinaryMask, truth: &BinaryMask) -> Result<OverlayImage> {
    check_dims(pred, truth)?;
    let classes = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(&p, &t)| match (p != 0, t != 0) {
            (true, true) => OverlayClass::TruePositive,
            (true, false) => OverlayClass::FalsePositive,
            (false, true) => OverlayClass::FalseNegative,
            (false, false) => OverlayClass::TrueNegative,
        })
        .collect();
    Ok(OverlayImage {
        width: pred.width(),
        height: pred.height(),
        classes,
    })
}
