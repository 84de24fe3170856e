//! Image- and class-level carbide statistics: fraction, orientation
//! alignment, aspect ratios and size distributions.

mod report;

pub use report::{emit_report, format_sig6, ReportFiles};

use serde::Serialize;

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::masking::{denoise, BinaryMask, NOISE_MIN_AREA};
use crate::morphology::{extract_features, CarbideFeature, Connectivity};

pub const ORIENTATION_BINS: usize = 18;
pub const BIN_WIDTH_DEG: f64 = 10.0;

/// Carbide pixel share of a mask.
pub fn carbide_fraction(mask: &BinaryMask) -> f64 {
    mask.carbide_count() as f64 / mask.data().len() as f64
}

/// Counts over 18 half-open 10° bins `[-90 + 10i, -80 + 10i)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OrientationHistogram {
    pub counts: [u64; ORIENTATION_BINS],
}

impl OrientationHistogram {
    pub fn bin_edges() -> [f64; ORIENTATION_BINS + 1] {
        std::array::from_fn(|i| -90.0 + BIN_WIDTH_DEG * i as f64)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&self, other: &OrientationHistogram) -> OrientationHistogram {
        OrientationHistogram {
            counts: std::array::from_fn(|i| self.counts[i] + other.counts[i]),
        }
    }
}

pub fn orientation_bin(angle_deg: f64) -> Result<usize> {
    if !(-90.0..90.0).contains(&angle_deg) {
        return Err(Error::Invalid(format!(
            "orientation {angle_deg} is outside [-90, 90)"
        )));
    }
    let i = ((angle_deg + 90.0) / BIN_WIDTH_DEG).floor() as usize;
    Ok(i.min(ORIENTATION_BINS - 1))
}

pub fn bin_orientations(angles: &[f64]) -> Result<OrientationHistogram> {
    let mut h = OrientationHistogram::default();
    for &a in angles {
        h.counts[orientation_bin(a)?] += 1;
    }
    Ok(h)
}

/// Share of carbides in the fullest bin; `None` without carbides.
pub fn alignment_factor(h: &OrientationHistogram) -> Option<f64> {
    let total = h.total();
    if total == 0 {
        return None;
    }
    let max = *h.counts.iter().max().expect("18 bins");
    Some(max as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageStats {
    pub image_id: String,
    pub class_label: ClassLabel,
    pub carbide_fraction: f64,
    pub n_carbides: usize,
    pub alignment_k: Option<f64>,
    pub mean_aspect: Option<f64>,
    pub histogram: OrientationHistogram,
}

/// Statistics and per-carbide geometry of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnalysis {
    pub stats: ImageStats,
    pub features: Vec<CarbideFeature>,
}

/// Denoises `mask`, then measures its fraction and every carbide on it.
pub fn analyze_image(
    image_id: &str,
    class_label: ClassLabel,
    mask: &BinaryMask,
    nm_per_px: Option<f64>,
) -> Result<ImageAnalysis> {
    let clean = denoise(mask, NOISE_MIN_AREA, Connectivity::Eight);
    let features = extract_features(&clean, nm_per_px);
    let angles: Vec<f64> = features.iter().map(|f| f.angle_deg).collect();
    let histogram = bin_orientations(&angles)?;
    let aspects: Vec<f64> = features.iter().map(|f| f.aspect_ratio).collect();
    Ok(ImageAnalysis {
        stats: ImageStats {
            image_id: image_id.to_string(),
            class_label,
            carbide_fraction: carbide_fraction(&clean),
            n_carbides: features.len(),
            alignment_k: alignment_factor(&histogram),
            mean_aspect: mean_std(&aspects).map(|m| m.mean),
            histogram,
        },
        features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population form (divides by N).
    pub std: f64,
}

/// Mean and population standard deviation, summed in sorted order so the
/// result does not depend on input order.
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    Some(MeanStd {
        mean,
        std: (dev.iter().sum::<f64>() / n).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaUnit {
    Px,
    Nm2,
}

impl AreaUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            AreaUnit::Px => "px",
            AreaUnit::Nm2 => "nm2",
        }
    }
}

/// Area counts per `[i·w, (i+1)·w)` bin. Areas are in nm² when every
/// feature has a physical scale, otherwise in pixels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeHistogram {
    pub bin_width: f64,
    pub unit: AreaUnit,
    pub counts: Vec<u64>,
}

impl SizeHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn size_distribution(features: &[CarbideFeature], bin_width: f64) -> Result<SizeHistogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Invalid(format!("size bin width must be positive, got {bin_width}")));
    }
    let physical = !features.is_empty() && features.iter().all(|f| f.area_nm2.is_some());
    let unit = if physical { AreaUnit::Nm2 } else { AreaUnit::Px };
    let mut counts = Vec::new();
    for f in features {
        let a = if physical { f.area() } else { f.area_px as f64 };
        let i = (a / bin_width).floor() as usize;
        if counts.len() <= i {
            counts.resize(i + 1, 0);
        }
        counts[i] += 1;
    }
    Ok(SizeHistogram {
        bin_width,
        unit,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub class_label: ClassLabel,
    pub n_images: usize,
    pub n_carbides: usize,
    pub fraction: MeanStd,
    /// Over images that contain at least one carbide.
    pub k: Option<MeanStd>,
    /// Pooled over every carbide of the class.
    pub aspect: Option<MeanStd>,
    pub orientation: OrientationHistogram,
    pub sizes: SizeHistogram,
}

pub fn aggregate_class(images: &[ImageAnalysis], label: ClassLabel, size_bin_width: f64) -> Result<ClassSummary> {
    let mine: Vec<&ImageAnalysis> = images.iter().filter(|a| a.stats.class_label == label).collect();
    if mine.is_empty() {
        return Err(Error::Invalid(format!("no images labelled {label}")));
    }
    let fractions: Vec<f64> = mine.iter().map(|a| a.stats.carbide_fraction).collect();
    let ks: Vec<f64> = mine.iter().filter_map(|a| a.stats.alignment_k).collect();
    let features: Vec<CarbideFeature> = mine.iter().flat_map(|a| a.features.iter().cloned()).collect();
    let aspects: Vec<f64> = features.iter().map(|f| f.aspect_ratio).collect();
    let orientation = mine
        .iter()
        .fold(OrientationHistogram::default(), |acc, a| acc.merge(&a.stats.histogram));
    Ok(ClassSummary {
        class_label: label,
        n_images: mine.len(),
        n_carbides: features.len(),
        fraction: mean_std(&fractions).expect("at least one image"),
        k: mean_std(&ks),
        aspect: mean_std(&aspects),
        orientation,
        sizes: size_distribution(&features, size_bin_width)?,
    })
}
