use serde::{Deserialize, Serialize};

use super::components::{connected_components, Component, Connectivity};
use super::contour::trace_outer_contour;
use super::hull::{convex_hull, Point2};
use super::rect::{min_area_rect, RotatedRect};
use crate::masking::{BinaryMask, NOISE_MIN_AREA};

/// Geometry of one carbide precipitate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbideFeature {
    pub label: u32,
    pub area_px: usize,
    /// Present only when the physical pixel size is known.
    pub area_nm2: Option<f64>,
    pub angle_deg: f64,
    pub aspect_ratio: f64,
    pub rect: RotatedRect,
}

impl CarbideFeature {
    /// Area in nm² when known, otherwise in pixels.
    pub fn area(&self) -> f64 {
        self.area_nm2.unwrap_or(self.area_px as f64)
    }
}

/// Fits the minimum-area rectangle around a component's outer border.
pub fn component_rect(c: &Component) -> RotatedRect {
    let contour = trace_outer_contour(c);
    let points: Vec<Point2> = contour.points.iter().map(|&p| p.into()).collect();
    let hull = convex_hull(&points);
    min_area_rect(&hull).expect("contour is never empty")
}

pub fn feature_of(c: &Component, nm_per_px: Option<f64>) -> CarbideFeature {
    let rect = component_rect(c);
    CarbideFeature {
        label: c.label,
        area_px: c.area_px(),
        area_nm2: nm_per_px.map(|s| c.area_px() as f64 * s * s),
        angle_deg: rect.angle_deg,
        aspect_ratio: rect.aspect_ratio(),
        rect,
    }
}

/// Per-carbide geometry for every 8-connected component of at least
/// [`NOISE_MIN_AREA`] pixels, in label order.
pub fn extract_features(mask: &BinaryMask, nm_per_px: Option<f64>) -> Vec<CarbideFeature> {
    connected_components(mask, Connectivity::Eight)
        .iter()
        .filter(|c| c.area_px() >= NOISE_MIN_AREA)
        .map(|c| feature_of(c, nm_per_px))
        .collect()
}
