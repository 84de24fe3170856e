//! Per-carbide geometry: connected components, border following, convex
//! hulls and minimum-area rotated rectangles.

mod components;
mod contour;
mod features;
mod hull;
mod rect;

pub use components::{connected_components, label_components, Component, Connectivity, LabelMap};
pub use contour::{trace_borders, trace_outer_contour, ComponentBorders, Contour};
pub use features::{component_rect, extract_features, feature_of, CarbideFeature};
pub use hull::{convex_hull, Point2};
pub use rect::{min_area_rect, normalize_angle, orientation_angle, RotatedRect, MIN_EDGE};
