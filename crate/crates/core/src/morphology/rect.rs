//! Minimum-area enclosing rectangle by rotating calipers.
//!
//! Angles are in degrees, measured from the rightward horizontal and positive
//! counter-clockwise as displayed (image y points down), normalized into
//! [-90, 90).

use serde::{Deserialize, Serialize};

use super::hull::{convex_hull, Point2};
use crate::error::{Error, Result};

/// Extents below this are raised to one pixel so aspect ratios stay finite.
pub const MIN_EDGE: f64 = 1.0;

const AREA_TIE_REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    pub center: Point2,
    pub long_edge: f64,
    pub short_edge: f64,
    /// Direction of the long edge.
    pub angle_deg: f64,
}

impl RotatedRect {
    pub fn area(&self) -> f64 {
        self.long_edge * self.short_edge
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.long_edge / self.short_edge
    }

    /// Unit vectors along the long and short edges, in image coordinates.
    pub fn axes(&self) -> (Point2, Point2) {
        let t = self.angle_deg.to_radians();
        let u = Point2::new(t.cos(), -t.sin());
        (u, Point2::new(-u.y, u.x))
    }

    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        let (u, v) = self.axes();
        let d = p.sub(self.center);
        d.dot(u).abs() <= self.long_edge / 2.0 + tol && d.dot(v).abs() <= self.short_edge / 2.0 + tol
    }
}

/// Maps any angle in degrees onto [-90, 90), identifying θ with θ ± 180.
pub fn normalize_angle(deg: f64) -> f64 {
    let mut a = deg.rem_euclid(180.0);
    if a >= 90.0 {
        a -= 180.0;
    }
    // Avoid handing out -0.0.
    a + 0.0
}

/// Screen angle of an image-space direction vector.
fn direction_angle(d: Point2) -> f64 {
    normalize_angle((-d.y).atan2(d.x).to_degrees())
}

fn prefer(a: f64, b: f64) -> bool {
    a.abs() < b.abs() || (a.abs() == b.abs() && a < b)
}

/// Builds the rectangle for a basis `u` (extent `eu`) and its normal `n`
/// (extent `en`), applying the one-pixel floor and the square tie rule.
fn finish(center: Point2, u: Point2, eu: f64, n: Point2, en: f64) -> RotatedRect {
    let (eu, en) = (eu.max(MIN_EDGE), en.max(MIN_EDGE));
    let (au, an) = (direction_angle(u), direction_angle(n));
    let angle = if eu > en {
        au
    } else if en > eu {
        an
    } else if prefer(au, an) {
        au
    } else {
        an
    };
    RotatedRect {
        center,
        long_edge: eu.max(en),
        short_edge: eu.min(en),
        angle_deg: angle,
    }
}

/// Minimum-area rectangle enclosing `points`.
///
/// Ties on area prefer the smaller |angle|, then the smaller angle. A single
/// point gives a 1x1 rectangle at angle 0; a segment of length `d` gives
/// `max(d, 1) x 1` along the segment.
pub fn min_area_rect(points: &[Point2]) -> Result<RotatedRect> {
    if points.is_empty() {
        return Err(Error::Invalid("min_area_rect needs at least one point".into()));
    }
    let hull = convex_hull(points);
    match hull.len() {
        1 => Ok(finish(hull[0], Point2::new(1.0, 0.0), 0.0, Point2::new(0.0, 1.0), 0.0)),
        2 => {
            let d = hull[1].sub(hull[0]);
            let len = d.dot(d).sqrt();
            let u = Point2::new(d.x / len, d.y / len);
            let center = Point2::new((hull[0].x + hull[1].x) / 2.0, (hull[0].y + hull[1].y) / 2.0);
            Ok(finish(center, u, len, Point2::new(-u.y, u.x), 0.0))
        }
        _ => Ok(rotating_calipers(&hull)),
    }
}

fn rotating_calipers(hull_ccw_screen: &[Point2]) -> RotatedRect {
    // Work in raw-coordinate counter-clockwise order so inward normals are
    // the left-hand perpendiculars.
    let hull: Vec<Point2> = hull_ccw_screen.iter().rev().copied().collect();
    let n = hull.len();
    let at = |i: usize| hull[i % n];

    let mut best: Option<(f64, RotatedRect)> = None;
    let (mut right, mut top, mut left) = (0usize, 0usize, 0usize);

    for i in 0..n {
        let e = at(i + 1).sub(at(i));
        let len = e.dot(e).sqrt();
        let u = Point2::new(e.x / len, e.y / len);
        let nrm = Point2::new(-u.y, u.x);

        if i == 0 {
            right = 1;
            while at(right + 1).dot(u) > at(right).dot(u) {
                right += 1;
            }
            top = right;
            while at(top + 1).dot(nrm) > at(top).dot(nrm) {
                top += 1;
            }
            left = top;
            while at(left + 1).dot(u) < at(left).dot(u) {
                left += 1;
            }
        } else {
            // Each caliper only ever advances as the edge direction turns.
            right = right.max(i + 1);
            while at(right + 1).dot(u) > at(right).dot(u) {
                right += 1;
            }
            top = top.max(right);
            while at(top + 1).dot(nrm) > at(top).dot(nrm) {
                top += 1;
            }
            left = left.max(top);
            while at(left + 1).dot(u) < at(left).dot(u) {
                left += 1;
            }
        }

        let (umin, umax) = (at(left).dot(u), at(right).dot(u));
        let (nmin, nmax) = (at(i).dot(nrm), at(top).dot(nrm));
        let (eu, en) = (umax - umin, nmax - nmin);
        let area = eu * en;
        let cu = (umin + umax) / 2.0;
        let cn = (nmin + nmax) / 2.0;
        let center = Point2::new(u.x * cu + nrm.x * cn, u.y * cu + nrm.y * cn);
        let rect = finish(center, u, eu, nrm, en);

        best = match best {
            None => Some((area, rect)),
            Some((ba, br)) => {
                let tie = (area - ba).abs() <= AREA_TIE_REL * ba.abs().max(area.abs());
                if (!tie && area < ba) || (tie && prefer(rect.angle_deg, br.angle_deg)) {
                    Some((area.min(ba), rect))
                } else {
                    Some((ba, br))
                }
            }
        };
    }
    best.expect("hull has at least three vertices").1
}

/// Orientation of the principal (long) axis, in [-90, 90).
pub fn orientation_angle(r: &RotatedRect) -> f64 {
    normalize_angle(r.angle_deg)
}
