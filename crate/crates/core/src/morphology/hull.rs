use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub(crate) fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    pub(crate) fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub(crate) fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }
}

impl From<(usize, usize)> for Point2 {
    fn from(p: (usize, usize)) -> Self {
        Point2::new(p.0 as f64, p.1 as f64)
    }
}

/// Convex hull with collinear points dropped.
///
/// The result runs counter-clockwise as displayed (y down), starting from the
/// topmost-then-leftmost point. One distinct input point yields a single
/// point; a collinear input yields its two endpoints.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }

    // Monotone chain; keeping strictly positive turns in raw coordinates gives
    // a hull that is clockwise on screen, reversed below.
    let turn = |o: Point2, a: Point2, b: Point2| a.sub(o).cross(b.sub(o));
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() < 3 {
        // Every point was collinear: the chain collapsed onto the two ends.
        return vec![pts[0], pts[pts.len() - 1]];
    }
    hull.reverse();
    let start = hull
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    hull.rotate_left(start);
    hull
}
