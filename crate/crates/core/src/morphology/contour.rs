//! Border following on a single component.
//!
//! Orientation conventions here use the image as displayed: x to the right,
//! y downward. "Counter-clockwise" means counter-clockwise on screen, so an
//! outer border starting at its top-left pixel first walks down the left side.

use super::components::Component;

/// Closed border walk; the last point is adjacent to the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<(usize, usize)>,
}

impl Contour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Outer border plus the borders of any holes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentBorders {
    pub outer: Contour,
    pub holes: Vec<Contour>,
}

/// Neighbor offsets in counter-clockwise screen order, starting east.
const DIRS: [(i64, i64); 8] = [
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

const EAST: usize = 0;
const WEST: usize = 4;

/// Component membership on a bounding-box grid padded by one pixel.
struct Grid {
    x0: i64,
    y0: i64,
    w: i64,
    h: i64,
    cells: Vec<bool>,
}

impl Grid {
    fn new(c: &Component) -> Self {
        let (min_x, min_y, max_x, max_y) = c.bounds();
        let x0 = min_x as i64 - 1;
        let y0 = min_y as i64 - 1;
        let w = (max_x - min_x) as i64 + 3;
        let h = (max_y - min_y) as i64 + 3;
        let mut cells = vec![false; (w * h) as usize];
        for &(x, y) in &c.pixels {
            cells[((y as i64 - y0) * w + (x as i64 - x0)) as usize] = true;
        }
        Self { x0, y0, w, h, cells }
    }

    fn at(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.w && y < self.h && self.cells[(y * self.w + x) as usize]
    }

    fn to_image(&self, p: (i64, i64)) -> (usize, usize) {
        ((p.0 + self.x0) as usize, (p.1 + self.y0) as usize)
    }
}

fn dir_index(from: (i64, i64), to: (i64, i64)) -> usize {
    let d = (to.0 - from.0, to.1 - from.1);
    DIRS.iter().position(|&o| o == d).expect("points are 8-adjacent")
}

/// Follows one border starting at `start`, whose neighbor in direction
/// `background_dir` is a 0-pixel.
fn follow(grid: &Grid, start: (i64, i64), background_dir: usize) -> Vec<(i64, i64)> {
    let step = |p: (i64, i64), d: usize| (p.0 + DIRS[d].0, p.1 + DIRS[d].1);

    // Clockwise search from the background neighbor for the previous border pixel.
    let mut prev = None;
    for k in 0..8 {
        let d = (background_dir + 8 - k) % 8;
        let q = step(start, d);
        if grid.at(q.0, q.1) {
            prev = Some(q);
            break;
        }
    }
    let Some(p1) = prev else {
        return vec![start];
    };

    let mut out = vec![start];
    let (mut p2, mut p3) = (p1, start);
    loop {
        // Counter-clockwise search around p3, starting just after p2.
        let from = dir_index(p3, p2);
        let mut p4 = p2;
        for k in 1..=8 {
            let q = step(p3, (from + k) % 8);
            if grid.at(q.0, q.1) {
                p4 = q;
                break;
            }
        }
        if p4 == start && p3 == p1 {
            break;
        }
        out.push(p4);
        p2 = p3;
        p3 = p4;
    }
    out
}

/// Outer border of `c`, starting at its topmost-then-leftmost pixel and
/// running counter-clockwise.
pub fn trace_outer_contour(c: &Component) -> Contour {
    assert!(!c.pixels.is_empty(), "cannot trace an empty component");
    let grid = Grid::new(c);
    // Pixels are stored in raster order, so the first one is top-left.
    let (sx, sy) = c.pixels[0];
    let start = (sx as i64 - grid.x0, sy as i64 - grid.y0);
    let pts = follow(&grid, start, WEST);
    Contour {
        points: pts.into_iter().map(|p| grid.to_image(p)).collect(),
    }
}

/// Outer border plus one border per hole. A hole is a 4-connected region of
/// background pixels that cannot reach the outside of the component.
pub fn trace_borders(c: &Component) -> ComponentBorders {
    let outer = trace_outer_contour(c);
    let grid = Grid::new(c);
    let (w, h) = (grid.w, grid.h);

    // Flood the outside background from the padded frame.
    let mut outside = vec![false; (w * h) as usize];
    let mut stack = vec![(0i64, 0i64)];
    outside[0] = true;
    while let Some((x, y)) = stack.pop() {
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                continue;
            }
            let i = (ny * w + nx) as usize;
            if !outside[i] && !grid.cells[i] {
                outside[i] = true;
                stack.push((nx, ny));
            }
        }
    }

    let mut holes = Vec::new();
    let mut claimed = outside;
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if grid.cells[i] || claimed[i] {
                continue;
            }
            // Top-left pixel of a new hole; its west neighbor is a component pixel.
            let mut stack = vec![(x, y)];
            claimed[i] = true;
            while let Some((hx, hy)) = stack.pop() {
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let (nx, ny) = (hx + dx, hy + dy);
                    let j = (ny * w + nx) as usize;
                    if !grid.cells[j] && !claimed[j] {
                        claimed[j] = true;
                        stack.push((nx, ny));
                    }
                }
            }
            let pts = follow(&grid, (x - 1, y), EAST);
            holes.push(Contour {
                points: pts.into_iter().map(|p| grid.to_image(p)).collect(),
            });
        }
    }
    ComponentBorders { outer, holes }
}
