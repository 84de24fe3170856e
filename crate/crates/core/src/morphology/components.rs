use serde::{Deserialize, Serialize};

use crate::masking::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u8) -> Option<Self> {
        match n {
            4 => Some(Self::Four),
            8 => Some(Self::Eight),
            _ => None,
        }
    }
}

/// A maximal connected set of carbide pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// 1-based, in order of first encounter during a raster scan.
    pub label: u32,
    /// `(x, y)` coordinates in raster order.
    pub pixels: Vec<(usize, usize)>,
}

impl Component {
    pub fn area_px(&self) -> usize {
        self.pixels.len()
    }

    /// `(min_x, min_y, max_x, max_y)`, inclusive.
    pub fn bounds(&self) -> (usize, usize, usize, usize) {
        let mut b = (usize::MAX, usize::MAX, 0, 0);
        for &(x, y) in &self.pixels {
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
        }
        b
    }
}

/// Per-pixel component labels (0 = background) plus the component count.
#[derive(Debug, Clone)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // Keep the smaller provisional label as root.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labeling. Final labels follow first-encounter raster
/// order.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    let (w, h) = (mask.width(), mask.height());
    let data = mask.data();
    let mut prov = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if data[i] == 0 {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbors[n] = l;
                    n += 1;
                }
            };
            if x > 0 {
                push(prov[i - 1]);
            }
            if y > 0 {
                push(prov[i - w]);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        push(prov[i - w - 1]);
                    }
                    if x + 1 < w {
                        push(prov[i - w + 1]);
                    }
                }
            }
            if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                prov[i] = l;
            } else {
                let first = neighbors[0];
                prov[i] = first;
                for &other in &neighbors[1..n] {
                    union(&mut parent, first, other);
                }
            }
        }
    }

    let mut final_of_root = vec![0u32; parent.len()];
    let mut count = 0u32;
    let mut labels = vec![0u32; w * h];
    for (i, &p) in prov.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p) as usize;
        if final_of_root[root] == 0 {
            count += 1;
            final_of_root[root] = count;
        }
        labels[i] = final_of_root[root];
    }
    LabelMap {
        width: w,
        height: h,
        labels,
        count: count as usize,
    }
}

pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Component> {
    let map = label_components(mask, connectivity);
    let mut comps: Vec<Component> = (1..=map.count as u32)
        .map(|label| Component {
            label,
            pixels: Vec::new(),
        })
        .collect();
    for (i, &l) in map.labels.iter().enumerate() {
        if l != 0 {
            comps[l as usize - 1].pixels.push((i % map.width, i / map.width));
        }
    }
    comps
}
