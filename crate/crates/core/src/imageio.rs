//! Grayscale rasters: binary PGM codec, cropping, resizing and tile stitching.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

/// 8-bit grayscale raster, row-major, top row first. 0 is black, 255 white.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
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

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        decode_pgm(&bytes).map_err(|e| match e {
            Error::Pgm { offset, reason } => Error::Pgm {
                offset,
                reason: format!("{}: {reason}", path.display()),
            },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &encode_pgm(self))
    }
}

/// A rectangular sub-region, `x0`/`y0` being the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl CropRect {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Bilinear,
    Nearest,
}

/// Anything laid out as a row-major 8-bit plane. Implemented by [`GrayImage`]
/// and by binary masks so both can be cropped and stitched the same way.
pub trait Raster: Sized {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn pixels(&self) -> &[u8];
    fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self>;
}

impl Raster for GrayImage {
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
        GrayImage::new(width, height, pixels)
    }
}

// ---------------------------------------------------------------------------
// PGM

fn is_pnm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | b'\x0b' | b'\x0c')
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    /// Skips whitespace and `#` comments that run to end of line.
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if is_pnm_space(b) {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    /// Returns the parsed value and the offset where its digits start.
    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if start >= self.bytes.len() {
                Error::pgm(start, format!("header ends before {what}"))
            } else {
                Error::pgm(start, format!("expected decimal {what}"))
            });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse::<usize>()
            .map(|v| (v, start))
            .map_err(|_| Error::pgm(start, format!("{what} out of range")))
    }
}

/// Decodes a binary (P5) PGM with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 {
        return Err(Error::pgm(0, "file too short for magic number"));
    }
    if &bytes[..2] != b"P5" {
        return Err(Error::pgm(0, "magic number is not P5"));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    if cur.pos < bytes.len() && !is_pnm_space(bytes[cur.pos]) && bytes[cur.pos] != b'#' {
        return Err(Error::pgm(cur.pos, "expected whitespace after magic number"));
    }
    let (width, _) = cur.number("width")?;
    let (height, _) = cur.number("height")?;
    let (maxval, maxval_at) = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::pgm(maxval_at, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(Error::pgm(
            maxval_at,
            format!("maxval {maxval} unsupported; only 255 is accepted"),
        ));
    }
    match bytes.get(cur.pos) {
        Some(&b) if is_pnm_space(b) => cur.pos += 1,
        Some(_) => return Err(Error::pgm(cur.pos, "expected single whitespace before raster")),
        None => return Err(Error::pgm(cur.pos, "truncated raster: header ends at maxval")),
    }
    let start = cur.pos;
    let need = width
        .checked_mul(height)
        .ok_or_else(|| Error::pgm(start, "image dimensions overflow"))?;
    let have = bytes.len() - start;
    if have < need {
        return Err(Error::pgm(
            bytes.len(),
            format!("truncated raster: expected {need} bytes, found {have}"),
        ));
    }
    GrayImage::new(width, height, bytes[start..start + need].to_vec())
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.data);
    out
}

// ---------------------------------------------------------------------------
// Geometry

pub fn crop<R: Raster>(img: &R, r: CropRect) -> Result<R> {
    if r.w == 0 || r.h == 0 {
        return Err(Error::Invalid(format!("empty crop rectangle {r:?}")));
    }
    if r.x0 + r.w > img.width() || r.y0 + r.h > img.height() {
        return Err(Error::Invalid(format!(
            "crop rectangle {r:?} exceeds {}x{} raster",
            img.width(),
            img.height()
        )));
    }
    let src = img.pixels();
    let mut out = Vec::with_capacity(r.w * r.h);
    for y in r.y0..r.y0 + r.h {
        let row = y * img.width();
        out.extend_from_slice(&src[row + r.x0..row + r.x0 + r.w]);
    }
    R::from_pixels(r.w, r.h, out)
}

/// Round-half-up to the nearest intensity, saturating to [0, 255].
pub(crate) fn round_intensity(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Edge-aligned source coordinate for bilinear sampling.
fn edge_aligned(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    if dst_len > 1 {
        (dst * (src_len - 1)) as f64 / (dst_len - 1) as f64
    } else {
        0.0
    }
}

/// Nearest source index by pixel centers; exact ties go to the smaller index.
///
/// The source center is `(2d + 1) * src / (2 * dst) - 1/2`; the index is
/// `ceil(center - 1/2)`, evaluated in integers.
fn nearest_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    let num = (2 * dst as i64 + 1) * src_len as i64 - 2 * dst_len as i64;
    let den = 2 * dst_len as i64;
    let idx = num.div_euclid(den) + i64::from(num.rem_euclid(den) != 0);
    idx.clamp(0, src_len as i64 - 1) as usize
}

pub fn resize<R: Raster>(img: &R, w: usize, h: usize, mode: ResizeMode) -> Result<R> {
    if w == 0 || h == 0 {
        return Err(Error::Invalid(format!("resize target {w}x{h} must be positive")));
    }
    let (sw, sh) = (img.width(), img.height());
    let src = img.pixels();
    let mut out = Vec::with_capacity(w * h);
    match mode {
        ResizeMode::Nearest => {
            let xs: Vec<usize> = (0..w).map(|x| nearest_index(x, sw, w)).collect();
            for y in 0..h {
                let row = nearest_index(y, sh, h) * sw;
                out.extend(xs.iter().map(|&sx| src[row + sx]));
            }
        }
        ResizeMode::Bilinear => {
            let taps = |d: usize, s: usize, n: usize| {
                let c = edge_aligned(d, s, n);
                let i0 = (c.floor() as usize).min(s - 1);
                let i1 = (i0 + 1).min(s - 1);
                (i0, i1, c - i0 as f64)
            };
            let xs: Vec<_> = (0..w).map(|x| taps(x, sw, w)).collect();
            for y in 0..h {
                let (y0, y1, fy) = taps(y, sh, h);
                for &(x0, x1, fx) in &xs {
                    let p = |xx: usize, yy: usize| f64::from(src[yy * sw + xx]);
                    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                    out.push(round_intensity(top * (1.0 - fy) + bottom * fy));
                }
            }
        }
    }
    R::from_pixels(w, h, out)
}

/// Lays `tiles` (row-major, `rows` x `cols`) out as one raster.
///
/// Every tile in a grid row must share a height and every tile in a grid
/// column must share a width.
pub fn stitch_tiles<R: Raster>(tiles: &[R], cols: usize, rows: usize) -> Result<R> {
    if cols == 0 || rows == 0 {
        return Err(Error::Invalid("tile grid must have at least one row and column".into()));
    }
    if tiles.len() != cols * rows {
        return Err(Error::Dimension(format!(
            "{cols}x{rows} grid needs {} tiles, got {}",
            cols * rows,
            tiles.len()
        )));
    }
    let col_w: Vec<usize> = (0..cols).map(|c| tiles[c].width()).collect();
    let row_h: Vec<usize> = (0..rows).map(|r| tiles[r * cols].height()).collect();
    for r in 0..rows {
        for c in 0..cols {
            let t = &tiles[r * cols + c];
            if t.height() != row_h[r] {
                return Err(Error::Dimension(format!(
                    "tile ({c},{r}) has height {}, row {r} expects {}",
                    t.height(),
                    row_h[r]
                )));
            }
            if t.width() != col_w[c] {
                return Err(Error::Dimension(format!(
                    "tile ({c},{r}) has width {}, column {c} expects {}",
                    t.width(),
                    col_w[c]
                )));
            }
        }
    }
    let width: usize = col_w.iter().sum();
    let height: usize = row_h.iter().sum();
    let mut out = Vec::with_capacity(width * height);
    for r in 0..rows {
        for y in 0..row_h[r] {
            for c in 0..cols {
                let t = &tiles[r * cols + c];
                out.extend_from_slice(&t.pixels()[y * col_w[c]..(y + 1) * col_w[c]]);
            }
        }
    }
    R::from_pixels(width, height, out)
}

/// Crop rectangles covering a `width` x `height` raster with tiles of at most
/// `tile_w` x `tile_h`, row-major. Edge tiles take the remainder.
pub fn tile_rects(width: usize, height: usize, tile_w: usize, tile_h: usize) -> Result<(usize, usize, Vec<CropRect>)> {
    if tile_w == 0 || tile_h == 0 {
        return Err(Error::Invalid("tile size must be positive".into()));
    }
    let cols = width.div_ceil(tile_w);
    let rows = height.div_ceil(tile_h);
    let mut rects = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let x0 = c * tile_w;
            let y0 = r * tile_h;
            rects.push(CropRect::new(x0, y0, tile_w.min(width - x0), tile_h.min(height - y0)));
        }
    }
    Ok((cols, rows, rects))
}

/// On-disk description of a tile grid: tile paths are row-major and relative
/// to the grid file's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridManifest {
    pub cols: usize,
    pub rows: usize,
    pub tile_paths: Vec<String>,
}

impl GridManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let grid: GridManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        if grid.tile_paths.len() != grid.cols * grid.rows {
            return Err(Error::Dimension(format!(
                "grid {} declares {}x{} tiles but lists {}",
                path.display(),
                grid.cols,
                grid.rows,
                grid.tile_paths.len()
            )));
        }
        Ok(grid)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json("grid", e))?;
        text.push('\n');
        fsutil::write_atomic(path, text.as_bytes())
    }

    pub fn resolved_paths(&self, grid_path: &Path) -> Vec<PathBuf> {
        let base = grid_path.parent().unwrap_or(Path::new(""));
        self.tile_paths.iter().map(|p| base.join(p)).collect()
    }
}
